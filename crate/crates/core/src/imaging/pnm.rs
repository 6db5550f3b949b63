//! Binary PGM (P5) and PPM (P6) with maxval 255.

use super::{Channels, Image, ImagingError};

fn parse_err(offset: usize, reason: impl Into<String>) -> ImagingError {
    ImagingError::Parse {
        offset,
        reason: reason.into(),
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImagingError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

pub fn load_pnm(octets: &[u8]) -> Result<Image, ImagingError> {
    let channels = match octets.get(..2) {
        Some(b"P5") => Channels::Gray,
        Some(b"P6") => Channels::Rgb,
        _ => return Err(parse_err(0, "expected magic P5 or P6")),
    };
    let mut r = HeaderReader { bytes: octets, pos: 2 };
    if !r.bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(parse_err(2, "expected whitespace after magic"));
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = {
        r.skip_whitespace_and_comments();
        r.pos
    };
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("maxval {maxval} unsupported, need 255")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_at, "zero image dimension"));
    }
    match octets.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(parse_err(r.pos, "expected single whitespace before raster")),
    }
    let need = width as usize * height as usize * channels.count();
    let data = &octets[r.pos..];
    if data.len() < need {
        return Err(parse_err(
            octets.len(),
            format!("truncated raster: need {need} bytes, found {}", data.len()),
        ));
    }
    Image::new(width, height, channels, data[..need].to_vec())
}

pub fn save_pnm(img: &Image) -> Vec<u8> {
    let magic = match img.channels() {
        Channels::Gray => "P5",
        Channels::Rgb => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.samples());
    out
}
