//! FSQ1 container. All integers little-endian:
//!
//! ```text
//! "FSQ1" | version u8 = 1 | width u32 | height u32 | quality_milli u16
//!        | levels u16 | code lengths 256 × u8 | payload_bit_count u64 | payload
//! ```
//!
//! The payload is the canonical-Huffman coding of the run-length token stream
//! of the quantized samples, final partial byte zero-padded.

use super::{check_quality, huffman, quantize, rle, CompressedDoc, DecodeError, Image, ImagingError};

pub const FSQ1_MAGIC: &[u8; 4] = b"FSQ1";
pub const FSQ1_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 2 + 2 + 256 + 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fsq1Header {
    pub width: u32,
    pub height: u32,
    pub quality_milli: u16,
    pub levels: u16,
    pub code_lengths: [u8; 256],
    pub payload_bits: u64,
}

impl Fsq1Header {
    pub fn parse(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < 4 || &bytes[..4] != FSQ1_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        if bytes.len() < 5 {
            return Err(DecodeError::TruncatedHeader);
        }
        if bytes[4] != FSQ1_VERSION {
            return Err(DecodeError::UnsupportedVersion(bytes[4]));
        }
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::TruncatedHeader);
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = Self {
            width: u32_at(5),
            height: u32_at(9),
            quality_milli: u16_at(13),
            levels: u16_at(15),
            code_lengths: bytes[17..273].try_into().unwrap(),
            payload_bits: u64::from_le_bytes(bytes[273..281].try_into().unwrap()),
        };
        if header.width == 0 || header.height == 0 {
            return Err(DecodeError::InvalidHeader("zero dimension"));
        }
        if !(2..=256).contains(&header.levels) {
            return Err(DecodeError::InvalidHeader("levels outside 2..=256"));
        }
        if !(1..=1000).contains(&header.quality_milli) {
            return Err(DecodeError::InvalidHeader("quality outside (0, 1]"));
        }
        Ok(header)
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(FSQ1_MAGIC);
        out.push(FSQ1_VERSION);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.quality_milli.to_le_bytes());
        out.extend_from_slice(&self.levels.to_le_bytes());
        out.extend_from_slice(&self.code_lengths);
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
    }
}

pub fn encode_fsq1(img: &Image, quality: f64) -> Result<CompressedDoc, ImagingError> {
    img.require_gray()?;
    check_quality(quality)?;
    let quantized = quantize::quantize(img, quality)?;
    let tokens = rle::encode(quantized.samples());
    let mut freqs = [0u64; 256];
    for &t in &tokens {
        freqs[t as usize] += 1;
    }
    let code_lengths = huffman::code_lengths(&freqs);
    let (payload, payload_bits) = huffman::encode(&tokens, &code_lengths);
    let header = Fsq1Header {
        width: img.width(),
        height: img.height(),
        quality_milli: (quality * 1000.0).round() as u16,
        levels: quantize::levels_for_quality(quality)?,
        code_lengths,
        payload_bits,
    };
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
    header.write(&mut bytes);
    bytes.extend_from_slice(&payload);
    Ok(CompressedDoc::new(bytes, img.pixel_count() as u64, quality))
}

pub fn decode_fsq1(octets: &[u8]) -> Result<Image, DecodeError> {
    let header = Fsq1Header::parse(octets)?;
    huffman::validate_lengths(&header.code_lengths)?;
    let payload = &octets[HEADER_LEN..];
    let tokens = huffman::decode(payload, header.payload_bits, &header.code_lengths)?;
    if (payload.len() as u64) > header.payload_bits.div_ceil(8) {
        return Err(DecodeError::InvalidHeader("trailing bytes after payload"));
    }
    let pixels = header.width as u64 * header.height as u64;
    let pixels = usize::try_from(pixels).map_err(|_| DecodeError::InvalidHeader("image too large"))?;
    let samples = rle::decode(&tokens, pixels)?;
    Ok(Image::gray(header.width, header.height, samples).expect("sample count checked"))
}
