//! Document image enablement: monochrome conversion, boundary detection,
//! boundary sharpening and the FSQ1 lossy container.
//!
//! Every operation here is a pure function of its inputs.

mod filters;
mod fsq1;
mod huffman;
mod metrics;
mod pipeline;
mod pnm;
mod quantize;
mod rle;
pub mod synth;

pub use filters::{detect_boundary, gradient_magnitude, sharpen_boundary, to_monochrome};
pub use fsq1::{decode_fsq1, encode_fsq1, Fsq1Header, FSQ1_MAGIC, FSQ1_VERSION};
pub use metrics::psnr;
pub use pipeline::{process_document, process_document_with_report, StageReport};
pub use pnm::{load_pnm, save_pnm};
pub use quantize::{levels_for_quality, quantize};

use crate::hash::sha256_hex;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ImagingError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("PNM parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("expected a {expected}-channel image, got {actual}")]
    ChannelMismatch { expected: u8, actual: u8 },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Failure modes of [`decode_fsq1`].
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic: container does not start with \"FSQ1\"")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("container header truncated")]
    TruncatedHeader,
    #[error("invalid header field: {0}")]
    InvalidHeader(&'static str),
    #[error("inconsistent Huffman code-length table: {0}")]
    BadHuffmanTable(&'static str),
    #[error("payload overrun: need {needed} bits, container holds {available}")]
    PayloadOverrun { needed: u64, available: u64 },
    #[error("corrupt run-length stream: {0}")]
    BadRunLength(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channels {
    Gray = 1,
    Rgb = 3,
}

impl Channels {
    pub fn count(self) -> usize {
        self as usize
    }

    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::Gray),
            3 => Some(Self::Rgb),
            _ => None,
        }
    }
}

/// Row-major 8-bit raster with one or three interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: Channels,
    samples: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("samples", &format_args!("[{} bytes]", self.samples.len()))
            .finish()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, channels: Channels, samples: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidImage(format!("zero dimension {width}x{height}")));
        }
        let expected = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(channels.count()))
            .ok_or_else(|| ImagingError::InvalidImage("dimensions overflow".into()))?;
        if samples.len() != expected {
            return Err(ImagingError::InvalidImage(format!(
                "expected {expected} samples for {width}x{height}x{}, got {}",
                channels.count(),
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn gray(width: u32, height: u32, samples: Vec<u8>) -> Result<Self, ImagingError> {
        Self::new(width, height, Channels::Gray, samples)
    }

    pub fn rgb(width: u32, height: u32, samples: Vec<u8>) -> Result<Self, ImagingError> {
        Self::new(width, height, Channels::Rgb, samples)
    }

    /// A single-channel image filled with `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImagingError> {
        Self::gray(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Gray sample at `(x, y)` with coordinates clamped into the image (edge replication).
    pub(crate) fn gray_clamped(&self, x: i64, y: i64) -> u8 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.samples[y * self.width as usize + x]
    }

    pub(crate) fn require_gray(&self) -> Result<(), ImagingError> {
        match self.channels {
            Channels::Gray => Ok(()),
            Channels::Rgb => Err(ImagingError::ChannelMismatch { expected: 1, actual: 3 }),
        }
    }
}

/// Boundary pixels found by [`detect_boundary`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl EdgeMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, ImagingError> {
        if bits.len() != width as usize * height as usize {
            return Err(ImagingError::InvalidImage(format!(
                "mask of {} bits for {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 8-neighbourhood dilation by one pixel.
    pub fn dilate(&self) -> Self {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![false; self.bits.len()];
        for y in 0..h {
            for x in 0..w {
                if !self.bits[(y * w + x) as usize] {
                    continue;
                }
                for ny in (y - 1).max(0)..=(y + 1).min(h - 1) {
                    for nx in (x - 1).max(0)..=(x + 1).min(w - 1) {
                        out[(ny * w + nx) as usize] = true;
                    }
                }
            }
        }
        Self {
            width: self.width,
            height: self.height,
            bits: out,
        }
    }
}

/// Tuning for [`process_document`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Compression factor in `(0, 1]`; 1.0 disables quantization.
    pub quality: f64,
    /// Edge threshold in standard deviations above the mean gradient.
    pub edge_k: f64,
    /// Unsharp-mask gain on boundary pixels.
    pub sharpen_alpha: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            quality: 0.6,
            edge_k: 1.0,
            sharpen_alpha: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        check_quality(self.quality)?;
        check_non_negative("edge_k", self.edge_k)?;
        check_non_negative("sharpen_alpha", self.sharpen_alpha)
    }
}

pub(crate) fn check_quality(q: f64) -> Result<(), ImagingError> {
    if q.is_finite() && q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(ImagingError::InvalidParameter {
            name: "quality",
            value: q,
        })
    }
}

pub(crate) fn check_non_negative(name: &'static str, v: f64) -> Result<(), ImagingError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ImagingError::InvalidParameter { name, value: v })
    }
}

/// An FSQ1 container plus the metadata the queue and records need.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedDoc {
    bytes: Vec<u8>,
    digest: String,
    pub original_pixels: u64,
    pub quality: f64,
}

impl CompressedDoc {
    pub(crate) fn new(bytes: Vec<u8>, original_pixels: u64, quality: f64) -> Self {
        let digest = sha256_hex(&bytes);
        Self {
            bytes,
            digest,
            original_pixels,
            quality,
        }
    }

    /// Wrap container bytes read back from disk. Only the header is checked.
    pub fn from_container(bytes: Vec<u8>) -> Result<Self, DecodeError> {
        let header = Fsq1Header::parse(&bytes)?;
        let pixels = header.width as u64 * header.height as u64;
        let quality = header.quality_milli as f64 / 1000.0;
        Ok(Self::new(bytes, pixels, quality))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Lowercase hex SHA-256 of [`Self::bytes`].
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_invariants() {
        assert!(Image::gray(2, 2, vec![0; 4]).is_ok());
        assert!(Image::gray(2, 2, vec![0; 3]).is_err());
        assert!(Image::rgb(2, 2, vec![0; 4]).is_err());
        assert!(Image::gray(0, 2, vec![]).is_err());
    }

    #[test]
    fn dilation_reaches_eight_neighbours() {
        let mut bits = vec![false; 25];
        bits[12] = true;
        let d = EdgeMask::new(5, 5, bits).unwrap().dilate();
        assert_eq!(d.count(), 9);
        assert!(d.get(1, 1) && d.get(3, 3) && !d.get(0, 0) && !d.get(4, 2));
    }

    #[test]
    fn config_ranges() {
        assert!(PipelineConfig::default().validate().is_ok());
        for q in [0.0, -0.1, 1.5, f64::NAN] {
            let c = PipelineConfig {
                quality: q,
                ..Default::default()
            };
            assert!(c.validate().is_err(), "{q}");
        }
        let c = PipelineConfig {
            edge_k: f64::INFINITY,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            sharpen_alpha: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn compressed_doc_digest_matches_bytes() {
        let img = Image::filled(4, 4, 9).unwrap();
        let doc = encode_fsq1(&img, 0.6).unwrap();
        assert_eq!(doc.digest(), sha256_hex(doc.bytes()));
        assert!(doc.bytes().starts_with(b"FSQ1"));
        let again = CompressedDoc::from_container(doc.bytes().to_vec()).unwrap();
        assert_eq!(again.digest(), doc.digest());
        assert_eq!(again.original_pixels, 16);
    }
}
