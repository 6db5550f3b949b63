use super::{check_quality, Image, ImagingError};

/// Number of gray levels kept at compression factor `quality`:
/// `max(2, round(256 * quality))`.
pub fn levels_for_quality(quality: f64) -> Result<u16, ImagingError> {
    check_quality(quality)?;
    Ok(((256.0 * quality).round() as u16).max(2))
}

/// Lookup table from sample value to reconstructed value for `levels` levels.
/// All rounding is half-up in exact integer arithmetic.
pub(crate) fn quantize_table(levels: u16) -> [u8; 256] {
    let steps = levels as u32 - 1;
    let mut table = [0u8; 256];
    for (p, slot) in table.iter_mut().enumerate() {
        // index = round(p * steps / 255), value = round(index * 255 / steps)
        let index = (2 * p as u32 * steps + 255) / 510;
        *slot = ((2 * index * 255 + steps) / (2 * steps)) as u8;
    }
    table
}

pub fn quantize(img: &Image, quality: f64) -> Result<Image, ImagingError> {
    img.require_gray()?;
    let levels = levels_for_quality(quality)?;
    if levels == 256 {
        return Ok(img.clone());
    }
    let table = quantize_table(levels);
    let samples = img.samples().iter().map(|&p| table[p as usize]).collect();
    Image::gray(img.width(), img.height(), samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_counts() {
        assert_eq!(levels_for_quality(1.0).unwrap(), 256);
        assert_eq!(levels_for_quality(0.6).unwrap(), 154);
        assert_eq!(levels_for_quality(0.001).unwrap(), 2);
        assert!(levels_for_quality(0.0).is_err());
        assert!(levels_for_quality(1.01).is_err());
    }

    #[test]
    fn quality_one_is_identity() {
        let img = Image::gray(16, 16, (0..=255).collect()).unwrap();
        assert_eq!(quantize(&img, 1.0).unwrap(), img);
        assert_eq!(quantize_table(256).to_vec(), (0..=255).collect::<Vec<u8>>());
    }

    #[test]
    fn endpoints_are_fixed_and_error_is_bounded() {
        for q in 1..=100 {
            let q = q as f64 / 100.0;
            let levels = levels_for_quality(q).unwrap();
            let t = quantize_table(levels);
            assert_eq!((t[0], t[255]), (0, 255));
            let bound = (255.0 / (2.0 * (levels as f64 - 1.0))).ceil() as i32 + 1;
            for (p, &v) in t.iter().enumerate() {
                assert!((v as i32 - p as i32).abs() <= bound, "q {q} p {p}");
            }
            // Idempotent: reconstructed values are fixed points.
            for p in 0..256 {
                assert_eq!(t[t[p] as usize], t[p]);
            }
        }
    }

    #[test]
    fn two_levels_binarize() {
        let t = quantize_table(2);
        assert_eq!((t[127], t[128]), (0, 255));
    }
}
