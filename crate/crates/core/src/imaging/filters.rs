use super::{check_non_negative, Channels, EdgeMask, Image, ImagingError};

/// BT.601 luma, rounded half up: `(299 R + 587 G + 114 B + 500) / 1000`.
pub fn to_monochrome(img: &Image) -> Image {
    match img.channels() {
        Channels::Gray => img.clone(),
        Channels::Rgb => {
            let gray = img
                .samples()
                .chunks_exact(3)
                .map(|p| {
                    let y = 299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32;
                    ((y + 500) / 1000) as u8
                })
                .collect();
            Image::gray(img.width(), img.height(), gray).expect("dimensions preserved")
        }
    }
}

/// Per-pixel Sobel magnitude `sqrt(gx² + gy²)` with edge-replicated borders.
pub fn gradient_magnitude(img: &Image) -> Result<Vec<f64>, ImagingError> {
    img.require_gray()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let s = img.samples();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let up = &s[y.saturating_sub(1) * w..][..w];
        let mid = &s[y * w..][..w];
        let down = &s[(y + 1).min(h - 1) * w..][..w];
        for x in 0..w {
            let l = x.saturating_sub(1);
            let r = (x + 1).min(w - 1);
            let px = |row: &[u8], i: usize| row[i] as i32;
            let gx = (px(up, r) + 2 * px(mid, r) + px(down, r)) - (px(up, l) + 2 * px(mid, l) + px(down, l));
            let gy = (px(down, l) + 2 * px(down, x) + px(down, r)) - (px(up, l) + 2 * px(up, x) + px(up, r));
            out.push(((gx * gx + gy * gy) as f64).sqrt());
        }
    }
    Ok(out)
}

/// Marks pixels whose Sobel magnitude exceeds `mean + edge_k * stddev`
/// (population statistics over the whole image, strict comparison).
/// Images narrower or shorter than 3 pixels give an empty mask.
pub fn detect_boundary(img: &Image, edge_k: f64) -> Result<EdgeMask, ImagingError> {
    img.require_gray()?;
    check_non_negative("edge_k", edge_k)?;
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Ok(EdgeMask::empty(w, h));
    }
    let g = gradient_magnitude(img)?;
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let threshold = mean + edge_k * var.sqrt();
    EdgeMask::new(w, h, g.iter().map(|&v| v > threshold).collect())
}

/// Unsharp mask with the 3×3 binomial blur, applied only inside the
/// one-pixel dilation of `mask`; other pixels are copied.
pub fn sharpen_boundary(img: &Image, mask: &EdgeMask, alpha: f64) -> Result<Image, ImagingError> {
    img.require_gray()?;
    check_non_negative("sharpen_alpha", alpha)?;
    if mask.width() != img.width() || mask.height() != img.height() {
        return Err(ImagingError::DimensionMismatch(
            img.width(),
            img.height(),
            mask.width(),
            mask.height(),
        ));
    }
    if alpha == 0.0 {
        return Ok(img.clone());
    }
    let region = mask.dilate();
    let w = img.width() as usize;
    let mut out = img.samples().to_vec();
    for (i, _) in region.bits().iter().enumerate().filter(|(_, &b)| b) {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let mut acc = 0u32;
        for (dy, row_w) in [(-1i64, 1u32), (0, 2), (1, 1)] {
            for (dx, col_w) in [(-1i64, 1u32), (0, 2), (1, 1)] {
                acc += row_w * col_w * img.gray_clamped(x + dx, y + dy) as u32;
            }
        }
        let blur = acc as f64 / 16.0;
        let v = img.samples()[i] as f64;
        out[i] = (v + alpha * (v - blur)).round().clamp(0.0, 255.0) as u8;
    }
    Image::gray(img.width(), img.height(), out)
}
