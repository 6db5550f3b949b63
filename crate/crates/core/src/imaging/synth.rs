//! Seeded synthetic test imagery: KYC-style document captures and step edges.
//!
//! Documents are tinted paper under smooth uneven lighting, a photo box, a
//! ruled border and rows of dark block-glyph "text". They contain no sensor
//! noise, so their histogram is bimodal with a broad background mode.

use super::Image;
use crate::rng::SplitMix64;

/// Reference capture size for a 2 MP camera.
pub const CAPTURE_WIDTH: u32 = 1600;
pub const CAPTURE_HEIGHT: u32 = 1200;

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<[u8; 3]>,
}

impl Canvas {
    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, color: [u8; 3]) {
        for y in y0.min(self.h)..y1.min(self.h) {
            for x in x0.min(self.w)..x1.min(self.w) {
                self.rgb[y * self.w + x] = color;
            }
        }
    }
}

/// One RGB document image of the given size.
pub fn document(seed: u64, width: u32, height: u32) -> Image {
    let mut rng = SplitMix64::new(seed);
    let (w, h) = (width as usize, height as usize);
    let paper = [
        226 + rng.below(24) as u8,
        220 + rng.below(24) as u8,
        196 + rng.below(30) as u8,
    ];
    let mut canvas = Canvas {
        w,
        h,
        rgb: vec![paper; w * h],
    };
    let scale = |v: usize, of: usize, num: usize| v * num / of.max(1);

    // Ruled border.
    let ink_line = [70, 70, 90];
    let m = scale(40, 1600, w).max(1);
    let t = scale(3, 1600, w).max(1);
    canvas.fill_rect(m, m, w - m, m + t, ink_line);
    canvas.fill_rect(m, h - m - t, w - m, h - m, ink_line);
    canvas.fill_rect(m, m, m + t, h - m, ink_line);
    canvas.fill_rect(w - m - t, m, w - m, h - m, ink_line);

    // Title band.
    let band = [
        40 + rng.below(60) as u8,
        60 + rng.below(60) as u8,
        110 + rng.below(80) as u8,
    ];
    canvas.fill_rect(m + t, m + t, w - m - t, m + t + scale(90, 1200, h), band);

    // Photo box with a vertical shade.
    let (px0, py0) = (w - scale(420, 1600, w), scale(180, 1200, h));
    let (px1, py1) = (w - scale(120, 1600, w), scale(560, 1200, h));
    for y in py0..py1.min(h) {
        let shade = 90 + (70 * (y - py0) / (py1 - py0).max(1)) as u8;
        canvas.fill_rect(
            px0,
            y,
            px1,
            y + 1,
            [shade, shade.saturating_sub(10), shade.saturating_sub(25)],
        );
    }

    // Text rows.
    let line_h = scale(32, 1200, h).max(4);
    let glyph_h = line_h / 2;
    let stroke = scale(3, 1600, w).max(1);
    let mut y = scale(160, 1200, h);
    while y + line_h < h - m - t {
        let right = if y < py1 + line_h {
            px0 - scale(40, 1600, w)
        } else {
            w - m - t - scale(40, 1600, w)
        };
        let mut x = m + t + scale(40, 1600, w);
        while x < right {
            let letters = 2 + rng.below(8) as usize;
            let ink = [
                20 + rng.below(30) as u8,
                20 + rng.below(30) as u8,
                40 + rng.below(40) as u8,
            ];
            for _ in 0..letters {
                let gw = scale(11, 1600, w).max(3) + rng.below(4) as usize;
                if x + gw >= right {
                    break;
                }
                let strokes = 1 + rng.below(31);
                if strokes & 1 != 0 {
                    canvas.fill_rect(x, y, x + stroke, y + glyph_h, ink);
                }
                if strokes & 2 != 0 {
                    canvas.fill_rect(x + gw - stroke, y, x + gw, y + glyph_h, ink);
                }
                if strokes & 4 != 0 {
                    canvas.fill_rect(x, y, x + gw, y + stroke, ink);
                }
                if strokes & 8 != 0 {
                    canvas.fill_rect(x, y + glyph_h / 2, x + gw, y + glyph_h / 2 + stroke, ink);
                }
                if strokes & 16 != 0 {
                    canvas.fill_rect(x, y + glyph_h - stroke, x + gw, y + glyph_h, ink);
                }
                x += gw + stroke + 1;
            }
            x += scale(18, 1600, w).max(2) + rng.below(8) as usize;
        }
        y += line_h + rng.below(line_h as u64 / 3 + 1) as usize;
    }

    // Smooth, separable uneven lighting between 0.76 and 1.0.
    let phase_x = rng.next_f64() * std::f64::consts::TAU;
    let phase_y = rng.next_f64() * std::f64::consts::TAU;
    let freq_x = 0.5 + rng.next_f64();
    let freq_y = 0.5 + rng.next_f64();
    let lx: Vec<f64> = (0..w)
        .map(|x| 0.5 + 0.5 * (std::f64::consts::TAU * freq_x * x as f64 / w as f64 + phase_x).cos())
        .collect();
    let ly: Vec<f64> = (0..h)
        .map(|y| 0.5 + 0.5 * (std::f64::consts::TAU * freq_y * y as f64 / h as f64 + phase_y).cos())
        .collect();

    let mut samples = Vec::with_capacity(w * h * 3);
    for (yy, ly) in ly.iter().enumerate() {
        for (xx, lx) in lx.iter().enumerate() {
            let light = 0.76 + 0.12 * lx + 0.12 * ly;
            for c in canvas.rgb[yy * w + xx] {
                samples.push((c as f64 * light).round() as u8);
            }
        }
    }
    Image::rgb(width, height, samples).expect("generated to size")
}

/// `count` full-size document captures with seeds derived from `seed`.
pub fn document_corpus(seed: u64, count: usize) -> Vec<Image> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| document(rng.next_u64(), CAPTURE_WIDTH, CAPTURE_HEIGHT))
        .collect()
}

/// Straight step edge between `lo` and `hi` on a `size`×`size` gray image.
/// `orientation` 0 = vertical, 1 = horizontal, 2 = diagonal.
pub fn step_edge(size: u32, lo: u8, hi: u8, orientation: u8) -> Image {
    let s = size as i64;
    let samples = (0..s)
        .flat_map(|y| {
            (0..s).map(move |x| {
                let high = match orientation {
                    0 => x >= s / 2,
                    1 => y >= s / 2,
                    _ => x + y >= s,
                };
                if high {
                    hi
                } else {
                    lo
                }
            })
        })
        .collect();
    Image::gray(size, size, samples).expect("square")
}

/// The five step-edge images used for sharpening checks.
pub fn step_edge_set() -> Vec<Image> {
    vec![
        step_edge(32, 64, 192, 0),
        step_edge(32, 40, 200, 1),
        step_edge(24, 90, 150, 2),
        step_edge(16, 180, 60, 0),
        step_edge(8, 30, 120, 1),
    ]
}
