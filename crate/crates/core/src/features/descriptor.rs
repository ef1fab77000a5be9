use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub const HIST_BINS: usize = 8;
pub const DESCRIPTOR_DIM: usize = 3 * HIST_BINS + 7 + 17;

/// Handcrafted per-instance descriptor: colour histograms, Hu moments and
/// shape/appearance statistics, all computed over mask pixels only.
pub type FeatureVector = Vec<f32>;

/// Descriptor of one instance. Coordinates are taken relative to the mask's
/// bounding box and out-of-mask neighbours are never read, so a translated
/// copy (fully inside the frame) gives the same bits.
pub fn extract_descriptor(image: &RgbImage, mask: &BinaryMask) -> Result<FeatureVector> {
    let (w, h) = mask.dims();
    if image.width() as usize != w || image.height() as usize != h {
        return Err(Error::ShapeMismatch {
            expected: (w, h),
            actual: (image.width() as usize, image.height() as usize),
        });
    }
    let Some((x0, y0, x1, y1)) = mask.bbox() else {
        return Err(Error::EmptyMask);
    };
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask.get(x as usize, y as usize)
    };
    let grey_at = |x: usize, y: usize| {
        let p = image.get_pixel(x as u32, y as u32).0;
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    };

    let mut hist = [0usize; 3 * HIST_BINS];
    let mut n = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut rgb_sum = [0.0; 3];
    let mut rgb_sq = [0.0; 3];
    let (mut g_sum, mut g_sq, mut grad_sum) = (0.0, 0.0, 0.0);
    let mut perimeter = 0usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if !mask.get(x, y) {
                continue;
            }
            n += 1;
            let (lx, ly) = ((x - x0) as f64, (y - y0) as f64);
            sx += lx;
            sy += ly;
            let p = image.get_pixel(x as u32, y as u32).0;
            for c in 0..3 {
                hist[c * HIST_BINS + p[c] as usize * HIST_BINS / 256] += 1;
                rgb_sum[c] += p[c] as f64;
                rgb_sq[c] += (p[c] as f64).powi(2);
            }
            let g = grey_at(x, y);
            g_sum += g;
            g_sq += g * g;
            let (xi, yi) = (x as i64, y as i64);
            let side = |dx: i64, dy: i64| {
                if inside(xi + dx, yi + dy) {
                    grey_at((xi + dx) as usize, (yi + dy) as usize)
                } else {
                    g
                }
            };
            let gx = 0.5 * (side(1, 0) - side(-1, 0));
            let gy = 0.5 * (side(0, 1) - side(0, -1));
            grad_sum += (gx * gx + gy * gy).sqrt();
            if !(inside(xi + 1, yi)
                && inside(xi - 1, yi)
                && inside(xi, yi + 1)
                && inside(xi, yi - 1))
            {
                perimeter += 1;
            }
        }
    }
    let nf = n as f64;
    let (cx, cy) = (sx / nf, sy / nf);

    // central moments up to order 3 about the centroid
    let mut mu = [[0.0f64; 4]; 4];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if !mask.get(x, y) {
                continue;
            }
            let (dx, dy) = ((x - x0) as f64 - cx, (y - y0) as f64 - cy);
            let px = [1.0, dx, dx * dx, dx * dx * dx];
            let py = [1.0, dy, dy * dy, dy * dy * dy];
            for p in 0..4 {
                for q in 0..4 - p {
                    mu[p][q] += px[p] * py[q];
                }
            }
        }
    }

    let mut out = Vec::with_capacity(DESCRIPTOR_DIM);
    out.extend(hist.iter().map(|&c| c as f64 / nf));
    out.extend(
        hu_moments(&mu)
            .iter()
            .map(|&h| h.signum() * (1.0 + h.abs() * 1e4).ln()),
    );

    let (cxx, cyy, cxy) = (mu[2][0] / nf, mu[0][2] / nf, mu[1][1] / nf);
    let tr = cxx + cyy;
    let disc = ((cxx - cyy).powi(2) + 4.0 * cxy * cxy).sqrt();
    let l1 = 0.5 * (tr + disc);
    let l2 = (0.5 * (tr - disc)).max(0.0);
    let (major, minor) = (l1.sqrt(), l2.sqrt());
    let mean_rgb = rgb_sum.map(|s| s / nf);
    let std_rgb = [0, 1, 2].map(|c| (rgb_sq[c] / nf - mean_rgb[c].powi(2)).max(0.0).sqrt());
    let g_mean = g_sum / nf;
    out.extend([
        nf.ln(),
        nf.sqrt(),
        perimeter as f64 / nf.sqrt(),
        major,
        minor,
        major / minor.max(0.5),
        if l1 > 0.0 {
            (1.0 - l2 / l1).max(0.0).sqrt()
        } else {
            0.0
        },
    ]);
    out.extend(mean_rgb.map(|v| v / 255.0));
    out.extend(std_rgb.map(|v| v / 255.0));
    out.extend([
        g_mean / 255.0,
        (g_sq / nf - g_mean * g_mean).max(0.0).sqrt() / 255.0,
        grad_sum / nf / 255.0,
        nf / (bw * bh) as f64,
    ]);
    debug_assert_eq!(out.len(), DESCRIPTOR_DIM);
    Ok(out.into_iter().map(|v| v as f32).collect())
}

/// The seven Hu invariants from central moments `mu[p][q]`.
fn hu_moments(mu: &[[f64; 4]; 4]) -> [f64; 7] {
    let m00 = mu[0][0];
    let eta = |p: usize, q: usize| mu[p][q] / m00.powf(1.0 + (p + q) as f64 / 2.0);
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let a = n30 + n12;
    let b = n21 + n03;
    [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        a * a + b * b,
        (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b)
            + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        (3.0 * n21 - n03) * a * (a * a - 3.0 * b * b)
            - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b),
    ]
}

/// Per-dimension z-scoring fitted on training descriptors only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::NotEnoughData("no descriptors to standardize".into()));
        };
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f32]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (v as f64 - m) / s)
            .collect()
    }
}
