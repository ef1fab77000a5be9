use std::str::FromStr;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::FlowField;

pub const BLOCK_SIZE: usize = 16;
pub const SEARCH_RADIUS: i64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    /// Pass through the simulator's exact flow.
    Gt,
    /// Exhaustive block matching on sum of absolute differences.
    BlockMatch,
}

impl FromStr for FlowMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(FlowMethod::Gt),
            "block_match" | "block-match" => Ok(FlowMethod::BlockMatch),
            other => Err(Error::config(format!("unsupported flow method `{other}`"))),
        }
    }
}

/// Optical flow from `frame_t` to `frame_t1`.
///
/// `Gt` returns `gt` unchanged and errors without it; `BlockMatch` assigns
/// every 16x16 block the integer displacement (radius 8) minimising the RGB
/// sum of absolute differences, ties going to the smallest displacement.
pub fn estimate_flow(
    frame_t: &RgbImage,
    frame_t1: &RgbImage,
    method: FlowMethod,
    gt: Option<&FlowField>,
) -> Result<FlowField> {
    if frame_t.dimensions() != frame_t1.dimensions() {
        let (a, b) = (frame_t.dimensions(), frame_t1.dimensions());
        return Err(Error::ShapeMismatch {
            expected: (a.0 as usize, a.1 as usize),
            actual: (b.0 as usize, b.1 as usize),
        });
    }
    match method {
        FlowMethod::Gt => {
            let flow =
                gt.ok_or_else(|| Error::config("gt flow method needs the simulator flow"))?;
            flow.check_dims(frame_t.width() as usize, frame_t.height() as usize)?;
            Ok(flow.clone())
        }
        FlowMethod::BlockMatch => Ok(block_match(frame_t, frame_t1)),
    }
}

/// Candidate displacements ordered by length, then row, then column, so the
/// first minimum found is the tie-break winner.
fn search_order() -> Vec<(i64, i64)> {
    let mut d: Vec<(i64, i64)> = (-SEARCH_RADIUS..=SEARCH_RADIUS)
        .flat_map(|dy| (-SEARCH_RADIUS..=SEARCH_RADIUS).map(move |dx| (dx, dy)))
        .collect();
    d.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    d
}

fn block_match(frame_t: &RgbImage, frame_t1: &RgbImage) -> FlowField {
    let (w, h) = (frame_t.width() as usize, frame_t.height() as usize);
    let a: Vec<i16> = frame_t.as_raw().iter().map(|&v| v as i16).collect();
    let b: Vec<i16> = frame_t1.as_raw().iter().map(|&v| v as i16).collect();
    let order = search_order();
    let (nbx, nby) = (w.div_ceil(BLOCK_SIZE), h.div_ceil(BLOCK_SIZE));

    let block_flows: Vec<(i64, i64)> = (0..nbx * nby)
        .into_par_iter()
        .map(|blk| {
            let (x0, y0) = ((blk % nbx) * BLOCK_SIZE, (blk / nbx) * BLOCK_SIZE);
            let (x1, y1) = ((x0 + BLOCK_SIZE).min(w), (y0 + BLOCK_SIZE).min(h));
            let mut best = (0i64, 0i64);
            let mut best_cost = u32::MAX;
            for &(dx, dy) in &order {
                let (sx0, sy0) = (x0 as i64 + dx, y0 as i64 + dy);
                let (sx1, sy1) = (x1 as i64 + dx, y1 as i64 + dy);
                if sx0 < 0 || sy0 < 0 || sx1 > w as i64 || sy1 > h as i64 {
                    continue;
                }
                let mut cost = 0u32;
                for y in y0..y1 {
                    let ra = (y * w + x0) * 3;
                    let rb = ((y as i64 + dy) as usize * w + sx0 as usize) * 3;
                    let n = (x1 - x0) * 3;
                    cost += a[ra..ra + n]
                        .iter()
                        .zip(&b[rb..rb + n])
                        .map(|(&p, &q)| (p - q).unsigned_abs() as u32)
                        .sum::<u32>();
                    if cost >= best_cost {
                        break;
                    }
                }
                if cost < best_cost {
                    best_cost = cost;
                    best = (dx, dy);
                }
            }
            best
        })
        .collect();

    let mut flow = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = block_flows[(y / BLOCK_SIZE) * nbx + x / BLOCK_SIZE];
            flow.set(x, y, [dx as f32, dy as f32]);
        }
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::value_noise;

    fn textured(w: u32, h: u32, shift: i64) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let sx = x as f64 - shift as f64;
            let v = 128.0 + 100.0 * value_noise(sx / 3.0, y as f64 / 3.0, 17);
            image::Rgb([v as u8, (255.0 - v) as u8, (v * 0.5) as u8])
        })
    }

    #[test]
    fn identical_frames_have_zero_flow() {
        let a = textured(64, 64, 0);
        let f = estimate_flow(&a, &a, FlowMethod::BlockMatch, None).unwrap();
        assert!(f.as_slice().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn uniform_frames_tie_to_zero() {
        let a = RgbImage::from_pixel(48, 48, image::Rgb([9, 9, 9]));
        let f = estimate_flow(&a, &a, FlowMethod::BlockMatch, None).unwrap();
        assert!(f.as_slice().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn shifted_frame_recovers_shift_on_textured_blocks() {
        let a = textured(256, 256, 0);
        let b = textured(256, 256, 4);
        let f = estimate_flow(&a, &b, FlowMethod::BlockMatch, None).unwrap();
        let blocks = 256 / BLOCK_SIZE;
        let mut good = 0;
        for by in 0..blocks {
            for bx in 0..blocks {
                if f.get(bx * BLOCK_SIZE, by * BLOCK_SIZE) == [4.0, 0.0] {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.9 * (blocks * blocks) as f64, "{good}");
    }

    #[test]
    fn gt_method_passes_through() {
        let a = textured(32, 32, 0);
        let mut gt = FlowField::zeros(32, 32);
        gt.set(3, 4, [1.5, -2.0]);
        assert_eq!(
            estimate_flow(&a, &a, FlowMethod::Gt, Some(&gt)).unwrap(),
            gt
        );
        assert!(estimate_flow(&a, &a, FlowMethod::Gt, None).is_err());
        assert!("optical_magic".parse::<FlowMethod>().is_err());
    }
}
