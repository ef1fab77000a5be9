use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DisplacementField, InstanceMaskSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceParams {
    pub grid_squares_per_side: usize,
    pub eps_c: f64,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            grid_squares_per_side: 32,
            eps_c: 5.0,
        }
    }
}

impl InferenceParams {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let g = self.grid_squares_per_side;
        if g == 0 || !width.is_multiple_of(g) || !height.is_multiple_of(g) {
            return Err(Error::config(format!(
                "grid of {g} squares per side must divide the {width}x{height} frame"
            )));
        }
        if !(self.eps_c > 0.0 && self.eps_c.is_finite()) {
            return Err(Error::config("eps_c must be positive"));
        }
        Ok(())
    }
}

/// A 4-connected group of grid squares where displacement vectors converge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidRegion {
    /// Row-major square indices.
    pub squares: Vec<usize>,
    /// Count-weighted mean of the square centres.
    pub position: [f64; 2],
    /// Number of vectors landing in the region.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub instances: InstanceMaskSet,
    /// Region behind each returned instance (empty regions dropped).
    pub regions: Vec<CentroidRegion>,
    /// Detection score per instance: the region's vector count over the
    /// number of tool pixels in the frame.
    pub scores: Vec<f64>,
    /// No square passed the threshold; the whole mask is one instance.
    pub fallback: bool,
}

/// Per-square convergence: vectors landing in each square divided by the
/// square's pixel area. Targets are clipped to the image first.
pub fn convergence_map(
    field: &DisplacementField,
    mask: &BinaryMask,
    params: &InferenceParams,
) -> Result<Vec<f64>> {
    let (counts, area) = square_counts(field, mask, params)?;
    Ok(counts.iter().map(|&c| c as f64 / area).collect())
}

#[inline]
fn target(field: &DisplacementField, x: usize, y: usize) -> [f64; 2] {
    let (w, h) = field.dims();
    let v = field.get(x, y);
    [
        (x as f64 + v[0] as f64).clamp(0.0, (w - 1) as f64),
        (y as f64 + v[1] as f64).clamp(0.0, (h - 1) as f64),
    ]
}

fn square_counts(
    field: &DisplacementField,
    mask: &BinaryMask,
    params: &InferenceParams,
) -> Result<(Vec<usize>, f64)> {
    let (w, h) = field.dims();
    mask.check_dims(w, h)?;
    params.validate(w, h)?;
    let g = params.grid_squares_per_side;
    let (sw, sh) = (w / g, h / g);
    let mut counts = vec![0usize; g * g];
    for (x, y) in mask.pixels() {
        let t = target(field, x, y);
        let sx = ((t[0] / sw as f64) as usize).min(g - 1);
        let sy = ((t[1] / sh as f64) as usize).min(g - 1);
        counts[sy * g + sx] += 1;
    }
    Ok((counts, (sw * sh) as f64))
}

/// Converts a (predicted) displacement field into instance masks.
///
/// Squares whose convergence exceeds `eps_c` are grouped by 4-connectivity
/// into centroid regions; every tool pixel joins the region nearest to the
/// point its vector designates.
pub fn extract_instances(
    field: &DisplacementField,
    mask: &BinaryMask,
    params: &InferenceParams,
) -> Result<Extraction> {
    let (w, h) = field.dims();
    let (counts, area) = square_counts(field, mask, params)?;
    let g = params.grid_squares_per_side;
    let (sw, sh) = ((w / g) as f64, (h / g) as f64);
    let n_tool = mask.count();

    let kept: Vec<bool> = counts
        .iter()
        .map(|&c| c as f64 / area > params.eps_c)
        .collect();
    let regions = group_squares(&kept, &counts, g, sw, sh);

    if regions.is_empty() {
        if n_tool > 0 {
            log::debug!(
                "no centroid square above eps_c={} on a {g}x{g} grid; whole mask kept as one instance",
                params.eps_c
            );
        }
        let mut instances = InstanceMaskSet::empty(w, h);
        let mut scores = Vec::new();
        if n_tool > 0 {
            instances.push(mask, None)?;
            scores.push(1.0);
        }
        return Ok(Extraction {
            instances,
            regions: Vec::new(),
            scores,
            fallback: n_tool > 0,
        });
    }

    let mut labels = vec![0u16; w * h];
    let mut sizes = vec![0usize; regions.len()];
    for (x, y) in mask.pixels() {
        let t = target(field, x, y);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (r, region) in regions.iter().enumerate() {
            let d = (t[0] - region.position[0]).powi(2) + (t[1] - region.position[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = r;
            }
        }
        labels[y * w + x] = best as u16 + 1;
        sizes[best] += 1;
    }

    // drop regions that captured nothing and renumber densely
    let mut remap = vec![0u16; regions.len()];
    let mut kept_regions = Vec::new();
    for (r, region) in regions.into_iter().enumerate() {
        if sizes[r] > 0 {
            kept_regions.push(region);
            remap[r] = kept_regions.len() as u16;
        }
    }
    for l in labels.iter_mut().filter(|l| **l != 0) {
        *l = remap[*l as usize - 1];
    }
    let scores = kept_regions
        .iter()
        .map(|r| r.count as f64 / n_tool.max(1) as f64)
        .collect();
    let instances = InstanceMaskSet::from_labels(w, h, labels, vec![None; kept_regions.len()])?;
    Ok(Extraction {
        instances,
        regions: kept_regions,
        scores,
        fallback: false,
    })
}

fn group_squares(
    kept: &[bool],
    counts: &[usize],
    g: usize,
    sw: f64,
    sh: f64,
) -> Vec<CentroidRegion> {
    let mut region_of = vec![usize::MAX; g * g];
    let mut regions = Vec::new();
    for start in 0..g * g {
        if !kept[start] || region_of[start] != usize::MAX {
            continue;
        }
        let id = regions.len();
        let mut stack = vec![start];
        region_of[start] = id;
        let mut squares = Vec::new();
        while let Some(s) = stack.pop() {
            squares.push(s);
            let (sx, sy) = (s % g, s / g);
            let mut visit = |n: usize| {
                if kept[n] && region_of[n] == usize::MAX {
                    region_of[n] = id;
                    stack.push(n);
                }
            };
            if sx > 0 {
                visit(s - 1);
            }
            if sx + 1 < g {
                visit(s + 1);
            }
            if sy > 0 {
                visit(s - g);
            }
            if sy + 1 < g {
                visit(s + g);
            }
        }
        squares.sort_unstable();
        let mut total = 0usize;
        let (mut px, mut py) = (0.0, 0.0);
        for &s in &squares {
            let c = counts[s];
            total += c;
            px += c as f64 * ((s % g) as f64 + 0.5) * sw;
            py += c as f64 * ((s / g) as f64 + 0.5) * sh;
        }
        regions.push(CentroidRegion {
            squares,
            position: [px / total as f64, py / total as f64],
            count: total,
        });
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_convergence_yields_one_instance() {
        let (w, h) = (64, 64);
        let mask = BinaryMask::from_fn(w, h, |x, y| (10..50).contains(&x) && (20..40).contains(&y));
        let mut field = DisplacementField::zeros(w, h);
        for (x, y) in mask.pixels() {
            field.set(x, y, [30.0 - x as f32, 30.0 - y as f32]);
        }
        let params = InferenceParams {
            grid_squares_per_side: 8,
            eps_c: 5.0,
        };
        let ex = extract_instances(&field, &mask, &params).unwrap();
        assert_eq!(ex.instances.len(), 1);
        assert_eq!(ex.instances.mask(0), mask);
        assert!(!ex.fallback);
        assert_eq!(ex.scores, vec![1.0]);
    }

    #[test]
    fn no_convergence_falls_back_to_whole_mask() {
        let mask = BinaryMask::from_fn(32, 32, |x, y| x < 10 && y < 5);
        let field = DisplacementField::zeros(32, 32);
        let ex = extract_instances(
            &field,
            &mask,
            &InferenceParams {
                grid_squares_per_side: 4,
                eps_c: 5.0,
            },
        )
        .unwrap();
        assert!(ex.fallback);
        assert_eq!(ex.instances.len(), 1);
        assert_eq!(ex.instances.mask(0), mask);
    }

    #[test]
    fn empty_mask_gives_no_instances() {
        let ex = extract_instances(
            &DisplacementField::zeros(32, 32),
            &BinaryMask::new(32, 32),
            &InferenceParams::default(),
        )
        .unwrap();
        assert!(ex.instances.is_empty());
        assert!(!ex.fallback);
    }

    #[test]
    fn grid_must_divide_frame() {
        let p = InferenceParams {
            grid_squares_per_side: 7,
            eps_c: 5.0,
        };
        assert!(p.validate(64, 64).is_err());
        assert!(InferenceParams {
            eps_c: 0.0,
            ..InferenceParams::default()
        }
        .validate(64, 64)
        .is_err());
    }

    #[test]
    fn diagonal_squares_stay_separate() {
        let kept = vec![true, false, false, true];
        let regions = group_squares(&kept, &[4, 0, 0, 4], 2, 8.0, 8.0);
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].position, [4.0, 4.0]);
        assert_eq!(regions[1].position, [12.0, 12.0]);
    }
}
