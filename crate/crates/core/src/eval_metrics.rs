//! Class-agnostic AP, the challenge IoU and binary IoU.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, InstanceMaskSet};

/// Intersection over union; two empty masks agree perfectly.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 1.0;
    }
    a.intersection_count(b) as f64 / union as f64
}

/// Tool-vs-background IoU.
pub fn binary_iou(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    iou(pred, gt)
}

/// Predicted instances of one frame with a confidence per instance.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub instances: InstanceMaskSet,
    pub scores: Vec<f64>,
}

/// Pairwise IoU between the instances of two label maps, `[pred][gt]`,
/// from a single pass over the pixels.
pub fn iou_matrix(pred: &InstanceMaskSet, gt: &InstanceMaskSet) -> Result<Vec<Vec<f64>>> {
    let (w, h) = pred.dims();
    if gt.dims() != (w, h) {
        return Err(Error::ShapeMismatch {
            expected: (w, h),
            actual: gt.dims(),
        });
    }
    let mut inter = vec![vec![0usize; gt.len()]; pred.len()];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != 0 && g != 0 {
            inter[p as usize - 1][g as usize - 1] += 1;
        }
    }
    let (pa, ga) = (pred.pixel_counts(), gt.pixel_counts());
    Ok(inter
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &n)| {
                    let u = pa[i] + ga[j] - n;
                    if u == 0 {
                        1.0
                    } else {
                        n as f64 / u as f64
                    }
                })
                .collect()
        })
        .collect())
}

/// Scores and the `[pred][gt]` IoU matrix of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMatches {
    pub scores: Vec<f64>,
    pub ious: Vec<Vec<f64>>,
    pub n_gt: usize,
}

/// All-points interpolated AP over a global score ranking. Each prediction
/// takes the unmatched ground truth of its frame with highest IoU >= `thr`.
pub fn ap_from_matches(frames: &[FrameMatches], thr: f64) -> Result<f64> {
    if !(thr > 0.0 && thr <= 1.0) {
        return Err(Error::config(format!("IoU threshold {thr} outside (0, 1]")));
    }
    let n_gt: usize = frames.iter().map(|f| f.n_gt).sum();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (f, fm) in frames.iter().enumerate() {
        if let Some(s) = fm.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::config(format!("non-finite detection score {s}")));
        }
        order.extend((0..fm.scores.len()).map(|d| (f, d)));
    }
    order.sort_by(|a, b| {
        frames[b.0].scores[b.1]
            .total_cmp(&frames[a.0].scores[a.1])
            .then(a.cmp(b))
    });

    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.n_gt]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &(f, d)) in order.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, &v) in frames[f].ious[d].iter().enumerate() {
            if !taken[f][g] && v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[f][g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right, then sum over recall steps
    let mut ap = 0.0;
    let mut env = vec![0.0; curve.len()];
    let mut m = 0.0f64;
    for (i, &(_, p)) in curve.iter().enumerate().rev() {
        m = m.max(p);
        env[i] = m;
    }
    let mut last_r = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        if r > last_r {
            ap += (r - last_r) * env[i];
            last_r = r;
        }
    }
    Ok(ap)
}

/// Class-agnostic AP at IoU threshold `thr`.
pub fn ap_class_agnostic(
    preds: &[FrameDetections],
    gts: &[InstanceMaskSet],
    thr: f64,
) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch {
            expected: (gts.len(), 1),
            actual: (preds.len(), 1),
        });
    }
    let frames = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            if p.scores.len() != p.instances.len() {
                return Err(Error::ShapeMismatch {
                    expected: (p.instances.len(), 1),
                    actual: (p.scores.len(), 1),
                });
            }
            Ok(FrameMatches {
                scores: p.scores.clone(),
                ious: iou_matrix(&p.instances, g)?,
                n_gt: g.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ap_from_matches(&frames, thr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeIou {
    pub mean: f64,
    /// Mean IoU of each class over the frames where it is present in the
    /// ground truth.
    pub per_class: BTreeMap<usize, f64>,
    pub evaluated_frames: usize,
}

/// Per frame, mean class IoU over classes present in the ground truth;
/// averaged over frames containing at least one tool pixel. Maps hold
/// `class + 1` per pixel, 0 for background.
pub fn challenge_iou(pred: &[Vec<u16>], gt: &[Vec<u16>]) -> Result<ChallengeIou> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: (gt.len(), 1),
            actual: (pred.len(), 1),
        });
    }
    let mut frame_sum = 0.0;
    let mut frames = 0usize;
    let mut class_acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch {
                expected: (g.len(), 1),
                actual: (p.len(), 1),
            });
        }
        let mut inter: BTreeMap<u16, usize> = BTreeMap::new();
        let mut gcount: BTreeMap<u16, usize> = BTreeMap::new();
        let mut pcount: BTreeMap<u16, usize> = BTreeMap::new();
        for (&a, &b) in p.iter().zip(g) {
            if b != 0 {
                *gcount.entry(b).or_default() += 1;
                if a == b {
                    *inter.entry(b).or_default() += 1;
                }
            }
            if a != 0 {
                *pcount.entry(a).or_default() += 1;
            }
        }
        if gcount.is_empty() {
            continue;
        }
        let mut s = 0.0;
        for (&c, &gn) in &gcount {
            let i = inter.get(&c).copied().unwrap_or(0);
            let u = gn + pcount.get(&c).copied().unwrap_or(0) - i;
            let v = i as f64 / u as f64;
            s += v;
            let e = class_acc.entry(c as usize - 1).or_default();
            e.0 += v;
            e.1 += 1;
        }
        frame_sum += s / gcount.len() as f64;
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::NoEvaluableFrames);
    }
    Ok(ChallengeIou {
        mean: frame_sum / frames as f64,
        per_class: class_acc
            .into_iter()
            .map(|(c, (s, n))| (c, s / n as f64))
            .collect(),
        evaluated_frames: frames,
    })
}

/// Metrics report written by the evaluation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap50: f64,
    pub ap70: f64,
    pub challenge_iou: f64,
    pub binary_iou: f64,
    pub per_class: BTreeMap<usize, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BinaryMask::from_fn(2, 2, |x, y| x == 0 && y <= 1);
        let b = BinaryMask::from_fn(2, 2, |_, y| y == 1);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&BinaryMask::new(2, 2), &BinaryMask::new(2, 2)), 1.0);
        let c = BinaryMask::from_fn(2, 2, |x, _| x == 1);
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn hand_traced_ap() {
        // one GT, a true positive and a false positive
        let frames = |tp_score: f64, fp_score: f64| {
            vec![FrameMatches {
                scores: vec![tp_score, fp_score],
                ious: vec![vec![0.9], vec![0.1]],
                n_gt: 1,
            }]
        };
        assert_eq!(ap_from_matches(&frames(0.9, 0.8), 0.5).unwrap(), 1.0);
        assert_eq!(ap_from_matches(&frames(0.8, 0.9), 0.5).unwrap(), 0.5);
        let none = vec![FrameMatches {
            scores: vec![],
            ious: vec![],
            n_gt: 2,
        }];
        assert_eq!(ap_from_matches(&none, 0.5).unwrap(), 0.0);
        let no_gt = vec![FrameMatches {
            scores: vec![1.0],
            ious: vec![vec![]],
            n_gt: 0,
        }];
        assert!(matches!(
            ap_from_matches(&no_gt, 0.5),
            Err(Error::NoGroundTruth)
        ));
        assert!(ap_from_matches(&none, 0.0).is_err());
    }

    #[test]
    fn challenge_iou_toy() {
        // frame 0: class 0 perfect, class 1 missed; frame 1: no GT
        let gt = vec![vec![1, 1, 2, 0], vec![0, 0, 0, 0]];
        let pred = vec![vec![1, 1, 0, 0], vec![2, 0, 0, 0]];
        let r = challenge_iou(&pred, &gt).unwrap();
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.evaluated_frames, 1);
        assert_eq!(r.per_class[&0], 1.0);
        assert_eq!(r.per_class[&1], 0.0);
        assert!(matches!(
            challenge_iou(&[vec![0u16; 4]], &[vec![0u16; 4]]),
            Err(Error::NoEvaluableFrames)
        ));
    }
}
