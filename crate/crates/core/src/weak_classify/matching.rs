use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ClassId;
use crate::weak_classify::classifier::{
    train_classifier, ClassifierConfig, ClassifierLog, ClassifierMLP,
};

/// Largest number of candidate tuples evaluated for one frame.
pub const ENUMERATION_CAP: u128 = 1_000_000;
/// Probability floor inside the assignment cost.
pub const COST_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakMode {
    FrameWise,
    SequenceWise,
}

impl std::str::FromStr for WeakMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame_wise" | "frame-wise" => Ok(Self::FrameWise),
            "sequence_wise" | "sequence-wise" => Ok(Self::SequenceWise),
            other => Err(Error::config(format!("unknown weak mode `{other}`"))),
        }
    }
}

/// Number of candidate tuples for `n_inst` instances and `n_weak` labels.
pub fn count_label_sets(n_inst: usize, n_weak: usize) -> u128 {
    if n_weak == 0 {
        return 0;
    }
    if n_inst <= n_weak {
        ((n_weak - n_inst + 1)..=n_weak)
            .map(|v| v as u128)
            .product()
    } else {
        (n_weak as u128)
            .checked_pow(n_inst as u32)
            .unwrap_or(u128::MAX)
    }
}

fn check_enumerable(n_inst: usize, weak: &BTreeSet<ClassId>) -> Result<()> {
    if weak.is_empty() {
        return Err(Error::config("empty weak label set"));
    }
    if n_inst == 0 {
        return Err(Error::config("a frame needs at least one instance"));
    }
    let count = count_label_sets(n_inst, weak.len());
    if count > ENUMERATION_CAP {
        return Err(Error::CombinatorialBlowUp {
            count,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Visits candidate tuples in lexicographic order: injective tuples when
/// `n_inst <= |W|`, every function instance -> label otherwise.
fn visit(n_inst: usize, labels: &[ClassId], mut f: impl FnMut(&[ClassId])) {
    let injective = n_inst <= labels.len();
    let mut used = vec![false; labels.len()];
    let mut tuple = Vec::with_capacity(n_inst);
    fn rec(
        n: usize,
        labels: &[ClassId],
        injective: bool,
        used: &mut [bool],
        tuple: &mut Vec<ClassId>,
        f: &mut impl FnMut(&[ClassId]),
    ) {
        if tuple.len() == n {
            f(tuple);
            return;
        }
        for k in 0..labels.len() {
            if injective && used[k] {
                continue;
            }
            used[k] = true;
            tuple.push(labels[k]);
            rec(n, labels, injective, used, tuple, f);
            tuple.pop();
            used[k] = false;
        }
    }
    rec(n_inst, labels, injective, &mut used, &mut tuple, &mut f);
}

/// All candidate ordered label tuples for a frame with `n_inst` instances.
pub fn enumerate_label_sets(n_inst: usize, weak: &BTreeSet<ClassId>) -> Result<Vec<Vec<ClassId>>> {
    check_enumerable(n_inst, weak)?;
    let labels: Vec<ClassId> = weak.iter().copied().collect();
    let mut out = Vec::with_capacity(count_label_sets(n_inst, labels.len()) as usize);
    visit(n_inst, &labels, |t| out.push(t.to_vec()));
    Ok(out)
}

/// Mean clamped cross-entropy of the tuple under the teacher probabilities.
pub fn assignment_cost(probs: &[Vec<f64>], tuple: &[ClassId]) -> Result<f64> {
    if probs.len() != tuple.len() {
        return Err(Error::ShapeMismatch {
            expected: (probs.len(), 1),
            actual: (tuple.len(), 1),
        });
    }
    let mut sum = 0.0;
    for (p, &l) in probs.iter().zip(tuple) {
        let v = *p.get(l).ok_or(Error::OutOfRange {
            index: l,
            len: p.len(),
        })?;
        sum -= v.max(COST_CLAMP).ln();
    }
    Ok(sum / tuple.len() as f64)
}

/// Minimum-cost tuple for the given teacher probabilities, first in
/// enumeration order on ties.
pub fn match_probs(probs: &[Vec<f64>], weak: &BTreeSet<ClassId>) -> Result<Vec<ClassId>> {
    check_enumerable(probs.len(), weak)?;
    let labels: Vec<ClassId> = weak.iter().copied().collect();
    if let Some(&l) = labels.iter().find(|&&l| probs.iter().any(|p| l >= p.len())) {
        return Err(Error::OutOfRange {
            index: l,
            len: probs[0].len(),
        });
    }
    let neg_log: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| p.iter().map(|v| -v.max(COST_CLAMP).ln()).collect())
        .collect();
    let n = probs.len() as f64;
    let mut best: Option<(f64, Vec<ClassId>)> = None;
    visit(probs.len(), &labels, |t| {
        let mut s = 0.0;
        for (i, &l) in t.iter().enumerate() {
            s += neg_log[i][l];
        }
        let cost = s / n;
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, t.to_vec()));
        }
    });
    Ok(best.expect("at least one tuple").1)
}

/// Matches the instances of one frame to its weak labels using the frozen
/// teacher.
pub fn match_weak_labels(
    teacher: &ClassifierMLP,
    embeddings: &[Vec<f64>],
    weak: &BTreeSet<ClassId>,
) -> Result<Vec<ClassId>> {
    let probs: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| teacher.predict_proba(e))
        .collect();
    match_probs(&probs, weak)
}

/// One frame of student supervision: rows into the embedding table and the
/// frame's weak label set (frame- or sequence-wise).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakFrame {
    pub rows: Vec<usize>,
    pub weak: BTreeSet<ClassId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedLabels {
    /// `(row, label)` for every matched instance, in frame order.
    pub labels: Vec<(usize, ClassId)>,
    /// Frames skipped for having no instances, no weak labels, or too many
    /// candidate tuples.
    pub skipped_frames: Vec<usize>,
}

/// Runs the matcher over all frames in parallel.
pub fn match_frames(
    teacher: &ClassifierMLP,
    embeddings: &[Vec<f64>],
    frames: &[WeakFrame],
) -> Result<MatchedLabels> {
    let results: Vec<Result<Option<Vec<ClassId>>>> = frames
        .par_iter()
        .map(|f| {
            if f.rows.is_empty() || f.weak.is_empty() {
                return Ok(None);
            }
            let emb: Vec<Vec<f64>> = f.rows.iter().map(|&r| embeddings[r].clone()).collect();
            match match_weak_labels(teacher, &emb, &f.weak) {
                Ok(t) => Ok(Some(t)),
                Err(Error::CombinatorialBlowUp { count, cap }) => {
                    log::warn!("skipping frame with {count} candidate tuples (cap {cap})");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut out = MatchedLabels {
        labels: Vec::new(),
        skipped_frames: Vec::new(),
    };
    for (i, (r, f)) in results.into_iter().zip(frames).enumerate() {
        match r? {
            Some(t) => out.labels.extend(f.rows.iter().copied().zip(t)),
            None => out.skipped_frames.push(i),
        }
    }
    Ok(out)
}

/// Student training on teacher-matched weak labels.
pub fn train_student(
    embeddings: &[Vec<f64>],
    frames: &[WeakFrame],
    teacher: &ClassifierMLP,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierMLP, ClassifierLog, MatchedLabels)> {
    let matched = match_frames(teacher, embeddings, frames)?;
    let xs: Vec<Vec<f64>> = matched
        .labels
        .iter()
        .map(|&(r, _)| embeddings[r].clone())
        .collect();
    let ys: Vec<ClassId> = matched.labels.iter().map(|&(_, l)| l).collect();
    let (model, log) = train_classifier(&xs, &ys, teacher.n_classes, cfg)?;
    Ok((model, log, matched))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn small_enumerations() {
        assert_eq!(enumerate_label_sets(1, &set(&[4])).unwrap(), vec![vec![4]]);
        assert_eq!(
            enumerate_label_sets(2, &set(&[0, 1, 2])).unwrap(),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 2],
                vec![2, 0],
                vec![2, 1]
            ]
        );
        assert_eq!(enumerate_label_sets(3, &set(&[0, 1])).unwrap().len(), 8);
        assert!(enumerate_label_sets(2, &BTreeSet::new()).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            enumerate_label_sets(9, &set(&[0, 1, 2, 3, 4])),
            Err(Error::CombinatorialBlowUp { .. })
        ));
        assert!(count_label_sets(6, 7) <= ENUMERATION_CAP);
    }

    #[test]
    fn hand_evaluated_costs() {
        let probs = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]];
        let ab = assignment_cost(&probs, &[0, 1]).unwrap();
        let ba = assignment_cost(&probs, &[1, 0]).unwrap();
        assert!((ab - 0.2899).abs() < 1e-4);
        assert!((ba - 1.956).abs() < 1e-3);
        assert_eq!(match_probs(&probs, &set(&[0, 1])).unwrap(), vec![0, 1]);
        let uniform = vec![vec![0.25; 4]; 3];
        assert!((assignment_cost(&uniform, &[3, 1, 1]).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_label_single_instance() {
        let probs = vec![vec![0.99, 0.01]];
        assert_eq!(match_probs(&probs, &set(&[1])).unwrap(), vec![1]);
    }
}
