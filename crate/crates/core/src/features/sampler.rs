use rand::seq::IndexedRandom as _;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::tubes::{TubeEntry, TubeSet};
use crate::util::Rng;

/// Frames two tubes must lie apart to count as safe negatives.
pub const DEFAULT_T_FAR: usize = 50;
/// Entries drawn from every selected tube.
pub const ENTRIES_PER_TUBE: usize = 4;
/// Draw weight of a tube sharing a frame with an already selected tube.
pub const CO_OCCUR_WEIGHT: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Relation {
    CoOccur,
    Far,
    Near,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub entry: TubeEntry,
    pub tube: usize,
}

/// Batch composer over the tubes with at least two entries.
#[derive(Clone, Debug)]
pub struct TubeSampler {
    usable: Vec<usize>,
    relation: Vec<Vec<Relation>>,
}

impl TubeSampler {
    /// `sequence_of_frame` marks tubes from different sequences as far apart
    /// regardless of frame indices.
    pub fn new(tubes: &TubeSet, sequence_of_frame: Option<&[usize]>, t_far: usize) -> Result<Self> {
        let usable: Vec<usize> = tubes
            .tubes
            .iter()
            .filter(|t| t.len() >= 2)
            .map(|t| t.id)
            .collect();
        if usable.len() < 2 {
            return Err(Error::NotEnoughData(format!(
                "{} tubes with two or more entries, need 2",
                usable.len()
            )));
        }
        let seq = |f: usize| sequence_of_frame.and_then(|s| s.get(f).copied());
        let relation = usable
            .iter()
            .map(|&a| {
                let ta = &tubes.tubes[a];
                usable
                    .iter()
                    .map(|&b| {
                        let tb = &tubes.tubes[b];
                        if a != b && shares_frame(&ta.entries, &tb.entries) {
                            return Relation::CoOccur;
                        }
                        if seq(ta.first_frame()) != seq(tb.first_frame()) {
                            return Relation::Far;
                        }
                        let gap = tb
                            .first_frame()
                            .saturating_sub(ta.last_frame())
                            .max(ta.first_frame().saturating_sub(tb.last_frame()));
                        if gap >= t_far {
                            Relation::Far
                        } else {
                            Relation::Near
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { usable, relation })
    }

    pub fn usable_tubes(&self) -> &[usize] {
        &self.usable
    }

    /// Picks `batch_size / 4` distinct tubes (fewer if not enough exist) and
    /// four entries from each, so every anchor has at least one positive.
    ///
    /// The first tube is uniform; each further tube is drawn with weight 2 if
    /// it shares a frame with a selected tube, 1 if it is far from all of
    /// them, 0 otherwise (uniform fallback when every weight is 0).
    pub fn sample(
        &self,
        tubes: &TubeSet,
        batch_size: usize,
        rng: &mut Rng,
    ) -> Result<Vec<BatchItem>> {
        if batch_size < 2 * ENTRIES_PER_TUBE {
            return Err(Error::config(format!(
                "batch size {batch_size} must hold at least two tubes of {ENTRIES_PER_TUBE}"
            )));
        }
        let k = (batch_size / ENTRIES_PER_TUBE).min(self.usable.len());
        let picked = self.pick_tubes(k, rng);
        let mut batch = Vec::with_capacity(k * ENTRIES_PER_TUBE);
        for u in picked {
            let tube = &tubes.tubes[self.usable[u]];
            let entries: Vec<TubeEntry> = if tube.len() >= ENTRIES_PER_TUBE {
                tube.entries
                    .choose_multiple(rng, ENTRIES_PER_TUBE)
                    .copied()
                    .collect()
            } else {
                (0..ENTRIES_PER_TUBE)
                    .map(|_| tube.entries[rng.random_range(0..tube.len())])
                    .collect()
            };
            batch.extend(entries.into_iter().map(|entry| BatchItem {
                entry,
                tube: tube.id,
            }));
        }
        Ok(batch)
    }

    /// Indices into `usable` of the selected tubes, in draw order.
    fn pick_tubes(&self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let n = self.usable.len();
        let mut picked = vec![rng.random_range(0..n)];
        let mut selected = vec![false; n];
        selected[picked[0]] = true;
        while picked.len() < k {
            let weights: Vec<f64> = (0..n)
                .map(|c| {
                    if selected[c] {
                        0.0
                    } else if picked
                        .iter()
                        .any(|&s| self.relation[s][c] == Relation::CoOccur)
                    {
                        CO_OCCUR_WEIGHT
                    } else if picked.iter().all(|&s| self.relation[s][c] == Relation::Far) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let next = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut choice = n - 1;
                for (c, w) in weights.iter().enumerate() {
                    if *w > 0.0 {
                        if u < *w {
                            choice = c;
                            break;
                        }
                        u -= w;
                        choice = c;
                    }
                }
                choice
            } else {
                let free: Vec<usize> = (0..n).filter(|&c| !selected[c]).collect();
                free[rng.random_range(0..free.len())]
            };
            selected[next] = true;
            picked.push(next);
        }
        picked
    }
}

fn shares_frame(a: &[TubeEntry], b: &[TubeEntry]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].frame.cmp(&b[j].frame) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// One batch with the default far-apart threshold and no sequence split.
pub fn sample_batch(tubes: &TubeSet, batch_size: usize, rng: &mut Rng) -> Result<Vec<BatchItem>> {
    TubeSampler::new(tubes, None, DEFAULT_T_FAR)?.sample(tubes, batch_size, rng)
}
