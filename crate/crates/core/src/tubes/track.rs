use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FlowField, InstanceMaskSet};

pub const DEFAULT_MAX_DIST: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TubeEntry {
    pub frame: usize,
    pub instance: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tube {
    pub id: usize,
    pub entries: Vec<TubeEntry>,
}

impl Tube {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_frame(&self) -> usize {
        self.entries.first().map_or(0, |e| e.frame)
    }

    pub fn last_frame(&self) -> usize {
        self.entries.last().map_or(0, |e| e.frame)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeSet {
    pub tubes: Vec<Tube>,
}

#[derive(Serialize, Deserialize)]
struct TubeLine {
    tube: usize,
    frame: usize,
    instance: usize,
}

impl TubeSet {
    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }

    /// Tube id of every `(frame, instance)` pair.
    pub fn index(&self) -> BTreeMap<TubeEntry, usize> {
        self.tubes
            .iter()
            .flat_map(|t| t.entries.iter().map(move |e| (*e, t.id)))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.tubes {
            for e in &t.entries {
                let line = TubeLine {
                    tube: t.id,
                    frame: e.frame,
                    instance: e.instance,
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut tubes: Vec<Tube> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::format("tubes", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: TubeLine = serde_json::from_str(&line)
                .map_err(|e| Error::format("tubes", format!("line {}: {e}", n + 1)))?;
            if l.tube > tubes.len() {
                return Err(Error::format(
                    "tubes",
                    format!("line {}: tube ids must be dense", n + 1),
                ));
            }
            if l.tube == tubes.len() {
                tubes.push(Tube {
                    id: l.tube,
                    entries: Vec::new(),
                });
            }
            let tube = &mut tubes[l.tube];
            if tube.entries.last().is_some_and(|e| e.frame >= l.frame) {
                return Err(Error::format(
                    "tubes",
                    format!("line {}: frames must increase", n + 1),
                ));
            }
            tube.entries.push(TubeEntry {
                frame: l.frame,
                instance: l.instance,
            });
        }
        Ok(TubeSet { tubes })
    }
}

/// Flow vector used to project instance `i`: the vector at the rounded
/// centroid if that pixel belongs to the instance, otherwise the mean flow
/// over the instance.
pub fn centroid_flow(
    instances: &InstanceMaskSet,
    flow: &FlowField,
    i: usize,
    centroid: [f64; 2],
) -> [f64; 2] {
    let (w, h) = instances.dims();
    let (rx, ry) = (centroid[0].round(), centroid[1].round());
    if rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h {
        let (x, y) = (rx as usize, ry as usize);
        if instances.instance_at(x, y) == Some(i) {
            let v = flow.get(x, y);
            return [v[0] as f64, v[1] as f64];
        }
    }
    let mut sum = [0.0, 0.0];
    let mut n = 0usize;
    for (l, v) in instances.labels().iter().zip(flow.as_slice()) {
        if *l as usize == i + 1 {
            sum[0] += v[0] as f64;
            sum[1] += v[1] as f64;
            n += 1;
        }
    }
    if n == 0 {
        return [0.0, 0.0];
    }
    [sum[0] / n as f64, sum[1] / n as f64]
}

/// Greedy matching of projected points to targets by ascending distance;
/// distance ties are broken by (source, target) index. Pairs farther than
/// `max_dist` stay unmatched.
pub fn greedy_match(
    projected: &[[f64; 2]],
    targets: &[[f64; 2]],
    max_dist: f64,
) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (i, p) in projected.iter().enumerate() {
        for (j, q) in targets.iter().enumerate() {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d <= max_dist {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; projected.len()];
    let mut taken = vec![false; targets.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !taken[j] {
            out[i] = Some(j);
            taken[j] = true;
        }
    }
    out
}

/// Projects each instance centroid of frame `t` with the flow and matches it
/// to the centroids of frame `t + 1`. Entry `i` is the matched index in
/// `centroids_t1`.
pub fn track_step(
    instances_t: &InstanceMaskSet,
    flow: &FlowField,
    centroids_t1: &[[f64; 2]],
    max_dist: f64,
) -> Vec<Option<usize>> {
    let projected: Vec<[f64; 2]> = instances_t
        .centroids()
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let c = c.unwrap_or([f64::INFINITY, f64::INFINITY]);
            let v = centroid_flow(instances_t, flow, i, c);
            [c[0] + v[0], c[1] + v[1]]
        })
        .collect();
    greedy_match(&projected, centroids_t1, max_dist)
}

/// Sequential tube assembly: feed frames in order with the flow from the
/// previous frame.
#[derive(Clone, Debug)]
pub struct TubeBuilder {
    max_dist: f64,
    tubes: Vec<Tube>,
    /// Tube id of every instance of the last pushed frame.
    open: Vec<usize>,
    prev: Option<InstanceMaskSet>,
    frame: usize,
}

impl TubeBuilder {
    pub fn new(max_dist: f64) -> Self {
        Self {
            max_dist,
            tubes: Vec::new(),
            open: Vec::new(),
            prev: None,
            frame: 0,
        }
    }

    /// `flow_from_prev` maps the previous frame onto this one and is ignored
    /// for the first frame.
    pub fn push(
        &mut self,
        instances: &InstanceMaskSet,
        flow_from_prev: Option<&FlowField>,
    ) -> Result<()> {
        let centroids: Vec<[f64; 2]> = instances
            .centroids()
            .into_iter()
            .map(|c| c.unwrap_or([f64::INFINITY, f64::INFINITY]))
            .collect();
        let mut ids = vec![usize::MAX; instances.len()];
        if let Some(prev) = &self.prev {
            let flow = flow_from_prev
                .ok_or_else(|| Error::config("tube step needs the flow from the previous frame"))?;
            flow.check_dims(prev.width(), prev.height())?;
            for (i, m) in track_step(prev, flow, &centroids, self.max_dist)
                .into_iter()
                .enumerate()
            {
                if let Some(j) = m {
                    ids[j] = self.open[i];
                }
            }
        }
        for (j, id) in ids.iter_mut().enumerate() {
            if *id == usize::MAX {
                *id = self.tubes.len();
                self.tubes.push(Tube {
                    id: *id,
                    entries: Vec::new(),
                });
            }
            self.tubes[*id].entries.push(TubeEntry {
                frame: self.frame,
                instance: j,
            });
        }
        self.open = ids;
        self.prev = Some(instances.clone());
        self.frame += 1;
        Ok(())
    }

    pub fn finish(self) -> TubeSet {
        TubeSet { tubes: self.tubes }
    }
}

/// Chains [`track_step`] over a sequence; `flows[t]` maps frame `t` to `t + 1`.
pub fn build_tubes(
    frames: &[InstanceMaskSet],
    flows: &[FlowField],
    max_dist: f64,
) -> Result<TubeSet> {
    if !frames.is_empty() && flows.len() + 1 < frames.len() {
        return Err(Error::config(format!(
            "{} frames need {} flows, got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        )));
    }
    let mut b = TubeBuilder::new(max_dist);
    for (t, f) in frames.iter().enumerate() {
        b.push(f, t.checked_sub(1).map(|p| &flows[p]))?;
    }
    Ok(b.finish())
}

/// Fraction of entries whose identity equals their tube's majority identity.
/// `identity[frame][instance]` is the ground-truth tool (or `None`).
pub fn tube_purity(tubes: &TubeSet, identity: &[Vec<Option<usize>>]) -> f64 {
    let mut total = 0usize;
    let mut pure = 0usize;
    for t in &tubes.tubes {
        let mut counts: BTreeMap<Option<usize>, usize> = BTreeMap::new();
        for e in &t.entries {
            let id = identity
                .get(e.frame)
                .and_then(|f| f.get(e.instance))
                .copied()
                .flatten();
            *counts.entry(id).or_default() += 1;
        }
        pure += counts.values().max().copied().unwrap_or(0);
        total += t.entries.len();
    }
    if total == 0 {
        1.0
    } else {
        pure as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BinaryMask;

    fn square(w: usize, cx: usize, cy: usize) -> BinaryMask {
        BinaryMask::from_fn(w, w, |x, y| x.abs_diff(cx) <= 2 && y.abs_diff(cy) <= 2)
    }

    #[test]
    fn zero_flow_identity_matching() {
        let set = InstanceMaskSet::from_masks(
            64,
            64,
            &[square(64, 10, 10), square(64, 40, 30)],
            vec![None; 2],
        )
        .unwrap();
        let c: Vec<_> = set.centroids().into_iter().flatten().collect();
        let m = track_step(&set, &FlowField::zeros(64, 64), &c, 40.0);
        assert_eq!(m, vec![Some(0), Some(1)]);
    }

    #[test]
    fn moving_centroid_follows_flow() {
        let set = InstanceMaskSet::from_masks(64, 64, &[square(64, 10, 10)], vec![None]).unwrap();
        let mut flow = FlowField::zeros(64, 64);
        for (x, y) in set.mask(0).pixels() {
            flow.set(x, y, [5.0, 5.0]);
        }
        // a decoy sits closer to the unprojected centroid
        let m = track_step(&set, &flow, &[[12.0, 8.0], [15.0, 15.0]], 40.0);
        assert_eq!(m, vec![Some(1)]);
    }

    #[test]
    fn concave_centroid_uses_mean_flow() {
        // ring: rounded centroid is background
        let ring = BinaryMask::from_fn(32, 32, |x, y| {
            let d = (x as i32 - 16).pow(2) + (y as i32 - 16).pow(2);
            (25..=49).contains(&d)
        });
        let set = InstanceMaskSet::from_masks(32, 32, &[ring.clone()], vec![None]).unwrap();
        let mut flow = FlowField::zeros(32, 32);
        for (x, y) in ring.pixels() {
            flow.set(x, y, [2.0, -1.0]);
        }
        let c = set.centroids()[0].unwrap();
        assert_eq!(centroid_flow(&set, &flow, 0, c), [2.0, -1.0]);
    }

    #[test]
    fn gate_leaves_far_targets_unmatched() {
        assert_eq!(
            greedy_match(&[[0.0, 0.0]], &[[50.0, 0.0]], 40.0),
            vec![None]
        );
        assert_eq!(
            greedy_match(&[], &[[1.0, 1.0]], 40.0),
            Vec::<Option<usize>>::new()
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let set = TubeSet {
            tubes: vec![
                Tube {
                    id: 0,
                    entries: vec![
                        TubeEntry {
                            frame: 0,
                            instance: 0,
                        },
                        TubeEntry {
                            frame: 1,
                            instance: 1,
                        },
                    ],
                },
                Tube {
                    id: 1,
                    entries: vec![TubeEntry {
                        frame: 1,
                        instance: 0,
                    }],
                },
            ],
        };
        let mut buf = Vec::new();
        set.write_jsonl(&mut buf).unwrap();
        assert!(
            String::from_utf8_lossy(&buf).starts_with("{\"tube\":0,\"frame\":0,\"instance\":0}\n")
        );
        assert_eq!(TubeSet::read_jsonl(&buf[..]).unwrap(), set);
        assert!(TubeSet::read_jsonl(&b"{\"tube\":3,\"frame\":0,\"instance\":0}"[..]).is_err());
    }
}
