use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval_metrics::iou;
use crate::raster::{BinaryMask, ClassId, InstanceMaskSet};
use crate::weak_classify::kmeans::{sq_dist, ClusterModel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prototype {
    pub cluster_id: usize,
    /// Row of the prototype instance in the embedding table.
    pub instance: usize,
    pub label: Option<ClassId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<Prototype>,
}

impl PrototypeSet {
    pub fn label_of(&self, cluster: usize) -> Option<ClassId> {
        self.prototypes
            .iter()
            .find(|p| p.cluster_id == cluster)
            .and_then(|p| p.label)
    }
}

/// Per cluster, the member closest to the centroid (lowest row on ties).
pub fn select_prototypes(model: &ClusterModel, embeddings: &[Vec<f64>]) -> PrototypeSet {
    let prototypes = (0..model.n_clusters())
        .filter_map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for i in model.members(c) {
                let d = sq_dist(&embeddings[i], &model.centroids[c]);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            best.map(|(instance, _)| Prototype {
                cluster_id: c,
                instance,
                label: None,
            })
        })
        .collect();
    PrototypeSet { prototypes }
}

/// Class of the ground-truth instance overlapping `predicted` most (first
/// on ties); `None` when nothing overlaps.
pub fn auto_label(predicted: &BinaryMask, gt: &InstanceMaskSet) -> Option<ClassId> {
    let mut best: Option<(f64, Option<ClassId>)> = None;
    for (i, m) in gt.masks().iter().enumerate() {
        let v = iou(predicted, m);
        if v > 0.0 && best.is_none_or(|(b, _)| v > b) {
            best = Some((v, gt.class(i)));
        }
    }
    best.and_then(|(_, c)| c)
}

/// Labels every prototype by maximum IoU against the ground truth of its
/// frame. `lookup(instance)` returns the prototype's predicted mask and the
/// ground-truth set of the same frame.
pub fn auto_label_prototypes(
    prototypes: &PrototypeSet,
    mut lookup: impl FnMut(usize) -> Result<(BinaryMask, InstanceMaskSet)>,
) -> Result<PrototypeSet> {
    let mut out = prototypes.clone();
    for p in &mut out.prototypes {
        let (pred, gt) = lookup(p.instance)?;
        p.label = auto_label(&pred, &gt);
    }
    Ok(out)
}

/// Every instance inherits its cluster's prototype label; clusters without a
/// label leave their members unlabelled.
pub fn propagate_labels(model: &ClusterModel, prototypes: &PrototypeSet) -> Vec<Option<ClassId>> {
    model
        .assignment
        .iter()
        .map(|&c| prototypes.label_of(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(assignment: Vec<usize>, centroids: Vec<Vec<f64>>) -> ClusterModel {
        ClusterModel {
            centroids,
            assignment,
            inertia: 0.0,
            iterations: 1,
        }
    }

    #[test]
    fn singleton_and_tie_rules() {
        let emb = vec![vec![0.0], vec![-1.0], vec![1.0], vec![5.0]];
        let m = model(vec![0, 0, 0, 1], vec![vec![0.5], vec![5.0]]);
        let p = select_prototypes(&m, &emb);
        // rows 0 and 2 are both 0.5 away; row 0 wins
        assert_eq!(p.prototypes[0].instance, 0);
        assert_eq!(p.prototypes[1].instance, 3);
    }

    #[test]
    fn auto_label_by_max_iou() {
        let a = BinaryMask::from_fn(10, 10, |x, _| x < 6);
        let b = BinaryMask::from_fn(10, 10, |x, _| x >= 6);
        let gt =
            InstanceMaskSet::from_masks(10, 10, &[a.clone(), b], vec![Some(2), Some(1)]).unwrap();
        assert_eq!(auto_label(&a, &gt), Some(2));
        // 60/40 split picks the larger overlap
        assert_eq!(auto_label(&BinaryMask::filled(10, 10), &gt), Some(2));
        assert_eq!(auto_label(&BinaryMask::new(10, 10), &gt), None);
    }

    #[test]
    fn propagation_follows_clusters() {
        let m = model(vec![1, 0, 1, 2], vec![vec![0.0]; 3]);
        let protos = PrototypeSet {
            prototypes: vec![
                Prototype {
                    cluster_id: 0,
                    instance: 1,
                    label: Some(3),
                },
                Prototype {
                    cluster_id: 1,
                    instance: 0,
                    label: Some(0),
                },
                Prototype {
                    cluster_id: 2,
                    instance: 3,
                    label: None,
                },
            ],
        };
        assert_eq!(
            propagate_labels(&m, &protos),
            vec![Some(0), Some(3), Some(0), None]
        );
    }
}
