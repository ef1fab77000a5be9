use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng;

pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of every input point.
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
pub fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, m) in centroids.iter().enumerate() {
        let d = sq_dist(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iter` is reached. A cluster left empty is re-seeded with
/// the point farthest from its current centroid.
pub fn kmeans_pp(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel> {
    let n = points.len();
    if k == 0 {
        return Err(Error::config("number of clusters must be positive"));
    }
    if n < k {
        return Err(Error::NotEnoughData(format!("{n} points for {k} clusters")));
    }
    let mut r = rng(seed);
    let mut centroids = vec![points[r.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = i;
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        update_means(points, &assignment, &mut centroids);
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p).0).collect();
        let mut next = next;
        reseed_empty(points, &mut next, &mut centroids);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum();
    Ok(ClusterModel {
        centroids,
        assignment,
        inertia,
        iterations,
    })
}

fn update_means(points: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    for (c, (s, n)) in sums.into_iter().zip(counts).enumerate() {
        if n > 0 {
            centroids[c] = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

fn reseed_empty(points: &[Vec<f64>], assignment: &mut [usize], centroids: &mut [Vec<f64>]) {
    loop {
        let mut counts = vec![0usize; centroids.len()];
        assignment.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        // farthest point from its centroid among clusters that can spare one
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            let d = sq_dist(p, &centroids[c]);
            if counts[c] > 1 && d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        centroids[empty] = points[i].clone();
        assignment[i] = empty;
    }
}
