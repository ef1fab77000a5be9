//! Independent reference implementations checked against the library.

use std::collections::VecDeque;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saf_lab::eval_metrics::{ap_from_matches, FrameMatches};
use saf_lab::features::{head_loss_and_grad, supcon_loss, ProjectionHead};
use saf_lab::instantiate::{cc_label, detect_overlap, extract_instances, InferenceParams};
use saf_lab::nn::softmax;
use saf_lab::raster::{BinaryMask, DisplacementField};
use saf_lab::weak_classify::{kmeans_pp, sq_dist, ClassifierMLP, DEFAULT_MAX_ITER};

fn mask_strategy(max_w: usize, max_h: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max_w, 1..=max_h, 0.05f64..0.7).prop_flat_map(|(w, h, p)| {
        proptest::collection::vec(proptest::bool::weighted(p), w * h)
            .prop_map(move |v| BinaryMask::from_vec(w, h, v).unwrap())
    })
}

/// 8-connected flood fill in raster order of first pixel.
fn flood_fill(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = mask.dims();
    let mut label = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !mask.as_slice()[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.as_slice()[q] && label[q] == 0 {
                        label[q] = next;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    label
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cc_label_equals_flood_fill(mask in mask_strategy(40, 30)) {
        let cc = cc_label(&mask);
        let want = flood_fill(&mask);
        let got: Vec<u32> = cc.labels().iter().map(|&l| l as u32).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn overlap_is_monotone_and_inside_mask(a in mask_strategy(30, 20), extra in proptest::collection::vec(any::<bool>(), 600)) {
        let (w, h) = a.dims();
        let b = BinaryMask::from_fn(w, h, |x, y| a.get(x, y) || extra[(y * w + x) % extra.len()]);
        let oa = detect_overlap(&cc_label(&a), w);
        let ob = detect_overlap(&cc_label(&b), w);
        for (x, y) in oa.pixels() {
            prop_assert!(a.get(x, y));
            prop_assert!(ob.get(x, y));
        }
        // the flagged set is a union of whole components
        prop_assert_eq!(detect_overlap(&cc_label(&oa), w), oa);
    }

    #[test]
    fn extraction_partitions_the_mask(
        mask in mask_strategy(32, 32),
        seed in any::<u64>(),
        grid in prop::sample::select(vec![1usize, 2, 4]),
        eps in 0.1f64..8.0,
    ) {
        let (w, h) = mask.dims();
        // pad to a size the grid divides
        let (pw, ph) = (w.div_ceil(grid) * grid, h.div_ceil(grid) * grid);
        let mask = BinaryMask::from_fn(pw, ph, |x, y| x < w && y < h && mask.get(x, y));
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut field = DisplacementField::zeros(pw, ph);
        for v in field.as_mut_slice() {
            *v = [r.random_range(-40.0..40.0), r.random_range(-40.0..40.0)];
        }
        let params = InferenceParams { grid_squares_per_side: grid, eps_c: eps };
        let ex = extract_instances(&field, &mask, &params).unwrap();
        let masks = ex.instances.masks();
        let mut union = BinaryMask::new(pw, ph);
        for m in &masks {
            prop_assert!(!m.is_empty());
            prop_assert_eq!(union.intersection_count(m), 0);
            union.union_with(m);
        }
        prop_assert_eq!(union, mask);
        prop_assert_eq!(ex.scores.len(), masks.len());
        prop_assert!(ex.scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn softmax_is_a_distribution(logits in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn classifier_outputs_a_distribution(seed in any::<u64>(), x in proptest::collection::vec(-50.0f64..50.0, 6)) {
        let m = ClassifierMLP::init(6, 16, 5, seed);
        let p = m.predict_proba(&x);
        prop_assert_eq!(p.len(), 5);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn frame(scores: &[f64], ious: &[&[f64]], n_gt: usize) -> FrameMatches {
    FrameMatches {
        scores: scores.to_vec(),
        ious: ious.iter().map(|r| r.to_vec()).collect(),
        n_gt,
    }
}

#[test]
fn ap_hand_trace_global_ranking() {
    // ranked: TP .9, FP .8, TP .7, FP .6 with 3 ground truths
    // recall/precision: (1/3, 1), (1/3, 1/2), (2/3, 2/3), (2/3, 1/2)
    // envelope over recall steps: 1/3 * 1 + 1/3 * 2/3 = 5/9
    let frames = [
        frame(&[0.9, 0.6], &[&[0.8, 0.0], &[0.2, 0.1]], 2),
        frame(&[0.8, 0.7], &[&[0.3], &[0.55]], 1),
    ];
    assert_relative_eq!(
        ap_from_matches(&frames, 0.5).unwrap(),
        5.0 / 9.0,
        epsilon = 1e-12
    );
    // at 0.75 only the first detection survives
    assert_relative_eq!(
        ap_from_matches(&frames, 0.75).unwrap(),
        1.0 / 3.0,
        epsilon = 1e-12
    );
}

#[test]
fn ap_hand_trace_duplicate_detection() {
    // two detections on one object: the lower-scored one is a false positive
    let frames = [frame(&[0.9, 0.95], &[&[0.7], &[0.9]], 1)];
    assert_relative_eq!(ap_from_matches(&frames, 0.5).unwrap(), 1.0, epsilon = 1e-12);
    // a false positive ranked above the only hit halves precision
    let frames = [frame(&[0.4, 0.95], &[&[0.7], &[0.1]], 1)];
    assert_relative_eq!(ap_from_matches(&frames, 0.5).unwrap(), 0.5, epsilon = 1e-12);
}

fn blobs(seed: u64, centres: &[[f64; 2]], per: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per {
            pts.push(vec![
                centre[0] + r.random_range(-1.0..1.0),
                centre[1] + r.random_range(-1.0..1.0),
            ]);
            truth.push(c);
        }
    }
    (pts, truth)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

#[test]
fn kmeans_restarts_agree_on_separated_blobs() {
    let (pts, truth) = blobs(1, &[[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]], 25);
    for seed in 0..10 {
        let m = kmeans_pp(&pts, 4, seed, DEFAULT_MAX_ITER).unwrap();
        assert!(same_partition(&m.assignment, &truth), "seed {seed}");
        let inertia: f64 = pts
            .iter()
            .zip(&m.assignment)
            .map(|(p, &c)| sq_dist(p, &m.centroids[c]))
            .sum();
        assert_relative_eq!(m.inertia, inertia, max_relative = 1e-12);
        // centroids are member means
        for c in 0..4 {
            let members: Vec<&Vec<f64>> = m.members(c).map(|i| &pts[i]).collect();
            for d in 0..2 {
                let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                assert_relative_eq!(m.centroids[c][d], mean, epsilon = 1e-9);
            }
        }
    }
    // same seed, same model
    assert_eq!(
        kmeans_pp(&pts, 4, 3, DEFAULT_MAX_ITER).unwrap(),
        kmeans_pp(&pts, 4, 3, DEFAULT_MAX_ITER).unwrap()
    );
}

#[test]
fn kmeans_never_returns_an_empty_cluster() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..50 {
        let n = r.random_range(3..30);
        let k = r.random_range(1..=n);
        // few distinct values so duplicates are common
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![r.random_range(0..3) as f64, r.random_range(0..2) as f64])
            .collect();
        let m = kmeans_pp(&pts, k, trial, DEFAULT_MAX_ITER).unwrap();
        for c in 0..k {
            assert!(m.members(c).count() > 0, "trial {trial}: cluster {c} empty");
        }
    }
}

#[test]
fn head_gradient_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let head = ProjectionHead::init(7, 9, 4, 3);
    let data: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..7).map(|_| r.random_range(-2.0..2.0)).collect())
        .collect();
    let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
    let ids = [0, 1, 0, 2, 1, 2, 3, 3];
    let tau = 0.1;
    let (_, grad) = head_loss_and_grad(&head, &xs, &ids, tau).unwrap();
    let loss_of = |h: &ProjectionHead| {
        let z: Vec<Vec<f64>> = xs.iter().map(|x| h.embed(x)).collect();
        supcon_loss(&z, &ids, tau).unwrap()
    };
    let analytic: Vec<Vec<f64>> = grad.slices().into_iter().map(|s| s.to_vec()).collect();
    let step = 1e-6;
    for (p, g) in analytic.iter().enumerate() {
        for (i, &gv) in g.iter().enumerate() {
            let mut plus = head.clone();
            plus.params_mut()[p][i] += step;
            let mut minus = head.clone();
            minus.params_mut()[p][i] -= step;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            assert!(
                (gv - fd).abs() <= 1e-4 * gv.abs().max(fd.abs()) + 1e-7,
                "param {p}[{i}]: {gv} vs {fd}"
            );
        }
    }
}
