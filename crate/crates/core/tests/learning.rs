use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saf_lab::features::{extract_descriptor, Standardizer, TubeSampler, ENTRIES_PER_TUBE};
use saf_lab::scene_sim::{gen_sequence, SimConfig};
use saf_lab::tubes::{Tube, TubeEntry, TubeSet};
use saf_lab::weak_classify::{sq_dist, train_teacher, ClassifierConfig, ClassifierMLP};

fn class_descriptors(seeds: std::ops::Range<u64>) -> Vec<(usize, Vec<f32>)> {
    let cfg = SimConfig::default();
    let mut out = Vec::new();
    for seed in seeds {
        let seq = gen_sequence(&cfg, seed).unwrap();
        for f in seq.frames.iter().step_by(5) {
            for i in 0..f.instances.len() {
                let d = extract_descriptor(&f.image, &f.instances.mask(i)).unwrap();
                out.push((f.instances.class(i).unwrap(), d));
            }
        }
    }
    out
}

#[test]
fn descriptors_separate_classes_by_nearest_centroid() {
    let train = class_descriptors(500..506);
    let test = class_descriptors(600..603);
    let rows: Vec<Vec<f32>> = train.iter().map(|(_, d)| d.clone()).collect();
    let std = Standardizer::fit(&rows).unwrap();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (c, d) in &train {
        let v = std.apply(d);
        let e = sums.entry(*c).or_insert_with(|| (vec![0.0; v.len()], 0));
        e.0.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
        e.1 += 1;
    }
    let centroids: Vec<(usize, Vec<f64>)> = sums
        .into_iter()
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    let correct = test
        .iter()
        .filter(|(c, d)| {
            let v = std.apply(d);
            let best = centroids
                .iter()
                .min_by(|a, b| sq_dist(&a.1, &v).total_cmp(&sq_dist(&b.1, &v)))
                .unwrap();
            best.0 == *c
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(
        acc >= 0.9,
        "nearest-centroid accuracy {acc:.3} over {} instances",
        test.len()
    );
}

fn tube(id: usize, frames: std::ops::Range<usize>) -> Tube {
    Tube {
        id,
        entries: frames
            .map(|frame| TubeEntry {
                frame,
                instance: id,
            })
            .collect(),
    }
}

#[test]
fn sampler_favours_co_occurring_tubes_two_to_one() {
    // 0 and 1 share frames, 2 is far from both, 3 is near 0 and 1
    let tubes = TubeSet {
        tubes: vec![
            tube(0, 0..10),
            tube(1, 5..15),
            tube(2, 100..110),
            tube(3, 30..40),
        ],
    };
    let sampler = TubeSampler::new(&tubes, None, 50).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut second = [0usize; 4];
    for _ in 0..40_000 {
        let batch = sampler
            .sample(&tubes, 2 * ENTRIES_PER_TUBE, &mut rng)
            .unwrap();
        assert_eq!(batch.len(), 2 * ENTRIES_PER_TUBE);
        if batch[0].tube == 0 {
            second[batch[ENTRIES_PER_TUBE].tube] += 1;
        }
    }
    assert_eq!(second[0], 0);
    assert_eq!(
        second[3], 0,
        "near tube must not be drawn while others have weight"
    );
    let ratio = second[1] as f64 / second[2] as f64;
    assert!(
        (ratio - 2.0).abs() < 0.15,
        "co-occur/far ratio {ratio:.3} from {second:?}"
    );
}

#[test]
fn every_anchor_has_a_positive() {
    let tubes = TubeSet {
        tubes: vec![
            tube(0, 0..2),
            tube(1, 0..3),
            tube(2, 60..70),
            tube(3, 3..9),
            tube(4, 200..201),
        ],
    };
    let sampler = TubeSampler::new(&tubes, None, 50).unwrap();
    // the single-entry tube is never usable
    assert_eq!(sampler.usable_tubes(), &[0, 1, 2, 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let batch = sampler.sample(&tubes, 64, &mut rng).unwrap();
        for b in &batch {
            assert!(batch.iter().filter(|o| o.tube == b.tube).count() >= 2);
            assert!(tubes.tubes[b.tube].entries.contains(&b.entry));
        }
    }
}

#[test]
fn teacher_reproduces_its_training_labels() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    let centres: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..16).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..240 {
        let c = r.random_range(0..4);
        xs.push(
            centres[c]
                .iter()
                .map(|v| v + r.random_range(-0.4..0.4))
                .collect::<Vec<f64>>(),
        );
        ys.push(c);
    }
    let (teacher, log): (ClassifierMLP, _) =
        train_teacher(&xs, &ys, 4, &ClassifierConfig::default()).unwrap();
    assert!(log.epoch_losses.last() < log.epoch_losses.first());
    let agree = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| saf_lab::nn::argmax(&teacher.predict_proba(x)) == y)
        .count();
    assert!(
        agree as f64 >= 0.95 * xs.len() as f64,
        "{agree}/{}",
        xs.len()
    );
}
