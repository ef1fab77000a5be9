use saf_lab::eval_metrics::binary_iou;
use saf_lab::instantiate::{extract_instances, noisy_oracle, InferenceParams, NoiseConfig};
use saf_lab::scene_sim::{gen_sequence, gt_displacement, SimConfig, SimFrame};

fn frames(n: usize) -> Vec<SimFrame> {
    let cfg = SimConfig::default();
    let mut out = Vec::new();
    for seed in 300.. {
        let seq = gen_sequence(&cfg, seed).unwrap();
        out.extend(
            seq.frames
                .into_iter()
                .step_by(10)
                .filter(|f| !f.instances.is_empty()),
        );
        if out.len() >= n {
            out.truncate(n);
            return out;
        }
    }
    unreachable!()
}

#[test]
fn default_noise_keeps_instance_counts() {
    let params = InferenceParams::default();
    let fs = frames(200);
    let mut hits = 0;
    for (i, f) in fs.iter().enumerate() {
        let cfg = NoiseConfig {
            seed: i as u64,
            ..NoiseConfig::default()
        };
        let (field, mask) =
            noisy_oracle(&gt_displacement(&f.instances), &f.instances.binary(), &cfg).unwrap();
        let ex = extract_instances(&field, &mask, &params).unwrap();
        hits += (ex.instances.len() == f.instances.len()) as usize;
    }
    assert!(hits as f64 >= 0.95 * fs.len() as f64, "{hits}/{}", fs.len());
}

#[test]
fn boundary_noise_is_calibrated() {
    let fs = frames(100);
    let mean = fs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let gt = f.instances.binary();
            let cfg = NoiseConfig {
                seed: 1000 + i as u64,
                ..NoiseConfig::default()
            };
            let (_, mask) = noisy_oracle(&gt_displacement(&f.instances), &gt, &cfg).unwrap();
            binary_iou(&mask, &gt)
        })
        .sum::<f64>()
        / fs.len() as f64;
    assert!((mean - 0.83).abs() <= 0.03, "mean binary IoU {mean:.4}");
}
