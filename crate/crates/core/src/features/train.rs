use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::head::{ProjectionHead, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
use crate::features::sampler::{TubeSampler, DEFAULT_T_FAR};
use crate::features::supcon::supcon_loss_and_grad;
use crate::nn::{Adam, AdamConfig};
use crate::tubes::TubeSet;
use crate::util::sub_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub seed: u64,
    pub t_far: usize,
    /// Defaults to one pass over all tube entries per epoch.
    pub steps_per_epoch: Option<usize>,
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for FeatureTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            lr: 5e-5,
            batch_size: 64,
            tau: 0.1,
            seed: 0,
            t_far: DEFAULT_T_FAR,
            steps_per_epoch: None,
            hidden: DEFAULT_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }
}

/// Standardised descriptors laid out frame by frame:
/// row of `(frame, instance)` is `frame_offsets[frame] + instance`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureDataset<'a> {
    pub features: &'a [Vec<f64>],
    pub frame_offsets: &'a [usize],
    pub tubes: &'a TubeSet,
    pub sequence_of_frame: Option<&'a [usize]>,
}

impl FeatureDataset<'_> {
    pub fn row(&self, frame: usize, instance: usize) -> usize {
        self.frame_offsets[frame] + instance
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains the projection head with Adam on supervised-contrastive batches.
/// Deterministic for a fixed seed; zero epochs return the initialisation.
pub fn train_feature_head(
    data: &FeatureDataset<'_>,
    cfg: &FeatureTrainConfig,
) -> Result<(ProjectionHead, TrainLog)> {
    let Some(first) = data.features.first() else {
        return Err(Error::NotEnoughData("no instance descriptors".into()));
    };
    let mut head = ProjectionHead::init(first.len(), cfg.hidden, cfg.embed_dim, cfg.seed);
    let mut log = TrainLog {
        epoch_losses: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok((head, log));
    }
    let sampler = TubeSampler::new(data.tubes, data.sequence_of_frame, cfg.t_far)?;
    let entries: usize = data.tubes.tubes.iter().map(|t| t.len()).sum();
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| entries.div_ceil(cfg.batch_size))
        .max(1);
    let mut rng = sub_rng(cfg.seed, 0xba7c);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for step in 0..steps {
            let batch = sampler.sample(data.tubes, cfg.batch_size, &mut rng)?;
            let xs: Vec<&[f64]> = batch
                .iter()
                .map(|b| data.features[data.row(b.entry.frame, b.entry.instance)].as_slice())
                .collect();
            let ids: Vec<usize> = batch.iter().map(|b| b.tube).collect();
            let (loss, grad) = head_loss_and_grad(&head, &xs, &ids, cfg.tau)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("feature head epoch {epoch} step {step}"),
                });
            }
            sum += loss;
            let slices = grad.slices();
            opt.step(&mut head.params_mut(), &slices);
        }
        log.epoch_losses.push(sum / steps as f64);
        log::debug!("feature head epoch {epoch}: loss {:.5}", sum / steps as f64);
    }
    Ok((head, log))
}

/// Supervised-contrastive loss of a batch of descriptors through the head,
/// with gradients for every head parameter.
pub fn head_loss_and_grad(
    head: &ProjectionHead,
    xs: &[&[f64]],
    tube_ids: &[usize],
    tau: f64,
) -> Result<(f64, crate::features::head::HeadGrad)> {
    let caches: Vec<_> = xs.iter().map(|x| head.forward(x)).collect();
    let z: Vec<Vec<f64>> = caches.iter().map(|c| c.embedding.clone()).collect();
    let (loss, gz) = supcon_loss_and_grad(&z, tube_ids, tau)?;
    let mut grad = head.zero_grad();
    for ((x, c), g) in xs.iter().zip(&caches).zip(&gz) {
        head.backward(x, c, g, &mut grad);
    }
    Ok((loss, grad))
}

/// Mean cosine similarity within tubes minus the mean across tubes, over
/// all entry pairs.
pub fn tube_similarity_margin(embeddings: &[Vec<f64>], data: &FeatureDataset<'_>) -> f64 {
    let mut rows = Vec::new();
    for t in &data.tubes.tubes {
        for e in &t.entries {
            rows.push((t.id, data.row(e.frame, e.instance)));
        }
    }
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let s: f64 = embeddings[rows[a].1]
                .iter()
                .zip(&embeddings[rows[b].1])
                .map(|(x, y)| x * y)
                .sum();
            if rows[a].0 == rows[b].0 {
                intra += s;
                n_intra += 1;
            } else {
                inter += s;
                n_inter += 1;
            }
        }
    }
    intra / n_intra.max(1) as f64 - inter / n_inter.max(1) as f64
}
