use rand::seq::SliceRandom as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, Adam, AdamConfig, Linear, LinearGrad};
use crate::raster::ClassId;
use crate::util::{rng, sub_rng};

pub const CLASSIFIER_FORMAT: &str = "saf-lab.classifier";
pub const CLASSIFIER_VERSION: u32 = 1;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-feature standardisation with learned scale and shift; batch
/// statistics while training, running estimates at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// `e -> hidden` affine, batch norm, ReLU, `hidden -> n_classes` affine and
/// softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMLP {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub n_classes: usize,
    pub hidden: Linear,
    pub norm: BatchNorm,
    pub output: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 1e-4,
            batch_size: 32,
            hidden: 512,
            seed: 0,
        }
    }
}

impl ClassifierMLP {
    pub fn init(in_dim: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let h = Linear::init(in_dim, hidden, &mut r);
        let o = Linear::init(hidden, n_classes, &mut r);
        Self {
            format: CLASSIFIER_FORMAT.into(),
            version: CLASSIFIER_VERSION,
            seed,
            n_classes,
            hidden: h,
            norm: BatchNorm::new(hidden),
            output: o,
        }
    }

    /// Inference-mode class probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden.forward(x);
        let a: Vec<f64> = h
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let y = self.norm.gamma[k] * (v - self.norm.running_mean[k])
                    / (self.norm.running_var[k] + BN_EPS).sqrt()
                    + self.norm.beta[k];
                y.max(0.0)
            })
            .collect();
        softmax(&self.output.forward(&a))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CLASSIFIER_FORMAT || self.version != CLASSIFIER_VERSION {
            return Err(Error::format(
                "classifier",
                format!("unsupported header {} v{}", self.format, self.version),
            ));
        }
        self.hidden.check()?;
        self.output.check()?;
        let hd = self.hidden.out_dim;
        if self.output.in_dim != hd || self.output.out_dim != self.n_classes {
            return Err(Error::format("classifier", "layer shapes do not chain"));
        }
        for v in [
            &self.norm.gamma,
            &self.norm.beta,
            &self.norm.running_mean,
            &self.norm.running_var,
        ] {
            if v.len() != hd || !v.iter().all(|x| x.is_finite()) {
                return Err(Error::format("classifier", "bad normalisation parameters"));
            }
        }
        Ok(())
    }

    /// Training-mode forward and backward over one batch: returns the mean
    /// cross-entropy and parameter gradients, and updates running statistics.
    fn train_batch(
        &mut self,
        xs: &[&[f64]],
        labels: &[ClassId],
    ) -> (f64, [LinearGrad; 2], Vec<f64>, Vec<f64>) {
        let b = xs.len() as f64;
        let hd = self.hidden.out_dim;
        let hs: Vec<Vec<f64>> = xs.iter().map(|x| self.hidden.forward(x)).collect();
        let mut mean = vec![0.0; hd];
        for h in &hs {
            mean.iter_mut().zip(h).for_each(|(m, v)| *m += v / b);
        }
        let mut var = vec![0.0; hd];
        for h in &hs {
            var.iter_mut()
                .zip(h.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / b);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xhat: Vec<Vec<f64>> = hs
            .iter()
            .map(|h| (0..hd).map(|k| (h[k] - mean[k]) * inv_std[k]).collect())
            .collect();
        let ys: Vec<Vec<f64>> = xhat
            .iter()
            .map(|xh| {
                (0..hd)
                    .map(|k| self.norm.gamma[k] * xh[k] + self.norm.beta[k])
                    .collect()
            })
            .collect();
        let acts: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| y.iter().map(|v| v.max(0.0)).collect())
            .collect();

        let mut g_hidden = self.hidden.zero_grad();
        let mut g_out = self.output.zero_grad();
        let mut g_gamma = vec![0.0; hd];
        let mut g_beta = vec![0.0; hd];
        let mut loss = 0.0;
        let mut d_xhat = Vec::with_capacity(xs.len());
        for (i, a) in acts.iter().enumerate() {
            let p = softmax(&self.output.forward(a));
            loss -= p[labels[i]].max(1e-300).ln() / b;
            let mut d_logits: Vec<f64> = p.iter().map(|v| v / b).collect();
            d_logits[labels[i]] -= 1.0 / b;
            let d_a = self.output.backward(a, &d_logits, &mut g_out);
            let dx: Vec<f64> = (0..hd)
                .map(|k| {
                    let dy = if ys[i][k] > 0.0 { d_a[k] } else { 0.0 };
                    g_gamma[k] += dy * xhat[i][k];
                    g_beta[k] += dy;
                    dy * self.norm.gamma[k]
                })
                .collect();
            d_xhat.push(dx);
        }
        let mut sum_d = vec![0.0; hd];
        let mut sum_dx = vec![0.0; hd];
        for (dx, xh) in d_xhat.iter().zip(&xhat) {
            for k in 0..hd {
                sum_d[k] += dx[k];
                sum_dx[k] += dx[k] * xh[k];
            }
        }
        for (i, x) in xs.iter().enumerate() {
            let dh: Vec<f64> = (0..hd)
                .map(|k| inv_std[k] / b * (b * d_xhat[i][k] - sum_d[k] - xhat[i][k] * sum_dx[k]))
                .collect();
            self.hidden.backward(x, &dh, &mut g_hidden);
        }

        let unbiased = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
        for k in 0..hd {
            self.norm.running_mean[k] =
                (1.0 - BN_MOMENTUM) * self.norm.running_mean[k] + BN_MOMENTUM * mean[k];
            self.norm.running_var[k] =
                (1.0 - BN_MOMENTUM) * self.norm.running_var[k] + BN_MOMENTUM * var[k] * unbiased;
        }
        (loss, [g_hidden, g_out], g_gamma, g_beta)
    }
}

/// Argmax class (lowest id on ties) and the probability vector.
pub fn classify(model: &ClassifierMLP, embedding: &[f64]) -> Result<(ClassId, Vec<f64>)> {
    if !embedding.iter().all(|v| v.is_finite()) {
        return Err(Error::config("embedding must be finite"));
    }
    let p = model.predict_proba(embedding);
    Ok((argmax(&p), p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch cross-entropy training with Adam; a final batch of a single
/// sample is merged into the previous one so batch statistics stay defined.
pub fn train_classifier(
    xs: &[Vec<f64>],
    labels: &[ClassId],
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierMLP, ClassifierLog)> {
    if xs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: (xs.len(), 1),
            actual: (labels.len(), 1),
        });
    }
    if xs.len() < 2 {
        return Err(Error::NotEnoughData(format!(
            "{} labelled samples",
            xs.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::DegenerateLabels(format!(
            "label {bad} outside {n_classes} classes"
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::config("classifier batch size must be at least 2"));
    }
    let mut model = ClassifierMLP::init(xs[0].len(), cfg.hidden, n_classes, cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut shuffle = sub_rng(cfg.seed, 0x5f1e);
    let mut log = ClassifierLog {
        epoch_losses: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
            batches.pop();
            let n = batches.len();
            let start = (n - 1) * cfg.batch_size;
            batches[n - 1] = &order[start..];
        }
        let mut sum = 0.0;
        for idx in &batches {
            let bx: Vec<&[f64]> = idx.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<ClassId> = idx.iter().map(|&i| labels[i]).collect();
            let (loss, [gh, go], gg, gb) = model.train_batch(&bx, &by);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: format!("classifier epoch {epoch}"),
                });
            }
            sum += loss;
            let m = &mut model;
            opt.step(
                &mut [
                    &mut m.hidden.weight,
                    &mut m.hidden.bias,
                    &mut m.norm.gamma,
                    &mut m.norm.beta,
                    &mut m.output.weight,
                    &mut m.output.bias,
                ],
                &[&gh.weight, &gh.bias, &gg, &gb, &go.weight, &go.bias],
            );
        }
        log.epoch_losses.push(sum / batches.len() as f64);
    }
    Ok((model, log))
}

/// Teacher training on propagated prototype labels; needs two distinct
/// classes among the labels.
pub fn train_teacher(
    xs: &[Vec<f64>],
    labels: &[ClassId],
    n_classes: usize,
    cfg: &ClassifierConfig,
) -> Result<(ClassifierMLP, ClassifierLog)> {
    let first = labels.first().copied();
    if labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::DegenerateLabels(
            "all prototype labels are identical".into(),
        ));
    }
    train_classifier(xs, labels, n_classes, cfg)
}
