use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, LinearGrad};
use crate::util::rng;

pub const HEAD_FORMAT: &str = "saf-lab.projection-head";
pub const HEAD_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED_DIM: usize = 16;

/// `d -> hidden -> e` projection with a ReLU in between and L2-normalised
/// output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub layers: [Linear; 2],
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct HeadCache {
    pub hidden: Vec<f64>,
    pub raw: Vec<f64>,
    pub norm: f64,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HeadGrad {
    pub layers: [LinearGrad; 2],
}

const MIN_NORM: f64 = 1e-12;

impl ProjectionHead {
    pub fn init(in_dim: usize, hidden: usize, embed_dim: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let l1 = Linear::init(in_dim, hidden, &mut r);
        let l2 = Linear::init(hidden, embed_dim, &mut r);
        Self {
            format: HEAD_FORMAT.into(),
            version: HEAD_VERSION,
            seed,
            layers: [l1, l2],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[1].out_dim
    }

    pub fn forward(&self, x: &[f64]) -> HeadCache {
        let hidden: Vec<f64> = self.layers[0]
            .forward(x)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let raw = self.layers[1].forward(&hidden);
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(MIN_NORM);
        let embedding = raw.iter().map(|v| v / norm).collect();
        HeadCache {
            hidden,
            raw,
            norm,
            embedding,
        }
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).embedding
    }

    pub fn zero_grad(&self) -> HeadGrad {
        HeadGrad {
            layers: [self.layers[0].zero_grad(), self.layers[1].zero_grad()],
        }
    }

    /// Accumulates parameter gradients given dL/d(embedding).
    pub fn backward(
        &self,
        x: &[f64],
        cache: &HeadCache,
        grad_embedding: &[f64],
        grad: &mut HeadGrad,
    ) {
        let z = &cache.embedding;
        let dot: f64 = z.iter().zip(grad_embedding).map(|(a, b)| a * b).sum();
        let grad_raw: Vec<f64> = z
            .iter()
            .zip(grad_embedding)
            .map(|(zi, gi)| (gi - zi * dot) / cache.norm)
            .collect();
        let [g1, g2] = &mut grad.layers;
        let grad_hidden = self.layers[1].backward(&cache.hidden, &grad_raw, g2);
        let grad_pre: Vec<f64> = grad_hidden
            .iter()
            .zip(&cache.hidden)
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        self.layers[0].backward(x, &grad_pre, g1);
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let [l1, l2] = &mut self.layers;
        vec![&mut l1.weight, &mut l1.bias, &mut l2.weight, &mut l2.bias]
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != HEAD_FORMAT || self.version != HEAD_VERSION {
            return Err(Error::format(
                "projection head",
                format!("unsupported header {} v{}", self.format, self.version),
            ));
        }
        for l in &self.layers {
            l.check()?;
        }
        if self.layers[0].out_dim != self.layers[1].in_dim {
            return Err(Error::format(
                "projection head",
                "layer shapes do not chain",
            ));
        }
        Ok(())
    }
}

impl HeadGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let [l1, l2] = &self.layers;
        vec![&l1.weight, &l1.bias, &l2.weight, &l2.bias]
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_unit_norm() {
        let head = ProjectionHead::init(5, 8, 3, 1);
        for k in 0..20 {
            let x: Vec<f64> = (0..5).map(|i| ((i * 7 + k) % 11) as f64 - 5.0).collect();
            let z = head.embed(&x);
            let n: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let head = ProjectionHead::init(48, 64, 16, 99);
        let s = serde_json::to_string(&head).unwrap();
        let back: ProjectionHead = serde_json::from_str(&s).unwrap();
        assert_eq!(back, head);
        back.validate().unwrap();
    }
}
