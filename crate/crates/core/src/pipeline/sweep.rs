use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_metrics::{ap_class_agnostic, FrameDetections};
use crate::instantiate::{extract_instances, InferenceParams};
use crate::io::{create_dir, read_field, read_meta, read_sequence, write_json};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::stages::{Split, SplitIndex};
use crate::pipeline::workspace::{Workspace, STAGE_FIELDS};

pub const SWEEP_GRIDS: [usize; 5] = [8, 16, 32, 64, 128];
pub const SWEEP_EPS: [f64; 5] = [1.0, 3.0, 5.0, 7.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub grid_squares_per_side: usize,
    pub eps_c: f64,
    pub ap50: f64,
    pub fallback_frames: usize,
    pub mean_instances: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn get(&self, grid: usize, eps_c: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .find(|p| p.grid_squares_per_side == grid && p.eps_c == eps_c)
    }

    pub fn best(&self) -> Option<&SweepPoint> {
        self.points.iter().fold(None, |b: Option<&SweepPoint>, p| {
            if b.is_none_or(|b| p.ap50 > b.ap50) {
                Some(p)
            } else {
                b
            }
        })
    }
}

/// AP@0.5 on the test split for every inference setting of the grid, reusing
/// the stored fields of a run directory. Writes `sweep/sweep.json`.
pub fn run_sweep(cfg: &PipelineConfig, grids: &[usize], eps: &[f64]) -> Result<SweepReport> {
    let ws = Workspace::new(&cfg.output_dir);
    if !ws.summary(STAGE_FIELDS).is_file() {
        return Err(Error::config(format!(
            "no fields under {}; run the pipeline first",
            ws.root().display()
        )));
    }
    let meta = read_meta(&ws.dataset())?;
    let index = SplitIndex::new(cfg, &meta, Split::Test)?;
    let mut fields = Vec::new();
    let mut gts = Vec::new();
    for &s in &index.sequences {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        for t in 0..seq.len() {
            let (mp, vp) = ws.field_paths(s, t);
            fields.push(read_field(&mp, &vp)?);
        }
        gts.extend(seq.frames.into_iter().map(|f| f.instances));
    }
    let settings: Vec<(usize, f64)> = grids
        .iter()
        .flat_map(|&g| eps.iter().map(move |&e| (g, e)))
        .collect();
    let points = settings
        .par_iter()
        .map(|&(g, e)| {
            let params = InferenceParams {
                grid_squares_per_side: g,
                eps_c: e,
            };
            let mut preds = Vec::with_capacity(fields.len());
            let mut fallback = 0;
            for (field, mask) in &fields {
                let ex = extract_instances(field, mask, &params)?;
                fallback += ex.fallback as usize;
                preds.push(FrameDetections {
                    instances: ex.instances,
                    scores: ex.scores,
                });
            }
            let n: usize = preds.iter().map(|p| p.instances.len()).sum();
            Ok(SweepPoint {
                grid_squares_per_side: g,
                eps_c: e,
                ap50: ap_class_agnostic(&preds, &gts, 0.5)?,
                fallback_frames: fallback,
                mean_instances: n as f64 / preds.len().max(1) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = SweepReport { points };
    let dir = ws.root().join("sweep");
    create_dir(&dir)?;
    write_json(&dir.join("sweep.json"), &report)?;
    Ok(report)
}
