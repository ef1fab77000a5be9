use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval_metrics::MetricsReport;
use crate::io::{read_json, write_json};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::stages::*;
use crate::pipeline::workspace::*;

pub const REPORT_FORMAT: &str = "saf-lab.report";
pub const REPORT_VERSION: u32 = 1;

/// Deterministic outcome of a full run: the effective configuration (output
/// directory cleared), every stage summary and the test metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub stages: BTreeMap<String, Value>,
    pub metrics: MetricsReport,
}

/// Wall-clock seconds per executed stage; resumed stages are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stages: BTreeMap<String, f64>,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Skip stages whose summary already exists.
    pub resume: bool,
}

fn to_value<T: Serialize>(v: T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Json {
        path: "<summary>".into(),
        source: e,
    })
}

/// Runs one named stage and returns its summary.
pub fn run_stage(stage: &str, cfg: &PipelineConfig, ws: &Workspace) -> Result<Value> {
    match stage {
        STAGE_DATASET => to_value(stage_dataset(cfg, ws)?),
        STAGE_FIELDS => to_value(stage_fields(cfg, ws)?),
        STAGE_INSTANCES => to_value(stage_instances(cfg, ws)?),
        STAGE_TUBES => to_value(stage_tubes(cfg, ws)?),
        STAGE_FEATURES => to_value(stage_features(cfg, ws)?),
        STAGE_PROTOTYPES => to_value(stage_prototypes(cfg, ws)?),
        STAGE_TEACHER => to_value(stage_teacher(cfg, ws)?),
        STAGE_MATCH => to_value(stage_match(cfg, ws)?),
        STAGE_STUDENT => to_value(stage_student(cfg, ws)?),
        STAGE_EVAL => to_value(stage_eval(cfg, ws)?),
        other => Err(Error::config(format!("unknown stage `{other}`"))),
    }
}

/// Latest stage before `stage` whose summary exists on disk.
fn last_good(ws: &Workspace, stage: &str) -> String {
    STAGES
        .iter()
        .take_while(|&&s| s != stage)
        .filter(|s| ws.summary(s).is_file())
        .last()
        .map(|s| ws.summary(s).display().to_string())
        .unwrap_or_else(|| "none".into())
}

/// Runs `stage` with its error wrapped in [`Error::Stage`].
pub fn run_stage_checked(stage: &str, cfg: &PipelineConfig, ws: &Workspace) -> Result<Value> {
    run_stage(stage, cfg, ws).map_err(|e| Error::Stage {
        stage: STAGES
            .iter()
            .find(|&&s| s == stage)
            .copied()
            .unwrap_or("unknown"),
        last_good: last_good(ws, stage),
        source: Box::new(e),
    })
}

/// Configuration as recorded in a run directory.
pub fn recorded_config(cfg: &PipelineConfig) -> PipelineConfig {
    PipelineConfig {
        output_dir: Default::default(),
        ..cfg.clone()
    }
}

/// Writes `config.toml`, or with `resume` checks it against `cfg`.
pub fn prepare_workspace(cfg: &PipelineConfig, resume: bool) -> Result<Workspace> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.output_dir);
    crate::io::create_dir(ws.root())?;
    let path = ws.config();
    if resume && path.is_file() {
        let old = PipelineConfig::load(&path)?;
        if recorded_config(&old) != recorded_config(cfg) {
            return Err(Error::config(format!(
                "{} was produced with a different configuration; rerun without resume",
                ws.root().display()
            )));
        }
    } else {
        let s = recorded_config(cfg).to_toml_string()?;
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    }
    Ok(ws)
}

/// Runs every stage in order and writes `report.json` and `timing.json`.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunReport> {
    let ws = prepare_workspace(cfg, opts.resume)?;
    let start = Instant::now();
    let mut timing = Timing::default();
    let mut stages = BTreeMap::new();
    for stage in STAGES {
        let summary = if opts.resume && ws.summary(stage).is_file() {
            log::info!("{stage}: reusing {}", ws.summary(stage).display());
            read_json(&ws.summary(stage))?
        } else {
            let t = Instant::now();
            let v = run_stage_checked(stage, cfg, &ws)?;
            let secs = t.elapsed().as_secs_f64();
            log::info!("{stage}: done in {secs:.2}s");
            timing.stages.insert(stage.to_string(), secs);
            v
        };
        stages.insert(stage.to_string(), summary);
    }
    let metrics: MetricsReport = read_json(&ws.stage(STAGE_EVAL).join("metrics.json"))?;
    let report = RunReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        config: recorded_config(cfg),
        stages,
        metrics,
    };
    timing.total = start.elapsed().as_secs_f64();
    write_json(&ws.report(), &report)?;
    write_json(&ws.timing(), &timing)?;
    Ok(report)
}
