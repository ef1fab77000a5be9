use std::path::PathBuf;

use clap::Args;
use saf_lab::pipeline::{FieldSource, LabelMode, PipelineConfig, Workspace};
use saf_lab::tubes::FlowMethod;
use saf_lab::weak_classify::WeakMode;
use saf_lab::{Error, Result};

/// Flags overriding the pipeline configuration.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML configuration file; defaults to `config.toml` of the run directory
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory [env: SAF_LAB_DATA]
    #[arg(long, short = 'o', global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Grid squares per side for centroid search
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Convergence threshold (vectors per square pixel)
    #[arg(long, global = true)]
    pub eps_c: Option<f64>,
    /// Number of k-means clusters, i.e. prototypes to label
    #[arg(long, global = true)]
    pub n_km: Option<usize>,
    /// frame-wise or sequence-wise
    #[arg(long, global = true)]
    pub weak_mode: Option<WeakMode>,
    /// auto or human
    #[arg(long, global = true)]
    pub label_mode: Option<LabelMode>,
    /// gt, noisy-oracle or external
    #[arg(long, global = true)]
    pub field_source: Option<FieldSource>,
    #[arg(long, global = true)]
    pub external_fields_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub sigma_px: Option<f64>,
    #[arg(long, global = true)]
    pub boundary_iters: Option<usize>,
    /// gt or block-match
    #[arg(long, global = true)]
    pub flow: Option<FlowMethod>,
}

impl ConfigArgs {
    /// Configuration file (explicit, else the run directory's recorded one,
    /// else defaults) with the flags applied on top.
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => {
                let dir = self
                    .output_dir
                    .clone()
                    .unwrap_or_else(saf_lab::pipeline::default_output_dir);
                let recorded = Workspace::new(&dir).config();
                if recorded.is_file() {
                    PipelineConfig::load(&recorded)?
                } else {
                    PipelineConfig::default()
                }
            }
        };
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        } else if cfg.output_dir.as_os_str().is_empty() {
            cfg.output_dir = saf_lab::pipeline::default_output_dir();
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$($field).+ = v; })*
            };
        }
        set!(
            seed => seed,
            grid => inference.grid_squares_per_side,
            eps_c => inference.eps_c,
            n_km => n_km,
            weak_mode => weak_mode,
            label_mode => label_mode,
            field_source => field_source,
            sigma_px => noise.sigma_px,
            boundary_iters => noise.boundary_iters,
            flow => track.flow,
        );
        if let Some(d) = &self.external_fields_dir {
            cfg.external_fields_dir = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `grid=8,16,32 eps=1,3,5`; a missing key keeps its default list.
pub fn parse_sweep_spec(spec: &str, grids: &mut Vec<usize>, eps: &mut Vec<f64>) -> Result<()> {
    for part in spec.split_whitespace() {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("sweep item `{part}` is not key=values")))?;
        let bad = |v: &str| Error::config(format!("bad sweep value `{v}` for `{key}`"));
        match key {
            "grid" => {
                *grids = values
                    .split(',')
                    .map(|v| v.parse().map_err(|_| bad(v)))
                    .collect::<Result<_>>()?
            }
            "eps" | "eps_c" | "eps-c" => {
                *eps = values
                    .split(',')
                    .map(|v| v.parse().map_err(|_| bad(v)))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::config(format!("unknown sweep key `{other}`"))),
        }
    }
    if grids.is_empty() || eps.is_empty() {
        return Err(Error::config("empty sweep"));
    }
    Ok(())
}
