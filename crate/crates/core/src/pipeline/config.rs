use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTrainConfig;
use crate::instantiate::{InferenceParams, NoiseConfig};
use crate::scene_sim::SimConfig;
use crate::tubes::{FlowMethod, DEFAULT_MAX_DIST};
use crate::weak_classify::{ClassifierConfig, WeakMode};

/// Environment variable naming the default output root.
pub const DATA_ENV: &str = "SAF_LAB_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    /// Exact centroid fields of the ground-truth instances.
    Gt,
    /// Ground truth degraded by boundary roughening and vector noise.
    NoisyOracle,
    /// Fields read from `external_fields_dir` in the sparse field layout.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Auto,
    Human,
}

macro_rules! parse_enum {
    ($t:ty, $what:literal, { $($s:literal => $v:expr),* $(,)? }) => {
        impl std::str::FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.replace('-', "_").as_str() {
                    $($s => Ok($v),)*
                    other => Err(Error::config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

parse_enum!(FieldSource, "field source", { "gt" => FieldSource::Gt, "noisy_oracle" => FieldSource::NoisyOracle, "external" => FieldSource::External });
parse_enum!(LabelMode, "label mode", { "auto" => LabelMode::Auto, "human" => LabelMode::Human });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_sequences: 4,
            test_sequences: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub flow: FlowMethod,
    pub max_dist: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            flow: FlowMethod::Gt,
            max_dist: DEFAULT_MAX_DIST,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sim: SimConfig,
    pub split: SplitConfig,
    pub field_source: FieldSource,
    pub external_fields_dir: Option<PathBuf>,
    pub noise: NoiseConfig,
    pub inference: InferenceParams,
    pub track: TrackConfig,
    pub features: FeatureTrainConfig,
    pub n_km: usize,
    pub label_mode: LabelMode,
    pub weak_mode: WeakMode,
    pub teacher: ClassifierConfig,
    pub student: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            sim: SimConfig::default(),
            split: SplitConfig::default(),
            field_source: FieldSource::NoisyOracle,
            external_fields_dir: None,
            noise: NoiseConfig::default(),
            inference: InferenceParams::default(),
            track: TrackConfig::default(),
            features: FeatureTrainConfig::default(),
            n_km: 8,
            label_mode: LabelMode::Auto,
            weak_mode: WeakMode::FrameWise,
            teacher: ClassifierConfig::default(),
            student: ClassifierConfig::default(),
        }
    }
}

/// `$SAF_LAB_DATA` if set, else `./saf-lab-data`.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("saf-lab-data"))
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn n_sequences(&self) -> usize {
        self.split.train_sequences + self.split.test_sequences
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.inference.validate(self.sim.width, self.sim.height)?;
        if self.split.train_sequences == 0 || self.split.test_sequences == 0 {
            return Err(Error::config(
                "need at least one train and one test sequence",
            ));
        }
        if self.n_km == 0 {
            return Err(Error::config("n_km must be positive"));
        }
        if self.field_source == FieldSource::External && self.external_fields_dir.is_none() {
            return Err(Error::config(
                "external field source needs external_fields_dir",
            ));
        }
        if !(self.track.max_dist > 0.0) {
            return Err(Error::config("track.max_dist must be positive"));
        }
        if !(self.features.tau > 0.0) {
            return Err(Error::config("features.tau must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig {
            output_dir: "/tmp/x".into(),
            ..PipelineConfig::default()
        };
        let s = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&s).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = PipelineConfig::from_toml_str(
            "seed = 7\nfield_source = \"gt\"\n[inference]\ngrid_squares_per_side = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.field_source, FieldSource::Gt);
        assert_eq!(cfg.inference.grid_squares_per_side, 16);
        assert_eq!(cfg.inference.eps_c, 5.0);
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn enum_parsing() {
        assert_eq!(
            "noisy-oracle".parse::<FieldSource>().unwrap(),
            FieldSource::NoisyOracle
        );
        assert_eq!("human".parse::<LabelMode>().unwrap(), LabelMode::Human);
        assert!("robot".parse::<LabelMode>().is_err());
    }
}
