use std::path::{Path, PathBuf};

use crate::io::sequence_name;

pub const STAGE_DATASET: &str = "dataset";
pub const STAGE_FIELDS: &str = "fields";
pub const STAGE_INSTANCES: &str = "instances";
pub const STAGE_TUBES: &str = "tubes";
pub const STAGE_FEATURES: &str = "features";
pub const STAGE_PROTOTYPES: &str = "prototypes";
pub const STAGE_TEACHER: &str = "teacher";
pub const STAGE_MATCH: &str = "match";
pub const STAGE_STUDENT: &str = "student";
pub const STAGE_EVAL: &str = "eval";

/// Stages of a full run in execution order.
pub const STAGES: [&str; 10] = [
    STAGE_DATASET,
    STAGE_FIELDS,
    STAGE_INSTANCES,
    STAGE_TUBES,
    STAGE_FEATURES,
    STAGE_PROTOTYPES,
    STAGE_TEACHER,
    STAGE_MATCH,
    STAGE_STUDENT,
    STAGE_EVAL,
];

/// Path layout of a run directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn summary(&self, stage: &str) -> PathBuf {
        self.stage(stage).join("summary.json")
    }

    pub fn dataset(&self) -> PathBuf {
        self.stage(STAGE_DATASET)
    }

    pub fn stage_seq(&self, stage: &str, seq: usize) -> PathBuf {
        self.stage(stage).join(sequence_name(seq))
    }

    pub fn field_paths(&self, seq: usize, t: usize) -> (PathBuf, PathBuf) {
        let d = self.stage_seq(STAGE_FIELDS, seq);
        (
            d.join(format!("mask_{t:04}.png")),
            d.join(format!("field_{t:04}.saft")),
        )
    }

    pub fn instances_png(&self, seq: usize, t: usize) -> PathBuf {
        self.stage_seq(STAGE_INSTANCES, seq)
            .join(format!("inst_{t:04}.png"))
    }

    pub fn detections(&self, seq: usize) -> PathBuf {
        self.stage_seq(STAGE_INSTANCES, seq)
            .join("detections.jsonl")
    }

    pub fn session(&self) -> PathBuf {
        self.stage(STAGE_PROTOTYPES).join("session.jsonl")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn timing(&self) -> PathBuf {
        self.root.join("timing.json")
    }
}

/// Field files of an external source directory, same layout as the
/// `fields` stage.
pub fn external_field_paths(dir: &Path, seq: usize, t: usize) -> (PathBuf, PathBuf) {
    let d = dir.join(sequence_name(seq));
    (
        d.join(format!("mask_{t:04}.png")),
        d.join(format!("field_{t:04}.saft")),
    )
}
