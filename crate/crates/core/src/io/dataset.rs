use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::files::{
    create_dir, read_instances, read_json, read_jsonl, read_rgb_png, write_instances, write_json,
    write_jsonl, write_rgb_png,
};
use crate::raster::ClassId;
use crate::scene_sim::{SimConfig, SimFrame, SyntheticSequence, ToolPose, ToolSpec};

pub const DATASET_FORMAT: &str = "saf-lab.dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub sequences: Vec<SequenceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub name: String,
    pub seed: u64,
    pub n_frames: usize,
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    config: SimConfig,
    seed: u64,
    tools: Vec<ToolSpec>,
    overlap_pairs: Vec<(usize, usize)>,
    brightness: f64,
    presence_sw: BTreeSet<ClassId>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    tool_ids: Vec<usize>,
    classes: Vec<Option<ClassId>>,
    poses: Vec<ToolPose>,
    visible: Vec<bool>,
    presence_fw: BTreeSet<ClassId>,
}

pub fn sequence_name(i: usize) -> String {
    format!("seq_{i:03}")
}

pub fn image_path(seq_dir: &Path, t: usize) -> PathBuf {
    seq_dir.join(format!("img_{t:04}.png"))
}

pub fn instances_path(seq_dir: &Path, t: usize) -> PathBuf {
    seq_dir.join(format!("inst_{t:04}.png"))
}

/// Writes sequences as `seq_XXX/` directories of RGB and label PNGs plus
/// JSON records of poses, identities and presence labels.
pub fn write_dataset(dir: &Path, sequences: &[SyntheticSequence]) -> Result<()> {
    create_dir(dir)?;
    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        sequences: sequences
            .iter()
            .enumerate()
            .map(|(i, s)| SequenceEntry {
                name: sequence_name(i),
                seed: s.seed,
                n_frames: s.len(),
            })
            .collect(),
    };
    for (entry, seq) in meta.sequences.iter().zip(sequences) {
        let sd = dir.join(&entry.name);
        create_dir(&sd)?;
        write_json(
            &sd.join("sequence.json"),
            &SequenceRecord {
                config: seq.config.clone(),
                seed: seq.seed,
                tools: seq.tools.clone(),
                overlap_pairs: seq.overlap_pairs.clone(),
                brightness: seq.brightness,
                presence_sw: seq.presence_sw.clone(),
            },
        )?;
        write_jsonl(
            &sd.join("frames.jsonl"),
            seq.frames.iter().enumerate().map(|(t, f)| FrameRecord {
                frame: t,
                tool_ids: f.tool_ids.clone(),
                classes: f.instances.classes().to_vec(),
                poses: f.poses.clone(),
                visible: f.visible.clone(),
                presence_fw: f.presence_fw.clone(),
            }),
        )?;
        seq.frames.par_iter().enumerate().try_for_each(|(t, f)| {
            write_rgb_png(&image_path(&sd, t), &f.image)?;
            write_instances(&instances_path(&sd, t), &f.instances)
        })?;
    }
    write_json(&dir.join("meta.json"), &meta)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join("meta.json");
    let meta: DatasetMeta = read_json(&path)?;
    if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported dataset {} v{}", meta.format, meta.version),
        ));
    }
    Ok(meta)
}

pub fn read_sequence(dir: &Path, entry: &SequenceEntry) -> Result<SyntheticSequence> {
    let sd = dir.join(&entry.name);
    let rec: SequenceRecord = read_json(&sd.join("sequence.json"))?;
    let frames_path = sd.join("frames.jsonl");
    let records: Vec<FrameRecord> = read_jsonl(&frames_path)?;
    if records.len() != entry.n_frames || records.iter().enumerate().any(|(t, r)| r.frame != t) {
        return Err(Error::format(
            frames_path,
            "frame records do not match the dataset index",
        ));
    }
    let frames = records
        .into_par_iter()
        .map(|r| {
            let image = read_rgb_png(&image_path(&sd, r.frame))?;
            let instances = read_instances(&instances_path(&sd, r.frame), r.classes)?;
            Ok(SimFrame {
                image,
                instances,
                tool_ids: r.tool_ids,
                poses: r.poses,
                visible: r.visible,
                presence_fw: r.presence_fw,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticSequence {
        config: rec.config,
        seed: rec.seed,
        tools: rec.tools,
        overlap_pairs: rec.overlap_pairs,
        brightness: rec.brightness,
        frames,
        presence_sw: rec.presence_sw,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<SyntheticSequence>> {
    let meta = read_meta(dir)?;
    meta.sequences
        .iter()
        .map(|e| read_sequence(dir, e))
        .collect()
}
