use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_metrics::{
    ap_class_agnostic, binary_iou, challenge_iou, iou_matrix, FrameDetections, MetricsReport,
};
use crate::features::{
    extract_descriptor, train_feature_head, tube_similarity_margin, FeatureDataset, Standardizer,
};
use crate::instantiate::{
    cc_label, detect_overlap, extract_instances, fabricate_field, noisy_oracle, NoiseConfig,
};
use crate::io::{
    create_dir, read_field, read_instances, read_json, read_jsonl, read_meta, read_sequence,
    write_dataset, write_field, write_instances, write_json, write_jsonl, DatasetMeta, Tensor,
};
use crate::nn::argmax;
use crate::pipeline::config::{FieldSource, LabelMode, PipelineConfig};
use crate::pipeline::session::{read_session, render_overlay, write_session, SessionEntry};
use crate::pipeline::workspace::*;
use crate::raster::{ClassId, InstanceMaskSet};
use crate::scene_sim::{gen_sequence, gt_flow, SyntheticSequence};
use crate::tubes::{estimate_flow, tube_purity, FlowMethod, TubeBuilder, TubeSet};
use crate::util::derive_seed;
use crate::weak_classify::{
    auto_label, kmeans_pp, match_frames, propagate_labels, select_prototypes, train_classifier,
    train_teacher, ClassifierConfig, ClassifierMLP, ClusterModel, MatchedLabels, Prototype,
    PrototypeSet, WeakFrame, WeakMode, DEFAULT_MAX_ITER,
};

pub fn sequence_seed(run_seed: u64, index: usize) -> u64 {
    derive_seed(run_seed, 0x5e90_0000 + index as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Frames of one split laid end to end; `offsets[k]` is the first global
/// frame of the split's `k`-th sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndex {
    pub sequences: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl SplitIndex {
    pub fn new(cfg: &PipelineConfig, meta: &DatasetMeta, split: Split) -> Result<Self> {
        let n = cfg.n_sequences();
        if meta.sequences.len() != n {
            return Err(Error::config(format!(
                "dataset holds {} sequences, config expects {n}",
                meta.sequences.len()
            )));
        }
        let sequences: Vec<usize> = match split {
            Split::Train => (0..cfg.split.train_sequences).collect(),
            Split::Test => (cfg.split.train_sequences..n).collect(),
        };
        let mut offsets = vec![0];
        for &s in &sequences {
            offsets.push(offsets.last().unwrap() + meta.sequences[s].n_frames);
        }
        Ok(Self { sequences, offsets })
    }

    pub fn n_frames(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// `(position in split, frame)` of a global frame index.
    pub fn locate(&self, global: usize) -> Option<(usize, usize)> {
        if global >= self.n_frames() {
            return None;
        }
        let k = self.offsets.partition_point(|&o| o <= global) - 1;
        Some((k, global - self.offsets[k]))
    }

    /// Sequence position of every global frame.
    pub fn sequence_of_frame(&self) -> Vec<usize> {
        (0..self.sequences.len())
            .flat_map(|k| std::iter::repeat_n(k, self.offsets[k + 1] - self.offsets[k]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: usize,
    pub scores: Vec<f64>,
    pub fallback: bool,
}

/// Predicted instances and scores of one sequence.
#[derive(Clone, Debug)]
pub struct PredictedSequence {
    pub frames: Vec<InstanceMaskSet>,
    pub records: Vec<DetectionRecord>,
}

pub fn load_predictions(ws: &Workspace, seq: usize) -> Result<PredictedSequence> {
    let path = ws.detections(seq);
    let records: Vec<DetectionRecord> = read_jsonl(&path)?;
    if records.iter().enumerate().any(|(t, r)| r.frame != t) {
        return Err(Error::format(path, "detection records out of order"));
    }
    let frames = records
        .par_iter()
        .map(|r| read_instances(&ws.instances_png(seq, r.frame), vec![None; r.scores.len()]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictedSequence { frames, records })
}

/// Index of the ground-truth instance with the highest IoU against every
/// predicted instance (`None` without overlap).
pub fn gt_match(pred: &InstanceMaskSet, gt: &InstanceMaskSet) -> Result<Vec<Option<usize>>> {
    let m = iou_matrix(pred, gt)?;
    Ok(m.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in row.iter().enumerate() {
                if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect())
}

/// Ground-truth class of every predicted instance.
pub fn gt_classes(pred: &InstanceMaskSet, gt: &InstanceMaskSet) -> Result<Vec<Option<ClassId>>> {
    Ok(gt_match(pred, gt)?
        .into_iter()
        .map(|m| m.and_then(|j| gt.class(j)))
        .collect())
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn agreement(a: &[Option<ClassId>], b: &[Option<ClassId>]) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.is_some() && x == y)
        .count() as f64
        / n
}

// ---------------------------------------------------------------- dataset

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub sequences: usize,
    pub frames: usize,
    pub instances: usize,
    pub instances_per_frame: Vec<usize>,
    pub overlap_sequences: usize,
}

pub fn stage_dataset(cfg: &PipelineConfig, ws: &Workspace) -> Result<DatasetSummary> {
    let seqs = (0..cfg.n_sequences())
        .into_par_iter()
        .map(|i| gen_sequence(&cfg.sim, sequence_seed(cfg.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&ws.dataset(), &seqs)?;
    let mut hist = vec![0usize; cfg.sim.max_instances_per_frame + 1];
    let mut instances = 0;
    for f in seqs.iter().flat_map(|s| &s.frames) {
        hist[f.instances.len().min(cfg.sim.max_instances_per_frame)] += 1;
        instances += f.instances.len();
    }
    let summary = DatasetSummary {
        sequences: seqs.len(),
        frames: seqs.iter().map(|s| s.len()).sum(),
        instances,
        instances_per_frame: hist,
        overlap_sequences: seqs.iter().filter(|s| !s.overlap_pairs.is_empty()).count(),
    };
    write_json(&ws.summary(STAGE_DATASET), &summary)?;
    Ok(summary)
}

// ----------------------------------------------------------------- fields

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldsSummary {
    pub source: FieldSource,
    pub binary_iou_train: f64,
    pub binary_iou_test: f64,
}

fn noise_for(cfg: &PipelineConfig, seq: usize, t: usize) -> NoiseConfig {
    NoiseConfig {
        seed: derive_seed(
            derive_seed(cfg.seed ^ cfg.noise.seed.rotate_left(17), seq as u64),
            t as u64,
        ),
        ..cfg.noise
    }
}

pub fn stage_fields(cfg: &PipelineConfig, ws: &Workspace) -> Result<FieldsSummary> {
    let meta = read_meta(&ws.dataset())?;
    let mut per_seq = Vec::new();
    for (s, entry) in meta.sequences.iter().enumerate() {
        let seq = read_sequence(&ws.dataset(), entry)?;
        create_dir(&ws.stage_seq(STAGE_FIELDS, s))?;
        let ious = seq
            .frames
            .par_iter()
            .enumerate()
            .map(|(t, f)| {
                let gt_mask = f.instances.binary();
                let (field, mask) = match cfg.field_source {
                    FieldSource::Gt => (fabricate_field(&f.instances), gt_mask.clone()),
                    FieldSource::NoisyOracle => noisy_oracle(
                        &fabricate_field(&f.instances),
                        &gt_mask,
                        &noise_for(cfg, s, t),
                    )?,
                    FieldSource::External => {
                        let dir = cfg.external_fields_dir.as_ref().expect("validated");
                        let (mp, vp) = external_field_paths(dir, s, t);
                        read_field(&mp, &vp)?
                    }
                };
                mask.check_dims(cfg.sim.width, cfg.sim.height)?;
                let (mp, vp) = ws.field_paths(s, t);
                write_field(&mp, &vp, &field, &mask)?;
                Ok(binary_iou(&mask, &gt_mask))
            })
            .collect::<Result<Vec<f64>>>()?;
        per_seq.push(ious);
    }
    let split_mean = |range: std::ops::Range<usize>| mean(per_seq[range].iter().flatten().copied());
    let summary = FieldsSummary {
        source: cfg.field_source,
        binary_iou_train: split_mean(0..cfg.split.train_sequences),
        binary_iou_test: split_mean(cfg.split.train_sequences..cfg.n_sequences()),
    };
    write_json(&ws.summary(STAGE_FIELDS), &summary)?;
    Ok(summary)
}

// -------------------------------------------------------------- instances

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancesSummary {
    pub frames: usize,
    pub instances: usize,
    pub fallback_frames: usize,
    /// Frames whose connected components of the tool mask match the true
    /// instance count.
    pub cc_count_agreement: f64,
    /// Fraction of tool pixels in full-width components.
    pub overlap_pixel_fraction: f64,
}

pub fn stage_instances(cfg: &PipelineConfig, ws: &Workspace) -> Result<InstancesSummary> {
    let meta = read_meta(&ws.dataset())?;
    let (mut frames, mut instances, mut fallback, mut cc_ok, mut ov, mut tool) =
        (0, 0, 0, 0usize, 0usize, 0usize);
    for (s, entry) in meta.sequences.iter().enumerate() {
        let seq = read_sequence(&ws.dataset(), entry)?;
        create_dir(&ws.stage_seq(STAGE_INSTANCES, s))?;
        let results = (0..seq.len())
            .into_par_iter()
            .map(|t| {
                let (mp, vp) = ws.field_paths(s, t);
                let (field, mask) = read_field(&mp, &vp)?;
                let ex = extract_instances(&field, &mask, &cfg.inference)?;
                write_instances(&ws.instances_png(s, t), &ex.instances)?;
                let cc = cc_label(&mask);
                let overlap = detect_overlap(&cc, cfg.sim.width).count();
                let stats = (
                    cc.len() == seq.frames[t].instances.len(),
                    overlap,
                    mask.count(),
                );
                Ok((
                    DetectionRecord {
                        frame: t,
                        scores: ex.scores,
                        fallback: ex.fallback,
                    },
                    stats,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, (ok, o, n)) in &results {
            frames += 1;
            instances += r.scores.len();
            fallback += r.fallback as usize;
            cc_ok += *ok as usize;
            ov += o;
            tool += n;
        }
        write_jsonl(&ws.detections(s), results.iter().map(|(r, _)| r))?;
    }
    let summary = InstancesSummary {
        frames,
        instances,
        fallback_frames: fallback,
        cc_count_agreement: cc_ok as f64 / frames.max(1) as f64,
        overlap_pixel_fraction: ov as f64 / tool.max(1) as f64,
    };
    write_json(&ws.summary(STAGE_INSTANCES), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------ tubes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubesSummary {
    pub flow: FlowMethod,
    pub train_tubes: usize,
    pub train_purity: f64,
    pub test_tubes: usize,
    pub test_purity: f64,
}

fn tubes_file(split: Split) -> &'static str {
    match split {
        Split::Train => "train_tubes.jsonl",
        Split::Test => "test_tubes.jsonl",
    }
}

/// Tubes of every sequence of a split with global frame indices, plus the
/// ground-truth tool identity of every `(frame, instance)`.
fn split_tubes(
    cfg: &PipelineConfig,
    ws: &Workspace,
    meta: &DatasetMeta,
    index: &SplitIndex,
) -> Result<(TubeSet, Vec<Vec<Option<usize>>>)> {
    let mut all = TubeSet::default();
    let mut identity = Vec::new();
    for (k, &s) in index.sequences.iter().enumerate() {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        let pred = load_predictions(ws, s)?;
        let flows = (0..seq.len().saturating_sub(1))
            .into_par_iter()
            .map(|t| match cfg.track.flow {
                FlowMethod::Gt => gt_flow(&seq, t),
                FlowMethod::BlockMatch => estimate_flow(
                    &seq.frames[t].image,
                    &seq.frames[t + 1].image,
                    FlowMethod::BlockMatch,
                    None,
                ),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut b = TubeBuilder::new(cfg.track.max_dist);
        for (t, f) in pred.frames.iter().enumerate() {
            b.push(f, t.checked_sub(1).map(|p| &flows[p]))?;
            let m = gt_match(f, &seq.frames[t].instances)?;
            identity.push(
                m.into_iter()
                    .map(|j| j.map(|j| seq.frames[t].tool_ids[j]))
                    .collect(),
            );
        }
        for mut tube in b.finish().tubes {
            tube.id = all.tubes.len();
            tube.entries
                .iter_mut()
                .for_each(|e| e.frame += index.offsets[k]);
            all.tubes.push(tube);
        }
    }
    Ok((all, identity))
}

pub fn stage_tubes(cfg: &PipelineConfig, ws: &Workspace) -> Result<TubesSummary> {
    let meta = read_meta(&ws.dataset())?;
    let dir = ws.stage(STAGE_TUBES);
    create_dir(&dir)?;
    let mut out = Vec::new();
    for split in [Split::Train, Split::Test] {
        let index = SplitIndex::new(cfg, &meta, split)?;
        let (tubes, identity) = split_tubes(cfg, ws, &meta, &index)?;
        let path = dir.join(tubes_file(split));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        tubes
            .write_jsonl(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(&path, e))?;
        out.push((tubes.len(), tube_purity(&tubes, &identity)));
    }
    let summary = TubesSummary {
        flow: cfg.track.flow,
        train_tubes: out[0].0,
        train_purity: out[0].1,
        test_tubes: out[1].0,
        test_purity: out[1].1,
    };
    write_json(&ws.summary(STAGE_TUBES), &summary)?;
    Ok(summary)
}

pub fn read_tubes(ws: &Workspace, split: Split) -> Result<TubeSet> {
    let path = ws.stage(STAGE_TUBES).join(tubes_file(split));
    let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    TubeSet::read_jsonl(std::io::BufReader::new(f))
}

// --------------------------------------------------------------- features

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSummary {
    pub train_rows: usize,
    pub test_rows: usize,
    pub epochs: usize,
    pub first_epoch_loss: Option<f64>,
    pub last_epoch_loss: Option<f64>,
    pub train_tube_margin: f64,
    pub test_tube_margin: f64,
}

/// Row layout of a split's instances: row of `(frame, instance)` is
/// `frame_offsets[frame] + instance`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIndex {
    pub frame_offsets: Vec<usize>,
}

impl RowIndex {
    pub fn n_rows(&self) -> usize {
        self.frame_offsets.last().copied().unwrap_or(0)
    }

    pub fn rows_of(&self, frame: usize) -> std::ops::Range<usize> {
        self.frame_offsets[frame]..self.frame_offsets[frame + 1]
    }
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn split_descriptors(
    ws: &Workspace,
    meta: &DatasetMeta,
    index: &SplitIndex,
) -> Result<(Vec<Vec<f32>>, RowIndex)> {
    let mut rows = Vec::new();
    let mut offsets = vec![0];
    for &s in &index.sequences {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        let pred = load_predictions(ws, s)?;
        let per_frame = pred
            .frames
            .par_iter()
            .zip(&seq.frames)
            .map(|(p, f)| {
                p.masks()
                    .iter()
                    .map(|m| extract_descriptor(&f.image, m))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for d in per_frame {
            offsets.push(offsets.last().unwrap() + d.len());
            rows.extend(d);
        }
    }
    Ok((
        rows,
        RowIndex {
            frame_offsets: offsets,
        },
    ))
}

pub fn stage_features(cfg: &PipelineConfig, ws: &Workspace) -> Result<FeaturesSummary> {
    let meta = read_meta(&ws.dataset())?;
    let dir = ws.stage(STAGE_FEATURES);
    create_dir(&dir)?;
    let train_index = SplitIndex::new(cfg, &meta, Split::Train)?;
    let test_index = SplitIndex::new(cfg, &meta, Split::Test)?;
    let (train_raw, train_rows) = split_descriptors(ws, &meta, &train_index)?;
    let (test_raw, test_rows) = split_descriptors(ws, &meta, &test_index)?;
    let width = crate::features::DESCRIPTOR_DIM;
    Tensor::from_rows(&train_raw, width)?.write(&dir.join("train_descriptors.saft"))?;
    Tensor::from_rows(&test_raw, width)?.write(&dir.join("test_descriptors.saft"))?;
    write_json(&dir.join("train_rows.json"), &train_rows)?;
    write_json(&dir.join("test_rows.json"), &test_rows)?;

    let standardizer = Standardizer::fit(&train_raw)?;
    write_json(&dir.join("standardizer.json"), &standardizer)?;
    let train_x: Vec<Vec<f64>> = train_raw.iter().map(|r| standardizer.apply(r)).collect();
    let test_x: Vec<Vec<f64>> = test_raw.iter().map(|r| standardizer.apply(r)).collect();

    let train_tubes = read_tubes(ws, Split::Train)?;
    let seq_of_frame = train_index.sequence_of_frame();
    let data = FeatureDataset {
        features: &train_x,
        frame_offsets: &train_rows.frame_offsets,
        tubes: &train_tubes,
        sequence_of_frame: Some(&seq_of_frame),
    };
    let fcfg = crate::features::FeatureTrainConfig {
        seed: derive_seed(cfg.seed, 0xfea7 ^ cfg.features.seed),
        ..cfg.features.clone()
    };
    let (head, log) = train_feature_head(&data, &fcfg)?;
    write_json(&dir.join("head.json"), &head)?;
    write_json(&dir.join("train_log.json"), &log)?;

    let embed = |x: &[Vec<f64>]| -> Vec<Vec<f64>> { x.par_iter().map(|r| head.embed(r)).collect() };
    let (train_e, test_e) = (embed(&train_x), embed(&test_x));
    let e = head.embed_dim();
    Tensor::from_rows(&train_e, e)?.write(&dir.join("train_embeddings.saft"))?;
    Tensor::from_rows(&test_e, e)?.write(&dir.join("test_embeddings.saft"))?;

    let test_tubes = read_tubes(ws, Split::Test)?;
    let test_data = FeatureDataset {
        features: &test_x,
        frame_offsets: &test_rows.frame_offsets,
        tubes: &test_tubes,
        sequence_of_frame: None,
    };
    let summary = FeaturesSummary {
        train_rows: train_rows.n_rows(),
        test_rows: test_rows.n_rows(),
        epochs: fcfg.epochs,
        first_epoch_loss: log.epoch_losses.first().copied(),
        last_epoch_loss: log.epoch_losses.last().copied(),
        train_tube_margin: tube_similarity_margin(&train_e, &data),
        test_tube_margin: tube_similarity_margin(&test_e, &test_data),
    };
    write_json(&ws.summary(STAGE_FEATURES), &summary)?;
    Ok(summary)
}

/// Embeddings and row layout of a split as written by the features stage.
pub fn load_embeddings(ws: &Workspace, split: Split) -> Result<(Vec<Vec<f64>>, RowIndex)> {
    let dir = ws.stage(STAGE_FEATURES);
    let name = split_name(split);
    let t = Tensor::<f64>::read(&dir.join(format!("{name}_embeddings.saft")))?;
    let rows: RowIndex = read_json(&dir.join(format!("{name}_rows.json")))?;
    let emb = if t.data.is_empty() {
        Vec::new()
    } else {
        t.rows()
    };
    if emb.len() != rows.n_rows() {
        return Err(Error::format(
            dir,
            "embedding rows do not match the row index",
        ));
    }
    Ok((emb, rows))
}

// ------------------------------------------------------------- prototypes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypesSummary {
    pub clusters: usize,
    pub inertia: f64,
    pub label_mode: LabelMode,
    pub labelled: usize,
}

/// Ground-truth class of every train row, in row order.
fn train_row_classes(
    cfg: &PipelineConfig,
    ws: &Workspace,
    meta: &DatasetMeta,
) -> Result<Vec<Option<ClassId>>> {
    let index = SplitIndex::new(cfg, meta, Split::Train)?;
    let mut out = Vec::new();
    for &s in &index.sequences {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        let pred = load_predictions(ws, s)?;
        for (p, f) in pred.frames.iter().zip(&seq.frames) {
            out.extend(gt_classes(p, &f.instances)?);
        }
    }
    Ok(out)
}

fn locate_row(rows: &RowIndex, row: usize) -> (usize, usize) {
    let frame = rows.frame_offsets.partition_point(|&o| o <= row) - 1;
    (frame, row - rows.frame_offsets[frame])
}

pub fn stage_prototypes(cfg: &PipelineConfig, ws: &Workspace) -> Result<PrototypesSummary> {
    let meta = read_meta(&ws.dataset())?;
    let (emb, rows) = load_embeddings(ws, Split::Train)?;
    let model = kmeans_pp(
        &emb,
        cfg.n_km,
        derive_seed(cfg.seed, 0x6b6d),
        DEFAULT_MAX_ITER,
    )?;
    let protos = select_prototypes(&model, &emb);
    let dir = ws.stage(STAGE_PROTOTYPES);
    create_dir(&dir)?;
    write_json(&dir.join("clusters.json"), &model)?;

    let index = SplitIndex::new(cfg, &meta, Split::Train)?;
    let mut entries: Vec<SessionEntry> = protos
        .prototypes
        .iter()
        .map(|p| {
            let (frame, instance) = locate_row(&rows, p.instance);
            SessionEntry {
                cluster_id: p.cluster_id,
                frame_index: frame,
                instance_index: instance,
                label: None,
            }
        })
        .collect();
    match cfg.label_mode {
        LabelMode::Auto => {
            let mut cache: std::collections::BTreeMap<
                usize,
                (SyntheticSequence, PredictedSequence),
            > = Default::default();
            for e in &mut entries {
                let (k, t) = index.locate(e.frame_index).expect("row inside split");
                let s = index.sequences[k];
                if !cache.contains_key(&s) {
                    let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
                    cache.insert(s, (seq, load_predictions(ws, s)?));
                }
                let (seq, pred) = &cache[&s];
                e.label = auto_label(
                    &pred.frames[t].mask(e.instance_index),
                    &seq.frames[t].instances,
                );
            }
        }
        LabelMode::Human => {
            // keep labels of an earlier session over the same prototypes
            if let Ok(old) = read_session(&ws.session()) {
                for e in &mut entries {
                    if let Some(o) = old.iter().find(|o| {
                        o.cluster_id == e.cluster_id
                            && o.frame_index == e.frame_index
                            && o.instance_index == e.instance_index
                    }) {
                        e.label = o.label;
                    }
                }
            }
        }
    }
    write_session(&ws.session(), &entries)?;
    let summary = PrototypesSummary {
        clusters: model.n_clusters(),
        inertia: model.inertia,
        label_mode: cfg.label_mode,
        labelled: entries.iter().filter(|e| e.label.is_some()).count(),
    };
    write_json(&ws.summary(STAGE_PROTOTYPES), &summary)?;
    Ok(summary)
}

/// Overlay image of every session entry: the training frame with the
/// prototype instance tinted and boxed.
pub fn session_overlays(
    cfg: &PipelineConfig,
    ws: &Workspace,
    entries: &[SessionEntry],
) -> Result<Vec<image::RgbImage>> {
    let meta = read_meta(&ws.dataset())?;
    let index = SplitIndex::new(cfg, &meta, Split::Train)?;
    entries
        .iter()
        .map(|e| {
            let (k, t) = index.locate(e.frame_index).ok_or(Error::OutOfRange {
                index: e.frame_index,
                len: index.n_frames(),
            })?;
            let s = index.sequences[k];
            let records: Vec<DetectionRecord> = read_jsonl(&ws.detections(s))?;
            let n = records.get(t).map_or(0, |r| r.scores.len());
            if e.instance_index >= n {
                return Err(Error::OutOfRange {
                    index: e.instance_index,
                    len: n,
                });
            }
            let inst = read_instances(&ws.instances_png(s, t), vec![None; n])?;
            let seq_dir = ws.dataset().join(&meta.sequences[s].name);
            let image = crate::io::read_rgb_png(&crate::io::image_path(&seq_dir, t))?;
            Ok(render_overlay(&image, &inst.mask(e.instance_index)))
        })
        .collect()
}

// ---------------------------------------------------------------- teacher

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub labelled_rows: usize,
    pub distinct_labels: usize,
    /// Propagated labels agreeing with the ground-truth class, over all
    /// train rows.
    pub propagation_accuracy: f64,
    /// Teacher predictions agreeing with the ground-truth class, over all
    /// train rows.
    pub train_accuracy: f64,
    /// Teacher predictions agreeing with the propagated labels they were
    /// trained on.
    pub propagation_agreement: f64,
    pub last_epoch_loss: Option<f64>,
}

fn prototypes_from_session(entries: &[SessionEntry], rows: &RowIndex) -> Result<PrototypeSet> {
    let mut prototypes = Vec::new();
    for e in entries {
        let n_frames = rows.frame_offsets.len().saturating_sub(1);
        if e.frame_index >= n_frames {
            return Err(Error::OutOfRange {
                index: e.frame_index,
                len: n_frames,
            });
        }
        let frame_rows = rows.rows_of(e.frame_index);
        if e.instance_index >= frame_rows.len() {
            return Err(Error::OutOfRange {
                index: e.instance_index,
                len: frame_rows.len(),
            });
        }
        prototypes.push(Prototype {
            cluster_id: e.cluster_id,
            instance: rows.frame_offsets[e.frame_index] + e.instance_index,
            label: e.label,
        });
    }
    Ok(PrototypeSet { prototypes })
}

fn read_classifier(path: &std::path::Path) -> Result<ClassifierMLP> {
    let m: ClassifierMLP = read_json(path)?;
    m.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(m)
}

fn predict_all(model: &ClassifierMLP, emb: &[Vec<f64>]) -> Vec<ClassId> {
    emb.par_iter()
        .map(|e| argmax(&model.predict_proba(e)))
        .collect()
}

pub fn stage_teacher(cfg: &PipelineConfig, ws: &Workspace) -> Result<TeacherSummary> {
    let meta = read_meta(&ws.dataset())?;
    let (emb, rows) = load_embeddings(ws, Split::Train)?;
    let pdir = ws.stage(STAGE_PROTOTYPES);
    let model: ClusterModel = read_json(&pdir.join("clusters.json"))?;
    if model.assignment.len() != emb.len() {
        return Err(Error::format(
            pdir.join("clusters.json"),
            "assignment does not match the embeddings",
        ));
    }
    let entries = read_session(&ws.session())?;
    let missing = entries.iter().filter(|e| e.label.is_none()).count();
    if cfg.label_mode == LabelMode::Human && missing > 0 {
        return Err(Error::NotEnoughData(format!(
            "{missing} of {} prototypes are unlabelled",
            entries.len()
        )));
    }
    if let Some(bad) = entries
        .iter()
        .filter_map(|e| e.label)
        .find(|&l| l >= cfg.sim.n_classes)
    {
        return Err(Error::DegenerateLabels(format!(
            "label {bad} outside {} classes",
            cfg.sim.n_classes
        )));
    }
    let protos = prototypes_from_session(&entries, &rows)?;
    let propagated = propagate_labels(&model, &protos);
    let (xs, ys): (Vec<Vec<f64>>, Vec<ClassId>) = propagated
        .iter()
        .zip(&emb)
        .filter_map(|(l, e)| l.map(|l| (e.clone(), l)))
        .unzip();
    let tcfg = ClassifierConfig {
        seed: derive_seed(cfg.seed, 0x7eac ^ cfg.teacher.seed),
        ..cfg.teacher.clone()
    };
    let (teacher, log) = train_teacher(&xs, &ys, cfg.sim.n_classes, &tcfg)?;
    let dir = ws.stage(STAGE_TEACHER);
    create_dir(&dir)?;
    write_json(&dir.join("teacher.json"), &teacher)?;
    write_json(&dir.join("train_log.json"), &log)?;

    let gt = train_row_classes(cfg, ws, &meta)?;
    let predicted: Vec<Option<ClassId>> =
        predict_all(&teacher, &emb).into_iter().map(Some).collect();
    let summary = TeacherSummary {
        labelled_rows: xs.len(),
        distinct_labels: ys.iter().collect::<BTreeSet<_>>().len(),
        propagation_accuracy: agreement(&propagated, &gt),
        train_accuracy: agreement(&predicted, &gt),
        propagation_agreement: agreement(&predicted, &propagated),
        last_epoch_loss: log.epoch_losses.last().copied(),
    };
    write_json(&ws.summary(STAGE_TEACHER), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------ match

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub weak_mode: WeakMode,
    pub frames: usize,
    pub matched_rows: usize,
    pub skipped_frames: usize,
    /// Matched labels agreeing with the ground-truth class.
    pub gt_agreement: f64,
}

/// Weak label set and rows of every train frame.
fn weak_frames(
    cfg: &PipelineConfig,
    ws: &Workspace,
    meta: &DatasetMeta,
    rows: &RowIndex,
) -> Result<Vec<WeakFrame>> {
    let index = SplitIndex::new(cfg, meta, Split::Train)?;
    let mut out = Vec::new();
    for (k, &s) in index.sequences.iter().enumerate() {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        for (t, f) in seq.frames.iter().enumerate() {
            let weak = match cfg.weak_mode {
                WeakMode::FrameWise => f.presence_fw.clone(),
                WeakMode::SequenceWise => seq.presence_sw.clone(),
            };
            out.push(WeakFrame {
                rows: rows.rows_of(index.offsets[k] + t).collect(),
                weak,
            });
        }
    }
    Ok(out)
}

pub fn stage_match(cfg: &PipelineConfig, ws: &Workspace) -> Result<MatchSummary> {
    let meta = read_meta(&ws.dataset())?;
    let (emb, rows) = load_embeddings(ws, Split::Train)?;
    let teacher = read_classifier(&ws.stage(STAGE_TEACHER).join("teacher.json"))?;
    let frames = weak_frames(cfg, ws, &meta, &rows)?;
    let matched = match_frames(&teacher, &emb, &frames)?;
    let dir = ws.stage(STAGE_MATCH);
    create_dir(&dir)?;
    write_json(&dir.join("matched.json"), &matched)?;
    let gt = train_row_classes(cfg, ws, &meta)?;
    let hits = matched
        .labels
        .iter()
        .filter(|&&(r, l)| gt[r] == Some(l))
        .count();
    let summary = MatchSummary {
        weak_mode: cfg.weak_mode,
        frames: frames.len(),
        matched_rows: matched.labels.len(),
        skipped_frames: matched.skipped_frames.len(),
        gt_agreement: hits as f64 / matched.labels.len().max(1) as f64,
    };
    write_json(&ws.summary(STAGE_MATCH), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- student

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub training_rows: usize,
    pub train_accuracy: f64,
    pub last_epoch_loss: Option<f64>,
}

pub fn stage_student(cfg: &PipelineConfig, ws: &Workspace) -> Result<StudentSummary> {
    let meta = read_meta(&ws.dataset())?;
    let (emb, _) = load_embeddings(ws, Split::Train)?;
    let teacher = read_classifier(&ws.stage(STAGE_TEACHER).join("teacher.json"))?;
    let matched: MatchedLabels = read_json(&ws.stage(STAGE_MATCH).join("matched.json"))?;
    if let Some(&(r, _)) = matched.labels.iter().find(|&&(r, _)| r >= emb.len()) {
        return Err(Error::OutOfRange {
            index: r,
            len: emb.len(),
        });
    }
    let xs: Vec<Vec<f64>> = matched
        .labels
        .iter()
        .map(|&(r, _)| emb[r].clone())
        .collect();
    let ys: Vec<ClassId> = matched.labels.iter().map(|&(_, l)| l).collect();
    let scfg = ClassifierConfig {
        seed: derive_seed(cfg.seed, 0x57d ^ cfg.student.seed),
        ..cfg.student.clone()
    };
    let (student, log) = train_classifier(&xs, &ys, teacher.n_classes, &scfg)?;
    let dir = ws.stage(STAGE_STUDENT);
    create_dir(&dir)?;
    write_json(&dir.join("student.json"), &student)?;
    write_json(&dir.join("train_log.json"), &log)?;
    let gt = train_row_classes(cfg, ws, &meta)?;
    let predicted: Vec<Option<ClassId>> =
        predict_all(&student, &emb).into_iter().map(Some).collect();
    let summary = StudentSummary {
        training_rows: xs.len(),
        train_accuracy: agreement(&predicted, &gt),
        last_epoch_loss: log.epoch_losses.last().copied(),
    };
    write_json(&ws.summary(STAGE_STUDENT), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub metrics: MetricsReport,
    pub teacher_challenge_iou: f64,
    pub teacher_per_class: std::collections::BTreeMap<usize, f64>,
    pub evaluated_frames: usize,
}

/// Class-agnostic AP of stored predictions on the given sequences.
pub fn detection_ap(
    ws: &Workspace,
    meta: &DatasetMeta,
    sequences: &[usize],
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for &s in sequences {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        let p = load_predictions(ws, s)?;
        for (inst, r) in p.frames.into_iter().zip(p.records) {
            preds.push(FrameDetections {
                instances: inst,
                scores: r.scores,
            });
        }
        gts.extend(seq.frames.into_iter().map(|f| f.instances));
    }
    thresholds
        .iter()
        .map(|&t| ap_class_agnostic(&preds, &gts, t))
        .collect()
}

pub fn stage_eval(cfg: &PipelineConfig, ws: &Workspace) -> Result<EvalSummary> {
    let meta = read_meta(&ws.dataset())?;
    let index = SplitIndex::new(cfg, &meta, Split::Test)?;
    let (emb, rows) = load_embeddings(ws, Split::Test)?;
    let teacher = read_classifier(&ws.stage(STAGE_TEACHER).join("teacher.json"))?;
    let student = read_classifier(&ws.stage(STAGE_STUDENT).join("student.json"))?;
    let teacher_cls = predict_all(&teacher, &emb);
    let student_cls = predict_all(&student, &emb);

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut teacher_maps = Vec::new();
    let mut student_maps = Vec::new();
    let mut gt_maps = Vec::new();
    let mut field_ious = Vec::new();
    for (k, &s) in index.sequences.iter().enumerate() {
        let seq = read_sequence(&ws.dataset(), &meta.sequences[s])?;
        let p = load_predictions(ws, s)?;
        for (t, (inst, r)) in p.frames.into_iter().zip(p.records).enumerate() {
            let frame_rows = rows.rows_of(index.offsets[k] + t);
            if frame_rows.len() != inst.len() {
                return Err(Error::format(
                    ws.detections(s),
                    "instance count differs from the embedding rows",
                ));
            }
            let mut tm = inst.clone();
            let mut sm = inst.clone();
            for (i, row) in frame_rows.enumerate() {
                tm.set_class(i, Some(teacher_cls[row]));
                sm.set_class(i, Some(student_cls[row]));
            }
            teacher_maps.push(tm.semantic_map());
            student_maps.push(sm.semantic_map());
            let (mp, vp) = ws.field_paths(s, t);
            let (_, mask) = read_field(&mp, &vp)?;
            let gt = &seq.frames[t].instances;
            field_ious.push(binary_iou(&mask, &gt.binary()));
            gt_maps.push(gt.semantic_map());
            preds.push(FrameDetections {
                instances: inst,
                scores: r.scores,
            });
        }
        gts.extend(seq.frames.into_iter().map(|f| f.instances));
    }
    let ap50 = ap_class_agnostic(&preds, &gts, 0.5)?;
    let ap70 = ap_class_agnostic(&preds, &gts, 0.7)?;
    let t_iou = challenge_iou(&teacher_maps, &gt_maps)?;
    let s_iou = challenge_iou(&student_maps, &gt_maps)?;
    let metrics = MetricsReport {
        ap50,
        ap70,
        challenge_iou: s_iou.mean,
        binary_iou: mean(field_ious),
        per_class: s_iou.per_class,
    };
    let dir = ws.stage(STAGE_EVAL);
    create_dir(&dir)?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    let summary = EvalSummary {
        metrics,
        teacher_challenge_iou: t_iou.mean,
        teacher_per_class: t_iou.per_class,
        evaluated_frames: s_iou.evaluated_frames,
    };
    write_json(&ws.summary(STAGE_EVAL), &summary)?;
    Ok(summary)
}
