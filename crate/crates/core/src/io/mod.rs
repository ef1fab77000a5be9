//! On-disk artifacts: SAFT tensors, PNG masks, JSON records and datasets.

mod dataset;
mod files;
mod saft;

pub use dataset::{
    image_path, instances_path, read_dataset, read_meta, read_sequence, sequence_name,
    write_dataset, DatasetMeta, SequenceEntry, DATASET_FORMAT, DATASET_VERSION,
};
pub use files::{
    create_dir, read_field, read_instances, read_json, read_jsonl, read_label_png, read_mask,
    read_rgb_png, rgb_png_bytes, write_field, write_instances, write_json, write_jsonl,
    write_label_png, write_mask, write_rgb_png,
};
pub use saft::{SaftElem, Tensor, SAFT_MAGIC, SAFT_VERSION};
