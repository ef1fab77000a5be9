//! Instance descriptors, the projection head and tube-supervised
//! contrastive training.

mod descriptor;
mod head;
mod sampler;
mod supcon;
mod train;

pub use descriptor::{extract_descriptor, FeatureVector, Standardizer, DESCRIPTOR_DIM, HIST_BINS};
pub use head::{
    HeadCache, HeadGrad, ProjectionHead, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN, HEAD_FORMAT,
    HEAD_VERSION,
};
pub use sampler::{
    sample_batch, BatchItem, TubeSampler, CO_OCCUR_WEIGHT, DEFAULT_T_FAR, ENTRIES_PER_TUBE,
};
pub use supcon::{supcon_loss, supcon_loss_and_grad};
pub use train::{
    head_loss_and_grad, train_feature_head, tube_similarity_margin, FeatureDataset,
    FeatureTrainConfig, TrainLog,
};
