//! Pseudo-supervision from binary masks and displacement-field inference.
//!
//! Training side: connected components of the binary tool mask give instance
//! masks, a centroid-pointing field and an overlap mask (components spanning
//! the full frame width); pasting donor instances simulates overlaps.
//! Inference side: a grid over the predicted field finds squares where
//! vectors converge and assigns tool pixels to the nearest centroid region.

mod cc;
mod extract;
mod field;
mod noise;
mod paste;

pub use cc::{cc_label, detect_overlap};
pub use extract::{
    convergence_map, extract_instances, CentroidRegion, Extraction, InferenceParams,
};
pub use field::{bce, fabricate_field, loss_fs, loss_instantiation, mask_field, PROB_CLAMP};
pub use noise::{noisy_oracle, NoiseConfig, DEFAULT_BOUNDARY_ITERS};
pub use paste::{augm_paste, Donor, PasteOutcome, PasteSample, MAX_PASTE_ATTEMPTS};
