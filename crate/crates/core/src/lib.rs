//! Weakly-supervised surgical tool instance segmentation laboratory.
//!
//! Stages: a synthetic scene simulator with full ground truth
//! ([`scene_sim`]), instantiation from binary masks through displacement
//! fields ([`instantiate`]), tube tracking ([`tubes`]), tube-supervised
//! contrastive feature learning ([`features`]), prototype labelling and
//! teacher/student weak-label mining ([`weak_classify`]), evaluation
//! ([`eval_metrics`]) and the stage orchestration with on-disk artifacts
//! ([`pipeline`], [`io`]).

pub mod error;
pub mod eval_metrics;
pub mod features;
pub mod instantiate;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod scene_sim;
pub mod tubes;
pub mod util;
pub mod weak_classify;

pub use error::{Error, Result};
