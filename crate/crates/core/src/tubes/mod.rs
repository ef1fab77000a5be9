//! Temporal instance tubes from flow-projected centroid matching.

mod flow;
mod track;

pub use flow::{estimate_flow, FlowMethod, BLOCK_SIZE, SEARCH_RADIUS};
pub use track::{
    build_tubes, centroid_flow, greedy_match, track_step, tube_purity, Tube, TubeBuilder,
    TubeEntry, TubeSet, DEFAULT_MAX_DIST,
};
