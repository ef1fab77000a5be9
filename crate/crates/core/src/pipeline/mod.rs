//! End-to-end lab pipeline over a run directory. Every stage reads only
//! artifacts written by earlier stages and leaves a `summary.json`.

mod config;
mod run;
mod session;
mod stages;
mod sweep;
mod workspace;

pub use config::{
    default_output_dir, FieldSource, LabelMode, PipelineConfig, SplitConfig, TrackConfig, DATA_ENV,
};
pub use run::{
    prepare_workspace, recorded_config, run_pipeline, run_stage, run_stage_checked, RunOptions,
    RunReport, Timing, REPORT_FORMAT, REPORT_VERSION,
};
pub use session::{read_session, render_overlay, write_session, SessionEntry};
pub use stages::*;
pub use sweep::{run_sweep, SweepPoint, SweepReport, SWEEP_EPS, SWEEP_GRIDS};
pub use workspace::*;
