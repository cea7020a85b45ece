//! Command-line driver for the tpswarp pipeline: bank building, warping,
//! metrics and synthetic fixtures.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod synth;

pub use commands::{run, Cli};
pub use config::PipelineConfig;
pub use pipeline::{fit_clip, render_clip, warp_clip, ClipFit, FittedWindow, Mode, WarpOutput, WarpReport, WindowReport};
