//! File formats, configuration, parallel stages and the `pdsel` command line
//! on top of `pdsel-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod pipeline;
pub mod reports;

pub use config::PipelineConfig;
pub use error::{ExitKind, Failure};
