//! Pipeline orchestration behind the `authclust` binary.

pub mod config;
pub mod report;
pub mod run;
pub mod synthetic;

pub use config::{MemberConfig, RunConfig};
pub use run::{pipeline, Layout, PipelineResult, RunManifest};
