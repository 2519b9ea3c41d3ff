//! Pipeline orchestration and submission files for the `reidpost` command.

pub mod config;
pub mod pipeline;
pub mod submission;

pub use config::{PipelineConfig, RankMethod, Stage};
pub use pipeline::{run_pipeline, Manifest, PipelineReport};
pub use submission::{format_submission, parse_submission, write_submission, SubmissionFormat};
