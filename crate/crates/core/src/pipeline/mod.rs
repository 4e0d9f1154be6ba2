//! End-to-end orchestration: configuration, stage composition, artifact
//! persistence. Each stage can be re-run independently from cached
//! artifacts; the pipeline exits nonzero only on configuration or
//! infrastructure failure, never on script failures (those are data).

mod config;
mod stages;

pub use config::{
    expected_by_source, parse_project_entry, parse_projects_file, source_is_remote, Limits,
    PipelineConfig, ProjectEntry,
};
pub use stages::{
    load_builds, load_classifications, load_executions, load_fetched, make_classifier,
    resolve_refs, run_pipeline, stage_build, stage_classify, stage_exec, stage_fetch, stage_infer,
    stage_report, stage_scan, stage_spec, FetchOutcome, InferOutcome, Layout, ProjectDeps,
    ScriptDeps, Unretrievable, EPOCH_TIMESTAMP,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

impl PipelineError {
    /// Exit-code policy: 0 = audit completed, 1 = config error,
    /// 2 = infrastructure failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Stage { .. } => 2,
        }
    }
}
