//! Core library for `repro-audit`, a batch pipeline that audits the
//! computational reproducibility of R-based research projects.
//!
//! The pipeline stages, each with its own module:
//!
//! * [`ingest`] — fetch project files from the OSF API or a local directory
//!   and build a [`ingest::ProjectManifest`].
//! * [`analyzer`] — tokenize R source and extract call expressions.
//! * [`deps`] — infer validated package dependencies from call sites and
//!   emit portability lint findings.
//! * [`envspec`] — scan for pre-existing reproducibility files and generate
//!   builder-compatible environment specifications (`DESCRIPTION`,
//!   `install.R`, `runtime.txt`).
//! * [`exec`] — build one container image per project and run every script
//!   in isolation, capturing logs and timings.
//! * [`classify`] — two-level classification of failure logs: regex patterns
//!   to initial error types, then grouping into broad categories.
//! * [`report`] — aggregate script- and project-level outcomes into an
//!   audit report (JSON / CSV / Markdown).
//! * [`pipeline`] — configuration and end-to-end stage orchestration.

pub mod analyzer;
pub mod classify;
pub mod deps;
pub mod envspec;
pub mod exec;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod util;
