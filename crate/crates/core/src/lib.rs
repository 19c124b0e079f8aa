//! Auditing toolkit for execution-based agent benchmarks.
//!
//! The pipeline: [`ingest`] loads task bundles, [`protocol`] renders the audit
//! prompts, [`gateway`] talks to model backends, [`engine`] turns completions
//! into validated [`taxonomy::Finding`]s, [`alignment`] scores findings against
//! expert gold issues and [`reporting`] emits the artifacts.

pub mod alignment;
pub mod engine;
pub mod gateway;
pub mod hash;
pub mod ingest;
pub mod percent;
pub mod protocol;
pub mod reporting;
pub mod taxonomy;
pub mod template;

pub use percent::Percent;
