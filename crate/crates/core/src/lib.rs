//! Session engine and analytics for phase-gated design mentoring.
//!
//! A mentoring session walks a practitioner through three feedback phases
//! (clarify, diagnose, reflect) with an LLM mentor whose replies are shaped by
//! a prompt bundle, gated by goal checks and validated against per-phase
//! format rules. Finished transcripts are coded with a fixed codebook and
//! summarized into comparison tables.

pub mod annotator;
pub mod clock;
pub mod gateway;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod prompt;
pub mod report;
pub mod store;

pub use model::*;
