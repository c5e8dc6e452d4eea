//! Prompt-rewriting alignment engine.

pub mod benchmark;
pub mod config;
pub mod corpus;
pub mod curation;
pub mod evaluator;
pub mod grpo;
pub mod orchestrator;
pub mod synth;
pub mod taxonomy;
pub mod util;
