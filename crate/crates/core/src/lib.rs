//! Engine for learner-led decomposition of programming problems.
//!
//! Learners build a [`steptree::StepTree`] of steps and sub-steps; an LLM
//! provider judges each node through the pipelines in [`llm`]; the engine
//! merges those judgments back without disturbing the learner's structure,
//! gates progressive hints, and links steps to source lines via [`mapping`].

pub mod anomaly;
pub mod llm;
pub mod mapping;
pub mod steptree;

pub use anomaly::Anomaly;
