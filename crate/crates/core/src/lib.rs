//! Chain-of-thought data synthesis for repository issue resolution.
//!
//! The engine runs a Monte Carlo tree search over natural-language reasoning
//! steps. Candidate steps are proposed and scored by a reasoning-model
//! gateway, candidate solutions are checked against ground truth derived from
//! developer patches, and flawed steps are rewritten in place through a
//! feedback/optimize pass. Accepted reasoning paths are exported as
//! fine-tuning samples.
//!
//! Pipeline modules, roughly bottom-up:
//!
//! - [`search_tree`]: the tree structure and the numeric search mechanics
//!   (UCB selection, expansion bookkeeping, reward backpropagation).
//! - [`corpus`]: issue/patch ingestion, unified diff parsing, ground-truth
//!   derivation.
//! - [`validators`]: exact-match oracles per subtask, edit application,
//!   source normalization, code-element extraction, localization metrics.
//! - [`subtasks`]: the three subtask definitions and their prompt-input
//!   builders.
//! - [`gateway`]: the model abstraction with HTTP, scripted, and replay
//!   backends plus the wire-format parsers.
//! - [`engine`]: the five-phase search loop per (task, subtask).
//! - [`emitter`]: dataset serialization, audit, and run statistics.

pub mod corpus;
pub mod emitter;
pub mod engine;
pub mod gateway;
pub mod search_tree;
pub mod subtasks;
pub mod validators;
