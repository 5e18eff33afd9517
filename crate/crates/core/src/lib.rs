//! A plan-and-search agent for simulated web tasks.
//!
//! The library splits the problem in two. A task-level driver decomposes a
//! goal into subtasks, watches progress, and replans when a subtask fails. A
//! subtask-level searcher runs a reflective Monte Carlo tree search over the
//! page, proposing one action per expansion and scoring what it did.
//!
//! Modules:
//! - [`model`]: shared vocabulary (actions, observations, scores, config)
//! - [`env`]: the deterministic simulated-web runtime and world files

pub mod env;
pub mod global;
pub mod local;
pub mod model;
pub mod oracles;
pub mod trace;
pub mod tree;
