//! Glance-then-zoom agent engine for long synthetic videos.
//!
//! A policy first sees a uniform glance of the video, then may request a few
//! high-fps clips under a per-call frame budget before answering. The crate
//! provides the turn grammar, a synthetic video world with analytic oracles,
//! the episode state machine, rewards, GRPO objective math, a cold-start
//! curation pipeline and the `glance-zoom` command line.

pub mod cli;
pub mod curation;
pub mod episode;
pub mod grpo;
pub mod jsonl;
pub mod policy;
pub mod prompts;
pub mod protocol;
pub mod reward;
pub mod videoworld;
