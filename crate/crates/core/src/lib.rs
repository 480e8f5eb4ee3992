//! Core of the meta-reasoning controller.
//!
//! A language model writes chain-of-thought steps, a summarizer condenses the
//! recent steps into a progress report, and a LinUCB contextual bandit picks
//! which high-level strategy to inject into the next step. An evaluator scores
//! the result and the score is fed back as the bandit reward.
//!
//! The crate is `no_std` (it needs `alloc`). Model access goes through the
//! traits in [`backend`]; HTTP clients, config files and the CLI live in the
//! companion `metareason` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backend;
pub mod bandit;
pub mod bench;
pub mod catalog;
pub mod features;
pub mod linalg;
pub mod orchestrator;
pub mod prompts;
pub mod reward;
pub mod sim;
