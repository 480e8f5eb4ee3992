//! Environments with known ground truth: synthetic linear bandits, scripted
//! reasoning scenarios, and the Game of 24.

pub mod game24;
pub mod scenario;
pub mod synthetic;

use alloc::string::String;

use crate::bandit::ArmId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("environment has no arm {0}")]
    UnknownArm(ArmId),
    #[error("context has dimension {got}, environment expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid environment: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}
