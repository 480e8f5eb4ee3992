//! Policy comparison on synthetic linear environments.
//!
//! All policies see the same context and noise streams for a given seed, so
//! runs differ only in the arms chosen.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt::Write as _;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, GenerationRequest, Role};
use crate::bandit::{ArmId, BanditConfig, BanditError, BanditState, ContextVector};
use crate::prompts::DIRECT_ARM_SELECTION;
use crate::sim::synthetic::SyntheticLinearEnv;
use crate::sim::SimError;

const CONTEXT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const POLICY_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error("the direct policy needs a chat backend")]
    MissingBackend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Linucb,
    Random,
    /// Ask a language model to pick the arm.
    Direct,
    /// Knows every `θ_s`; picks the best expected arm.
    Oracle,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Linucb => "linucb",
            Policy::Random => "random",
            Policy::Direct => "direct",
            Policy::Oracle => "oracle",
        }
    }
}

impl FromStr for Policy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linucb" => Ok(Policy::Linucb),
            "random" => Ok(Policy::Random),
            "direct" => Ok(Policy::Direct),
            "oracle" => Ok(Policy::Oracle),
            other => Err(BenchError::UnknownPolicy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub policy: Policy,
    pub seed: u64,
    pub arms: Vec<ArmId>,
    pub rewards: Vec<f64>,
    /// Direct-policy replies that did not name a valid arm.
    pub invalid_replies: u64,
}

impl BenchRun {
    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.rewards
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

/// Mean cumulative reward per round across runs of equal length.
pub fn mean_cumulative(runs: &[BenchRun]) -> Vec<f64> {
    let Some(len) = runs.iter().map(|r| r.rewards.len()).min() else {
        return Vec::new();
    };
    let curves: Vec<Vec<f64>> = runs.iter().map(BenchRun::cumulative).collect();
    (0..len)
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / runs.len() as f64)
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Model-chosen arms through the direct-selection prompt.
pub struct DirectSelector<'a> {
    backend: &'a dyn ChatBackend,
    arm_count: usize,
    history: Vec<(ArmId, f64)>,
    history_len: usize,
    invalid: Cell<u64>,
}

impl<'a> DirectSelector<'a> {
    pub fn new(backend: &'a dyn ChatBackend, arm_count: usize) -> Self {
        Self {
            backend,
            arm_count,
            history: Vec::new(),
            history_len: 10,
            invalid: Cell::new(0),
        }
    }

    pub fn prompt(&self, x: &ContextVector) -> String {
        let mut context = String::from("[");
        for (i, v) in x.values().iter().enumerate() {
            if i > 0 {
                context.push_str(", ");
            }
            let _ = write!(context, "{v:.3}");
        }
        context.push(']');
        let mut history = String::new();
        let start = self.history.len().saturating_sub(self.history_len);
        for (arm, r) in &self.history[start..] {
            let _ = writeln!(history, "option {} -> reward {r:.3}", arm.0);
        }
        if history.is_empty() {
            history.push_str("(none yet)\n");
        }
        DIRECT_ARM_SELECTION
            .render(&[
                ("ARM_COUNT", &format!("{}", self.arm_count)),
                ("CONTEXT", &context),
                ("HISTORY", history.trim_end()),
                ("MAX_INDEX", &format!("{}", self.arm_count - 1)),
            ])
            .expect("all slots provided")
    }

    /// Falls back to `round mod K` when the reply names no valid arm.
    pub fn select(&self, x: &ContextVector, round: usize) -> Result<ArmId, BackendError> {
        let request = GenerationRequest {
            role: Role::MetaReasoner,
            system_prompt: String::new(),
            user_prompt: self.prompt(x),
            max_tokens: 8,
            temperature: 0.0,
            top_p: 1.0,
            seed_hint: None,
        };
        let reply = self.backend.generate(&request)?;
        let parsed = reply
            .text
            .split(|c: char| !c.is_ascii_digit())
            .find(|s| !s.is_empty())
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < self.arm_count);
        Ok(match parsed {
            Some(i) => ArmId(i as u32),
            None => {
                self.invalid.set(self.invalid.get() + 1);
                ArmId((round % self.arm_count) as u32)
            }
        })
    }

    pub fn observe(&mut self, arm: ArmId, reward: f64) {
        self.history.push((arm, reward));
    }

    pub fn invalid_replies(&self) -> u64 {
        self.invalid.get()
    }
}

/// Plays `rounds` rounds of `policy` on `env`.
pub fn run_policy(
    env: &SyntheticLinearEnv,
    policy: Policy,
    rounds: usize,
    seed: u64,
    bandit: &BanditConfig,
    direct: Option<&dyn ChatBackend>,
) -> Result<BenchRun, BenchError> {
    let k = env.arm_count();
    let mut contexts = stream(seed, CONTEXT_STREAM);
    let mut noise = stream(seed, NOISE_STREAM);
    let mut policy_rng = stream(seed, POLICY_STREAM);
    let mut state = match policy {
        Policy::Linucb => Some(BanditState::new(
            BanditConfig {
                d: env.d(),
                ..bandit.clone()
            },
            k,
            seed,
        )?),
        _ => None,
    };
    let mut selector = match policy {
        Policy::Direct => Some(DirectSelector::new(direct.ok_or(BenchError::MissingBackend)?, k)),
        _ => None,
    };
    let mut run = BenchRun {
        policy,
        seed,
        arms: Vec::with_capacity(rounds),
        rewards: Vec::with_capacity(rounds),
        invalid_replies: 0,
    };
    for t in 0..rounds {
        let x = env.sample_context(&mut contexts);
        let arm = match policy {
            Policy::Linucb => state.as_ref().expect("built above").select(&x)?.arm,
            Policy::Random => ArmId(policy_rng.random_range(0..k) as u32),
            Policy::Oracle => env.best_arm(&x)?.0,
            Policy::Direct => selector.as_ref().expect("built above").select(&x, t)?,
        };
        let reward = env.step(arm, &x, &mut noise)?;
        if let Some(state) = state.as_mut() {
            state.update(arm, &x, reward)?;
        }
        if let Some(selector) = selector.as_mut() {
            selector.observe(arm, reward);
        }
        run.arms.push(arm);
        run.rewards.push(reward);
    }
    run.invalid_replies = selector.map_or(0, |s| s.invalid_replies());
    Ok(run)
}
