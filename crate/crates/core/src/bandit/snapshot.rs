//! Versioned JSON snapshot of a [`BanditState`].
//!
//! `A⁻¹` is not stored; it is rebuilt from `A` on restore. Floats go through
//! serde_json's round-trip formatting so every serialized field restores
//! bit-for-bit.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ArmId, ArmStats, BanditConfig, BanditError, BanditState};
use crate::linalg::SquareMatrix;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDoc {
    pub version: u32,
    pub config: BanditConfig,
    pub round: u64,
    pub rng_seed: u64,
    pub arms: Vec<ArmDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDoc {
    pub id: ArmId,
    pub created_at_round: u64,
    pub retired: bool,
    pub pull_count: u64,
    pub reward_sum: f64,
    /// Row-major `d·d` design matrix.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BanditState {
    pub fn to_doc(&self) -> SnapshotDoc {
        SnapshotDoc {
            version: SNAPSHOT_VERSION,
            config: self.config.clone(),
            round: self.round,
            rng_seed: self.rng_seed,
            arms: self
                .arms
                .iter()
                .map(|(id, s)| ArmDoc {
                    id: *id,
                    created_at_round: s.created_at_round,
                    retired: s.retired,
                    pull_count: s.pull_count,
                    reward_sum: s.reward_sum,
                    a: s.a.as_row_major().to_vec(),
                    b: s.b.clone(),
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: SnapshotDoc) -> Result<Self, BanditError> {
        let err = |msg: &str| BanditError::Snapshot(msg.to_string());
        if doc.version != SNAPSHOT_VERSION {
            return Err(BanditError::Snapshot(format!(
                "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
                doc.version
            )));
        }
        doc.config.validate()?;
        let d = doc.config.d;
        let mut state = BanditState {
            config: doc.config,
            arms: Default::default(),
            round: doc.round,
            rng_seed: doc.rng_seed,
        };
        for (expected, arm) in doc.arms.into_iter().enumerate() {
            if arm.id.index() != expected {
                return Err(err("arm ids must be 0..n in order"));
            }
            if arm.b.len() != d {
                return Err(err("b has the wrong length"));
            }
            if arm.b.iter().any(|v| !v.is_finite()) || !arm.reward_sum.is_finite() {
                return Err(err("non-finite value in arm statistics"));
            }
            let a = SquareMatrix::from_row_major(d, arm.a).ok_or_else(|| err("A has the wrong length"))?;
            if !a.is_finite() || !a.is_symmetric() {
                return Err(err("A must be finite and symmetric"));
            }
            if arm.created_at_round > state.round {
                return Err(err("arm created after the current round"));
            }
            let mut stats = ArmStats {
                a_inv: SquareMatrix::zeros(d),
                a,
                b: arm.b,
                pull_count: arm.pull_count,
                reward_sum: arm.reward_sum,
                created_at_round: arm.created_at_round,
                retired: arm.retired,
            };
            stats
                .rebuild_inverse(arm.id, state.config.lambda)
                .map_err(|_| err("A is not positive definite"))?;
            state.arms.insert(arm.id, stats);
        }
        if state.arms.is_empty() {
            return Err(err("snapshot has no arms"));
        }
        Ok(state)
    }

    /// Serializes to pretty-printed UTF-8 JSON.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.to_doc()).expect("snapshot is always serializable");
        out.push(b'\n');
        out
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, BanditError> {
        let doc: SnapshotDoc =
            serde_json::from_slice(bytes).map_err(|e| BanditError::Snapshot(e.to_string()))?;
        Self::from_doc(doc)
    }
}
