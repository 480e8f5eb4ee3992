//! Linear-reward bandit world.
//!
//! Contexts are unit vectors in the positive orthant. Arm `s` has a unit
//! parameter `θ_s` pointing mostly along axis `s mod d`, so different contexts
//! favour different arms. A pull returns `clamp(xᵀθ_s + N(0, σ²), −1, 1)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::bandit::{ArmId, ContextVector};
use crate::linalg::{dot, l2_norm};

/// Parameters for a generated environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub arms: usize,
    pub noise_sigma: f64,
    /// Weight of the random component mixed into each `θ_s`.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Exponent applied to the half-normal context draws before
    /// normalizing; larger values give more peaked contexts.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Seed for drawing the parameters (not the reward noise).
    #[serde(default)]
    pub seed: u64,
}

fn default_jitter() -> f64 {
    0.1
}

fn default_concentration() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLinearEnv {
    d: usize,
    thetas: Vec<Vec<f64>>,
    noise: Option<Normal<f64>>,
    noise_sigma: f64,
    concentration: f64,
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl SyntheticLinearEnv {
    pub fn new(thetas: Vec<Vec<f64>>, noise_sigma: f64) -> Result<Self, SimError> {
        let d = thetas.first().map(Vec::len).unwrap_or(0);
        if d == 0 {
            return Err(SimError::Config("need at least one arm of positive dimension".into()));
        }
        if thetas.iter().any(|t| t.len() != d || t.iter().any(|x| !x.is_finite())) {
            return Err(SimError::Config("arm parameters must be finite and share one dimension".into()));
        }
        if !noise_sigma.is_finite() || noise_sigma < 0.0 {
            return Err(SimError::Config(format!("noise_sigma must be finite and >= 0, got {noise_sigma}")));
        }
        let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("sigma checked"));
        Ok(Self {
            d,
            thetas,
            noise,
            noise_sigma,
            concentration: 1.0,
        })
    }

    pub fn with_concentration(mut self, concentration: f64) -> Result<Self, SimError> {
        if !concentration.is_finite() || concentration <= 0.0 {
            return Err(SimError::Config(format!("concentration must be positive, got {concentration}")));
        }
        self.concentration = concentration;
        Ok(self)
    }

    pub fn from_spec(spec: &SyntheticSpec) -> Result<Self, SimError> {
        if spec.d == 0 || spec.arms == 0 {
            return Err(SimError::Config("d and arms must be positive".into()));
        }
        if spec.jitter.is_nan() || spec.jitter < 0.0 {
            return Err(SimError::Config("jitter must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let thetas = (0..spec.arms)
            .map(|s| {
                let v = (0..spec.d)
                    .map(|i| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        let axis = if i == s % spec.d { 1.0 } else { 0.0 };
                        axis + spec.jitter * libm::fabs(g)
                    })
                    .collect();
                normalize(v)
            })
            .collect();
        Self::new(thetas, spec.noise_sigma)?.with_concentration(spec.concentration)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn arm_count(&self) -> usize {
        self.thetas.len()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn theta(&self, arm: ArmId) -> Result<&[f64], SimError> {
        self.thetas
            .get(arm.index())
            .map(Vec::as_slice)
            .ok_or(SimError::UnknownArm(arm))
    }

    /// Noise-free reward `xᵀθ_s`.
    pub fn expected_reward(&self, arm: ArmId, x: &ContextVector) -> Result<f64, SimError> {
        let theta = self.theta(arm)?;
        if x.dim() != self.d {
            return Err(SimError::Dimension {
                expected: self.d,
                got: x.dim(),
            });
        }
        Ok(dot(theta, x.values()))
    }

    pub fn step<R: Rng + ?Sized>(&self, arm: ArmId, x: &ContextVector, rng: &mut R) -> Result<f64, SimError> {
        let mean = self.expected_reward(arm, x)?;
        let eps = self.noise.map_or(0.0, |n| n.sample(rng));
        Ok((mean + eps).clamp(-1.0, 1.0))
    }

    /// Unit context drawn from the positive orthant.
    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextVector {
        loop {
            let v: Vec<f64> = (0..self.d)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut *rng);
                    libm::pow(libm::fabs(g), self.concentration)
                })
                .collect();
            if l2_norm(&v) > 0.0 {
                return ContextVector::new(normalize(v)).expect("finite unit vector");
            }
        }
    }

    /// Arm with the highest expected reward at `x` (lowest id on ties).
    pub fn best_arm(&self, x: &ContextVector) -> Result<(ArmId, f64), SimError> {
        let mut best = (ArmId(0), f64::NEG_INFINITY);
        for s in 0..self.arm_count() {
            let r = self.expected_reward(ArmId(s as u32), x)?;
            if r > best.1 {
                best = (ArmId(s as u32), r);
            }
        }
        Ok(best)
    }
}
