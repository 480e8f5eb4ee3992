//! Composite reward `R = β·S_p + (1 − β)·R_u` and evaluator-output parsing.
//!
//! `S_p = w1·C_c + w2·C_a` blends the evaluator's correctness and adherence
//! judgments, `R_u = −α·N_s` charges for every reasoning step. The evaluator
//! model is trusted only for `C_c` and `C_a`; totals it reports are checked and
//! replaced by the local computation when they disagree.

use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Tolerance for accepting evaluator-reported totals as consistent.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid reward weights: {0}")]
    Weights(&'static str),
    #[error("{field} = {value} is outside [0, 1]")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("evaluator output is malformed: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            alpha: 0.1,
            beta: 0.8,
        }
    }
}

impl RewardWeights {
    pub fn new(w1: f64, w2: f64, alpha: f64, beta: f64) -> Result<Self, RewardError> {
        let weights = Self {
            w1,
            w2,
            alpha,
            beta,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.w1) || !unit(self.w2) {
            return Err(RewardError::Weights("w1 and w2 must lie in [0, 1]"));
        }
        if libm::fabs(self.w1 + self.w2 - 1.0) > 1e-9 {
            return Err(RewardError::Weights("w1 + w2 must equal 1"));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(RewardError::Weights("alpha must be finite and non-negative"));
        }
        if !unit(self.beta) {
            return Err(RewardError::Weights("beta must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorScores {
    #[serde(rename = "C_c")]
    pub c_c: f64,
    #[serde(rename = "C_a")]
    pub c_a: f64,
    #[serde(rename = "brief_rationale")]
    pub rationale: String,
}

impl EvaluatorScores {
    pub fn new(c_c: f64, c_a: f64, rationale: impl Into<String>) -> Result<Self, RewardError> {
        let scores = Self {
            c_c,
            c_a,
            rationale: rationale.into(),
        };
        scores.validate()?;
        Ok(scores)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        check_unit("C_c", self.c_c)?;
        check_unit("C_a", self.c_a)
    }
}

fn check_unit(field: &'static str, value: f64) -> Result<(), RewardError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(RewardError::OutOfRange { field, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    #[serde(rename = "S_p")]
    pub s_p: f64,
    #[serde(rename = "R_u")]
    pub r_u: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "N_s")]
    pub n_s: u64,
}

pub fn compute_reward(
    scores: &EvaluatorScores,
    n_s: u64,
    weights: &RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    scores.validate()?;
    let s_p = weights.w1 * scores.c_c + weights.w2 * scores.c_a;
    let r_u = -weights.alpha * n_s as f64;
    let r = weights.beta * s_p + (1.0 - weights.beta) * r_u;
    Ok(RewardBreakdown { s_p, r_u, r, n_s })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedEvaluation {
    pub scores: EvaluatorScores,
    pub breakdown: RewardBreakdown,
    /// True when the evaluator's own totals were inconsistent and got replaced.
    pub recomputed: bool,
}

impl ParsedEvaluation {
    /// Renders the same strict object the evaluator is asked to emit.
    pub fn to_json(&self) -> String {
        let mut obj = Map::new();
        obj.insert("C_c".into(), self.scores.c_c.into());
        obj.insert("C_a".into(), self.scores.c_a.into());
        obj.insert("S_p".into(), self.breakdown.s_p.into());
        obj.insert("R_u".into(), self.breakdown.r_u.into());
        obj.insert("R".into(), self.breakdown.r.into());
        obj.insert(
            "brief_rationale".into(),
            Value::String(self.scores.rationale.clone()),
        );
        serde_json::to_string_pretty(&Value::Object(obj)).expect("plain JSON object")
    }
}

/// Strips surrounding whitespace and a single Markdown code fence.
fn unfence(raw: &str) -> &str {
    let text = raw.trim();
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let Some(body) = rest.trim_end().strip_suffix("```") else {
        return text;
    };
    // Drop an info string such as `json` on the opening fence line.
    match body.find('\n') {
        Some(nl) if !body[..nl].contains('{') => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

fn parse_object(raw: &str) -> Result<Map<String, Value>, RewardError> {
    let body = unfence(raw);
    if !body.starts_with('{') {
        return Err(RewardError::Format("no JSON object found".to_string()));
    }
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(RewardError::Format("top-level value is not an object".to_string())),
        Err(e) => Err(RewardError::Format(e.to_string())),
    }
}

fn number(map: &Map<String, Value>, key: &str) -> Result<f64, RewardError> {
    match map.get(key) {
        None => Err(RewardError::Format(format!("missing field {key}"))),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| RewardError::Format(format!("field {key} is not a finite number"))),
    }
}

/// Parses the strict evaluator object and recomputes its totals.
///
/// `n_s` is the step count that was given to the evaluator; it is needed to
/// check the reported `R_u` and `R`.
pub fn parse_evaluator_output(
    raw: &str,
    n_s: u64,
    weights: &RewardWeights,
) -> Result<ParsedEvaluation, RewardError> {
    let map = parse_object(raw)?;
    let c_c = number(&map, "C_c")?;
    let c_a = number(&map, "C_a")?;
    let reported_s_p = number(&map, "S_p")?;
    let reported_r_u = number(&map, "R_u")?;
    let reported_r = number(&map, "R")?;
    let rationale = match map.get("brief_rationale") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(RewardError::Format("brief_rationale is not a string".to_string())),
        None => return Err(RewardError::Format("missing field brief_rationale".to_string())),
    };
    let scores = EvaluatorScores::new(c_c, c_a, rationale)?;
    let breakdown = compute_reward(&scores, n_s, weights)?;
    let close = |a: f64, b: f64| libm::fabs(a - b) <= CONSISTENCY_TOLERANCE;
    let recomputed = !(close(reported_s_p, breakdown.s_p)
        && close(reported_r_u, breakdown.r_u)
        && close(reported_r, breakdown.r));
    Ok(ParsedEvaluation {
        scores,
        breakdown,
        recomputed,
    })
}

/// Score-only evaluator mode: the reply is a bare correctness number.
///
/// Adherence is not judged separately in this mode, so `C_a` mirrors `C_c`.
pub fn parse_score_only(
    raw: &str,
    n_s: u64,
    weights: &RewardWeights,
) -> Result<ParsedEvaluation, RewardError> {
    let token = unfence(raw);
    let value: f64 = token
        .parse()
        .map_err(|_| RewardError::Format(format!("expected a bare number, got {token:?}")))?;
    if !value.is_finite() {
        return Err(RewardError::Format("score is not finite".to_string()));
    }
    let scores = EvaluatorScores::new(value, value, "")?;
    let breakdown = compute_reward(&scores, n_s, weights)?;
    Ok(ParsedEvaluation {
        scores,
        breakdown,
        recomputed: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingRewardWeights {
    pub objective_completion: f64,
    pub progress_quality: f64,
    pub efficiency: f64,
    pub strategy_alignment: f64,
}

impl Default for TrainingRewardWeights {
    fn default() -> Self {
        Self {
            objective_completion: 0.40,
            progress_quality: 0.30,
            efficiency: 0.15,
            strategy_alignment: 0.15,
        }
    }
}

impl TrainingRewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let parts = [
            self.objective_completion,
            self.progress_quality,
            self.efficiency,
            self.strategy_alignment,
        ];
        if parts.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(RewardError::Weights("training weights must lie in [0, 1]"));
        }
        if libm::fabs(parts.iter().sum::<f64>() - 1.0) > 1e-9 {
            return Err(RewardError::Weights("training weights must sum to 1"));
        }
        Ok(())
    }
}

/// The four judged components of the training-profile reward, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingComponents {
    pub objective_completion: f64,
    pub progress_quality: f64,
    pub efficiency: f64,
    pub strategy_alignment: f64,
}

pub fn compute_training_reward(
    components: &TrainingComponents,
    weights: &TrainingRewardWeights,
) -> Result<f64, RewardError> {
    weights.validate()?;
    check_unit("objective_completion", components.objective_completion)?;
    check_unit("progress_quality", components.progress_quality)?;
    check_unit("efficiency", components.efficiency)?;
    check_unit("strategy_alignment", components.strategy_alignment)?;
    Ok(weights.objective_completion * components.objective_completion
        + weights.progress_quality * components.progress_quality
        + weights.efficiency * components.efficiency
        + weights.strategy_alignment * components.strategy_alignment)
}

pub fn parse_training_output(raw: &str) -> Result<TrainingComponents, RewardError> {
    let map = parse_object(raw)?;
    let components = TrainingComponents {
        objective_completion: number(&map, "objective_completion")?,
        progress_quality: number(&map, "progress_quality")?,
        efficiency: number(&map, "efficiency")?,
        strategy_alignment: number(&map, "strategy_alignment")?,
    };
    check_unit("objective_completion", components.objective_completion)?;
    check_unit("progress_quality", components.progress_quality)?;
    check_unit("efficiency", components.efficiency)?;
    check_unit("strategy_alignment", components.strategy_alignment)?;
    Ok(components)
}
