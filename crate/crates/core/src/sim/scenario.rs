//! Scripted reasoning scenarios.
//!
//! A script names a set of contexts (each with one or more progress-report
//! texts) and score rules keyed by context and strategy. [`ScenarioBackend`]
//! plays every role of the loop:
//!
//! - summarizer: draws a context and replies with one of its reports;
//! - generator: records which guidance it received under the current context;
//! - evaluator: scores the latest step from the matching rule plus noise;
//! - meta-reasoner: replies with scripted proposals, else restates the default.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::backend::{count_words, BackendError, ChatBackend, GenerationRequest, GenerationResponse, HashEmbedder, Role};
use crate::bandit::{ArmId, BanditState};
use crate::catalog::{Catalog, CatalogMode, DEFAULT_GUIDANCE};
use crate::orchestrator::{Backends, Orchestrator, OrchestratorConfig, ReasoningTrace, TaskInput, TraceSink};
use crate::reward::{compute_reward, EvaluatorScores, RewardWeights};

/// Matches any context or strategy in a score rule.
pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSpec {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    pub reports: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRule {
    /// Context name or `*`.
    pub context: String,
    /// Case-insensitive substring of the guidance text, or `*`.
    pub strategy: String,
    pub c_c: f64,
    /// Defaults to `c_c`.
    #[serde(default)]
    pub c_a: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
}

impl ScoreRule {
    fn c_a(&self) -> f64 {
        self.c_a.unwrap_or(self.c_c)
    }

    fn matches(&self, context: &str, guidance: &str) -> bool {
        let ctx_ok = self.context == WILDCARD || self.context == context;
        let strat_ok = self.strategy == WILDCARD
            || guidance.to_lowercase().contains(&self.strategy.to_lowercase());
        ctx_ok && strat_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSpec {
    /// Zero-based index of the meta-reasoner call that returns this proposal.
    pub at_call: usize,
    pub action: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub c: Option<f64>,
    pub retire_threshold: Option<f64>,
    pub mode: Option<CatalogMode>,
    pub weights: Option<RewardWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub tasks: usize,
    /// Round cap for each task.
    pub rounds_per_task: u32,
    /// Round in which the generator emits a boxed answer, if any.
    #[serde(default)]
    pub answer_at_round: Option<u32>,
    #[serde(default = "default_task_text")]
    pub task_text: String,
    pub contexts: Vec<ContextSpec>,
    pub scores: Vec<ScoreRule>,
    #[serde(default)]
    pub proposals: Vec<ProposalSpec>,
    #[serde(default)]
    pub overrides: Overrides,
}

fn default_task_text() -> String {
    "Scripted scenario task.".to_string()
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.tasks == 0 || self.rounds_per_task == 0 {
            return bad("tasks and rounds_per_task must be positive".into());
        }
        if self.contexts.is_empty() {
            return bad("at least one context is required".into());
        }
        let mut seen_reports: Vec<&str> = Vec::new();
        for (i, c) in self.contexts.iter().enumerate() {
            if self.contexts[..i].iter().any(|o| o.name == c.name) {
                return bad(format!("duplicate context name {:?}", c.name));
            }
            if !c.weight.is_finite() || c.weight <= 0.0 {
                return bad(format!("context {:?} needs a positive weight", c.name));
            }
            if c.reports.is_empty() || c.reports.iter().any(|r| r.trim().is_empty()) {
                return bad(format!("context {:?} needs non-empty reports", c.name));
            }
            for r in &c.reports {
                if seen_reports.contains(&r.as_str()) {
                    return bad(format!("report text {r:?} appears in more than one place"));
                }
                seen_reports.push(r);
            }
        }
        if self.scores.is_empty() {
            return bad("at least one score rule is required".into());
        }
        for rule in &self.scores {
            if rule.context != WILDCARD && !self.contexts.iter().any(|c| c.name == rule.context) {
                return bad(format!("score rule names unknown context {:?}", rule.context));
            }
            let in_unit = |v: f64| (0.0..=1.0).contains(&v);
            if !in_unit(rule.c_c) || !in_unit(rule.c_a()) || !rule.sigma.is_finite() || rule.sigma < 0.0 {
                return bad(format!("score rule {}/{} is out of range", rule.context, rule.strategy));
            }
        }
        if self.proposals.iter().any(|p| p.action.trim().is_empty()) {
            return bad("proposal actions must be non-empty".into());
        }
        Ok(())
    }

    pub fn rule_for(&self, context: &str, guidance: &str) -> Option<&ScoreRule> {
        self.scores.iter().find(|r| r.matches(context, guidance))
    }

    /// Context whose report list contains `report`.
    pub fn context_of(&self, report: &str) -> Option<&ContextSpec> {
        self.contexts.iter().find(|c| c.reports.iter().any(|r| r == report.trim()))
    }

    /// Noise-free `S_p` the script assigns to `guidance` under `context`.
    pub fn expected_progress(&self, context: &str, guidance: &str, weights: &RewardWeights) -> Option<f64> {
        self.rule_for(context, guidance)
            .map(|r| weights.w1 * r.c_c + weights.w2 * r.c_a())
    }

    /// Arms with the highest expected score under `context`.
    pub fn best_arms(&self, context: &str, catalog: &Catalog, weights: &RewardWeights) -> Vec<ArmId> {
        let scored: Vec<(ArmId, f64)> = catalog
            .strategies()
            .iter()
            .filter_map(|s| {
                self.expected_progress(context, &s.guidance_text, weights)
                    .map(|v| (s.arm_id, v))
            })
            .collect();
        let top = scored.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        scored
            .into_iter()
            .filter(|&(_, v)| v >= top - 1e-12)
            .map(|(a, _)| a)
            .collect()
    }

    /// The run configuration after applying this script's overrides.
    pub fn apply(&self, base: &OrchestratorConfig) -> OrchestratorConfig {
        let mut config = base.clone();
        config.max_rounds = self.rounds_per_task;
        if let Some(c) = self.overrides.c {
            config.bandit.c = c;
        }
        if let Some(t) = self.overrides.retire_threshold {
            config.bandit.retire_threshold = t;
        }
        if let Some(mode) = self.overrides.mode {
            config.catalog.mode = mode;
        }
        if let Some(weights) = self.overrides.weights {
            config.weights = weights;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StepMemo {
    context: usize,
    guidance: String,
}

#[derive(Debug)]
struct State {
    rng: ChaCha8Rng,
    pending_context: Option<usize>,
    last_step: Option<StepMemo>,
    meta_calls: usize,
}

/// Mock backend driven by a [`ScenarioScript`]. Deterministic for a given seed.
#[derive(Debug)]
pub struct ScenarioBackend {
    script: ScenarioScript,
    weights: RewardWeights,
    state: RefCell<State>,
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.rfind(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(text[start..end].trim())
}

fn steps_in(prompt: &str) -> u32 {
    between(prompt, "<current_step>", "</current_step>")
        .map_or(0, |block| block.lines().filter(|l| l.starts_with("Step ")).count() as u32)
}

fn num_steps(prompt: &str) -> Option<u64> {
    let marker = "(N_s):";
    let start = prompt.find(marker)? + marker.len();
    prompt[start..].split_whitespace().next()?.parse().ok()
}

impl ScenarioBackend {
    pub fn new(script: ScenarioScript, weights: RewardWeights) -> Result<Self, SimError> {
        script.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(script.seed);
        Ok(Self {
            script,
            weights,
            state: RefCell::new(State {
                rng,
                pending_context: None,
                last_step: None,
                meta_calls: 0,
            }),
        })
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    fn sample_context(&self, rng: &mut ChaCha8Rng) -> usize {
        let total: f64 = self.script.contexts.iter().map(|c| c.weight).sum();
        let mut u = rng.random::<f64>() * total;
        for (i, c) in self.script.contexts.iter().enumerate() {
            if u < c.weight {
                return i;
            }
            u -= c.weight;
        }
        self.script.contexts.len() - 1
    }

    fn reply(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut state = self.state.borrow_mut();
        let state = &mut *state;
        match request.role {
            Role::Summarizer => {
                let ctx = self.sample_context(&mut state.rng);
                let reports = &self.script.contexts[ctx].reports;
                let pick = state.rng.random_range(0..reports.len());
                state.pending_context = Some(ctx);
                Ok(reports[pick].clone())
            }
            Role::Generator => {
                let ctx = match state.pending_context.take() {
                    Some(c) => c,
                    None => self.sample_context(&mut state.rng),
                };
                let guidance = between(&request.user_prompt, "<meta_reasoner_feedback>", "</meta_reasoner_feedback>")
                    .unwrap_or_default()
                    .to_string();
                let round = steps_in(&request.user_prompt) + 1;
                state.last_step = Some(StepMemo { context: ctx, guidance });
                let name = &self.script.contexts[ctx].name;
                let mut text = format!("Round {round} worked on the {name} situation as directed.");
                if self.script.answer_at_round == Some(round) {
                    text.push_str(" The problem is solved. \\boxed{42}");
                }
                Ok(text)
            }
            Role::Evaluator => {
                let memo = state
                    .last_step
                    .clone()
                    .ok_or_else(|| BackendError::Protocol("evaluator called before any step".into()))?;
                let context = &self.script.contexts[memo.context].name;
                let rule = self
                    .script
                    .rule_for(context, &memo.guidance)
                    .ok_or_else(|| BackendError::Protocol(format!("no score rule for {context}")))?;
                let mut noisy = |mean: f64| {
                    let e = if rule.sigma > 0.0 {
                        Normal::new(0.0, rule.sigma).expect("sigma validated").sample(&mut state.rng)
                    } else {
                        0.0
                    };
                    (mean + e).clamp(0.0, 1.0)
                };
                let c_c = noisy(rule.c_c);
                let c_a = noisy(rule.c_a());
                let prompt = &request.user_prompt;
                if prompt.contains("score only") {
                    return Ok(format!("{c_c}"));
                }
                if prompt.contains("\"objective_completion\"") {
                    return Ok(format!(
                        "{{\"objective_completion\": {c_c}, \"progress_quality\": {c_c}, \"efficiency\": {c_a}, \"strategy_alignment\": {c_a}}}"
                    ));
                }
                let n_s = num_steps(prompt).ok_or_else(|| BackendError::Protocol("prompt lacks N_s".into()))?;
                let scores = EvaluatorScores {
                    c_c,
                    c_a,
                    rationale: format!("scripted score for {context}"),
                };
                let b = compute_reward(&scores, n_s, &self.weights)
                    .map_err(|e| BackendError::Protocol(e.to_string()))?;
                Ok(format!(
                    "{{\"C_c\": {c_c}, \"C_a\": {c_a}, \"S_p\": {}, \"R_u\": {}, \"R\": {}, \"brief_rationale\": \"{}\"}}",
                    b.s_p, b.r_u, b.r, scores.rationale
                ))
            }
            Role::MetaReasoner => {
                let call = state.meta_calls;
                state.meta_calls += 1;
                let action = self
                    .script
                    .proposals
                    .iter()
                    .find(|p| p.at_call == call)
                    .map_or(DEFAULT_GUIDANCE, |p| p.action.as_str());
                Ok(format!("- Reflection: scripted review.\n- Action: {action}"))
            }
        }
    }
}

impl ChatBackend for ScenarioBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let text = self.reply(request)?;
        Ok(GenerationResponse {
            prompt_tokens: count_words(&request.user_prompt),
            completion_tokens: count_words(&text),
            text,
            latency_ms: 0,
            model_id: "scenario".to_string(),
            retries: 0,
            truncated: false,
        })
    }
}

/// One bandit selection made during a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSelection {
    pub task: usize,
    pub round: u32,
    pub context: String,
    pub arm: ArmId,
    pub explored: bool,
}

pub struct ScenarioRun {
    pub config: OrchestratorConfig,
    pub traces: Vec<ReasoningTrace>,
    pub bandit: BanditState,
    pub catalog: Catalog,
}

impl ScenarioRun {
    /// Selections in the order they were made, labelled by context.
    pub fn selections(&self, script: &ScenarioScript) -> Vec<ScenarioSelection> {
        let mut out = Vec::new();
        for (task, trace) in self.traces.iter().enumerate() {
            for step in &trace.steps {
                let (Some(arm), Some(report)) = (step.selected_arm, step.progress_report.as_ref()) else {
                    continue;
                };
                if let Some(ctx) = script.context_of(&report.summary_text) {
                    out.push(ScenarioSelection {
                        task,
                        round: step.round,
                        context: ctx.name.clone(),
                        arm,
                        explored: step.explored,
                    });
                }
            }
        }
        out
    }
}

/// Runs every task of `script` through the orchestrator against a shared bandit.
pub fn scenario_run(
    script: &ScenarioScript,
    base: &OrchestratorConfig,
    sink: &mut dyn TraceSink,
) -> Result<ScenarioRun, SimError> {
    let config = script.apply(base);
    let backend = ScenarioBackend::new(script.clone(), config.weights)?;
    let embedder = HashEmbedder::new(HashEmbedder::DEFAULT_DIM, script.seed);
    let mut orchestrator = Orchestrator::new(config.clone()).map_err(|e| SimError::Scenario(e.to_string()))?;
    let (mut bandit, mut catalog) = orchestrator
        .fresh_state(script.seed)
        .map_err(|e| SimError::Scenario(e.to_string()))?;
    let backends = Backends::uniform(&backend, &embedder);
    let mut traces = Vec::with_capacity(script.tasks);
    for i in 0..script.tasks {
        let task = TaskInput::new(format!("{}-{i}", script.name), script.task_text.clone());
        traces.push(orchestrator.run_task(&task, &backends, &mut bandit, &mut catalog, sink));
    }
    Ok(ScenarioRun {
        config,
        traces,
        bandit,
        catalog,
    })
}
