//! The reasoning loop.
//!
//! Round `t` of a task:
//!
//! 1. for `t > 1`: summarize `C_{t−1}` into a report, turn it into a context
//!    vector, optionally let the meta-reasoner propose a strategy, and select
//!    an arm; round 1 uses the default guidance with no selection;
//! 2. generate the next step under the chosen guidance and append it;
//! 3. score the updated trajectory with the evaluator;
//! 4. for `t > 1`: update the bandit with the previous context, the selected
//!    arm and this round's reward;
//! 5. stop if the step carries a boxed answer.
//!
//! Every backend call and decision is reported to a [`TraceSink`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::{
    truncate_words, BackendError, ChatBackend, EmbeddingBackend, GenerationRequest, GenerationResponse, Role,
};
use crate::bandit::{ArmId, BanditConfig, BanditError, BanditState, ContextVector};
use crate::catalog::{Catalog, CatalogConfig, CatalogMode, ProposalOutcome, ProposalParams, DEFAULT_GUIDANCE};
use crate::features::FeatureExtractor;
use crate::prompts::{COT_GENERATION, PROGRESS_EVALUATION, PROGRESS_REPORT, PROGRESS_SCORE_ONLY, TRAINING_EVALUATION};
use crate::reward::{
    compute_training_reward, parse_evaluator_output, parse_score_only, parse_training_output, EvaluatorScores,
    RewardBreakdown, RewardError, RewardWeights, TrainingComponents, TrainingRewardWeights,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid orchestrator configuration: {0}")]
    Config(String),
}

/// Per-call completion caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenCaps {
    pub cot: u32,
    pub meta_feedback: u32,
    pub progress_report: u32,
    /// Shared by all evaluator attempts within one round.
    pub evaluator: u32,
    /// Cap used instead of `evaluator` in score-only mode.
    pub score_only: u32,
}

impl Default for TokenCaps {
    fn default() -> Self {
        Self {
            cot: 512,
            meta_feedback: 256,
            progress_report: 512,
            evaluator: 256,
            score_only: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorMode {
    /// Strict JSON object with `C_c`, `C_a` and totals.
    Structured,
    /// Bare correctness number.
    ScoreOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardProfile {
    /// `β·S_p + (1 − β)·R_u`.
    Composite,
    /// Weighted sum of four judged components.
    Training,
}

/// Round caps for the supported task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskProfile {
    Game24,
    SciBench,
    TheoremQa,
}

impl TaskProfile {
    pub fn max_rounds(self) -> u32 {
        match self {
            TaskProfile::Game24 | TaskProfile::SciBench => 30,
            TaskProfile::TheoremQa => 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    /// Round cap `T`.
    pub max_rounds: u32,
    /// Number of most recent steps summarized into a report.
    pub report_window: usize,
    pub projection_seed: u64,
    /// Keep looping when a checker rejects the boxed answer.
    pub verify_answers: bool,
    pub evaluator_mode: EvaluatorMode,
    pub reward_profile: RewardProfile,
    /// Extra evaluator attempts after a malformed reply.
    pub evaluator_retries: u32,
    pub weights: RewardWeights,
    pub training_weights: TrainingRewardWeights,
    pub sampling: Sampling,
    pub token_caps: TokenCaps,
    pub bandit: BanditConfig,
    pub catalog: CatalogConfig,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            max_rounds: TaskProfile::Game24.max_rounds(),
            report_window: 3,
            projection_seed: 0,
            verify_answers: false,
            evaluator_mode: EvaluatorMode::Structured,
            reward_profile: RewardProfile::Composite,
            evaluator_retries: 2,
            weights: RewardWeights::default(),
            training_weights: TrainingRewardWeights::default(),
            sampling: Sampling::default(),
            token_caps: TokenCaps::default(),
            bandit: BanditConfig::default(),
            catalog: CatalogConfig::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |e: &dyn core::fmt::Display| OrchestratorError::Config(e.to_string());
        if self.max_rounds == 0 {
            return Err(OrchestratorError::Config("max_rounds must be positive".into()));
        }
        if self.report_window == 0 {
            return Err(OrchestratorError::Config("report_window must be positive".into()));
        }
        if self.sampling.temperature.is_nan() || self.sampling.temperature < 0.0 || !(self.sampling.top_p > 0.0 && self.sampling.top_p <= 1.0) {
            return Err(OrchestratorError::Config("temperature must be >= 0 and top_p in (0, 1]".into()));
        }
        let caps = &self.token_caps;
        if [caps.cot, caps.meta_feedback, caps.progress_report, caps.evaluator, caps.score_only].contains(&0) {
            return Err(OrchestratorError::Config("token caps must be positive".into()));
        }
        self.weights.validate().map_err(|e| bad(&e))?;
        self.training_weights.validate().map_err(|e| bad(&e))?;
        self.bandit.validate().map_err(|e| bad(&e))?;
        self.catalog.validate().map_err(|e| bad(&e))?;
        Ok(())
    }

    /// Evaluator completion cap in the configured mode.
    pub fn evaluator_cap(&self) -> u32 {
        match self.evaluator_mode {
            EvaluatorMode::Structured => self.token_caps.evaluator,
            EvaluatorMode::ScoreOnly => self.token_caps.score_only,
        }
    }

    /// Upper bound on completion tokens a single round can spend.
    pub fn round_completion_budget(&self) -> u64 {
        let caps = &self.token_caps;
        u64::from(caps.cot) + u64::from(caps.meta_feedback) + u64::from(caps.progress_report) + u64::from(self.evaluator_cap())
    }
}

/// Role-separated backend handles for one run.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub generator: &'a dyn ChatBackend,
    pub summarizer: &'a dyn ChatBackend,
    pub meta_reasoner: &'a dyn ChatBackend,
    pub evaluator: &'a dyn ChatBackend,
    pub embedder: &'a dyn EmbeddingBackend,
}

impl<'a> Backends<'a> {
    /// Same chat backend for every role.
    pub fn uniform(chat: &'a dyn ChatBackend, embedder: &'a dyn EmbeddingBackend) -> Self {
        Self {
            generator: chat,
            summarizer: chat,
            meta_reasoner: chat,
            evaluator: chat,
            embedder,
        }
    }
}

/// Accepts or rejects an extracted answer, for tasks that have a verifier.
pub trait AnswerChecker {
    fn accept(&self, answer: &str, step_text: &str) -> bool;
}

pub struct TaskInput<'a> {
    pub id: String,
    pub text: String,
    pub checker: Option<&'a dyn AnswerChecker>,
}

impl<'a> TaskInput<'a> {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            checker: None,
        }
    }

    pub fn with_checker(mut self, checker: &'a dyn AnswerChecker) -> Self {
        self.checker = Some(checker);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Running,
    Solved,
    Exhausted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallUsage {
    pub role: Role,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub retries: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl Totals {
    fn add(&mut self, usage: &CallUsage) {
        self.calls += 1;
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
        self.latency_ms += usage.latency_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub summary_text: String,
    /// Inclusive range of rounds that were summarized.
    pub source_rounds: (u32, u32),
    pub created_at_round: u32,
    /// The summary hit the report cap and was cut.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum RewardRecord {
    Composite {
        scores: EvaluatorScores,
        breakdown: RewardBreakdown,
        recomputed: bool,
        attempts: u32,
    },
    Training {
        components: TrainingComponents,
        total: f64,
        attempts: u32,
    },
}

impl RewardRecord {
    pub fn total(&self) -> f64 {
        match self {
            RewardRecord::Composite { breakdown, .. } => breakdown.r,
            RewardRecord::Training { total, .. } => *total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    /// `None` for the default round-1 guidance.
    pub arm_id: Option<ArmId>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: u32,
    pub guidance: Guidance,
    pub cot_text: String,
    pub progress_report: Option<ProgressReport>,
    pub context_vector: Option<ContextVector>,
    pub selected_arm: Option<ArmId>,
    pub explored: bool,
    pub reward: Option<RewardRecord>,
    pub bandit_updated: bool,
    pub token_usage: Vec<CallUsage>,
}

impl StepRecord {
    pub fn wall_ms(&self) -> u64 {
        self.token_usage.iter().map(|u| u.latency_ms).sum()
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.token_usage.iter().map(|u| u.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.token_usage.iter().map(|u| u.completion_tokens).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub task_id: String,
    pub task: String,
    pub steps: Vec<StepRecord>,
    pub status: TaskStatus,
    pub final_answer: Option<String>,
    /// More than one boxed answer appeared in the final step.
    pub multiple_answers: bool,
    pub failure: Option<String>,
    pub totals: Totals,
    pub bandit_updates: u32,
    /// Rounds with a selected arm whose evaluation failed, so no update ran.
    pub skipped_evaluations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    TaskStart {
        task_id: String,
        task: String,
    },
    RoundStart {
        task_id: String,
        round: u32,
    },
    BackendCall {
        task_id: String,
        round: u32,
        request: GenerationRequest,
        response: Option<GenerationResponse>,
        error: Option<String>,
    },
    Embedding {
        task_id: String,
        round: u32,
        model_id: String,
        dim: usize,
        prompt_tokens: u64,
        latency_ms: u64,
        retries: u32,
    },
    Report {
        task_id: String,
        round: u32,
        report: ProgressReport,
    },
    Proposal {
        task_id: String,
        round: u32,
        candidate: Option<String>,
        outcome: ProposalOutcome,
    },
    ProposalFailed {
        task_id: String,
        round: u32,
        error: String,
    },
    Selection {
        task_id: String,
        round: u32,
        arm_id: ArmId,
        explored: bool,
        score: f64,
    },
    Reward {
        task_id: String,
        round: u32,
        reward: RewardRecord,
    },
    EvaluatorSkipped {
        task_id: String,
        round: u32,
        reason: String,
    },
    Update {
        task_id: String,
        round: u32,
        arm_id: ArmId,
        reward: f64,
        applied_reward: f64,
        retired: bool,
        bandit_round: u64,
    },
    Termination {
        task_id: String,
        status: TaskStatus,
        rounds: u32,
        final_answer: Option<String>,
        multiple_answers: bool,
        failure: Option<String>,
    },
}

pub trait TraceSink {
    fn record(&mut self, event: TraceEvent);
}

/// Discards all events.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _event: TraceEvent) {}
}

impl TraceSink for Vec<TraceEvent> {
    fn record(&mut self, event: TraceEvent) {
        self.push(event);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedAnswer {
    pub answer: String,
    /// Number of boxed answers found; the last one is returned.
    pub count: usize,
}

/// Finds `\boxed{...}` groups (with balanced inner braces) and returns the last.
pub fn extract_boxed(text: &str) -> Option<ExtractedAnswer> {
    const MARKER: &str = "\\boxed{";
    let mut found: Option<String> = None;
    let mut count = 0;
    let mut rest = text;
    while let Some(pos) = rest.find(MARKER) {
        let body = &rest[pos + MARKER.len()..];
        let mut depth = 1usize;
        let mut end = None;
        for (i, ch) in body.char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(i) => {
                found = Some(body[..i].to_string());
                count += 1;
                rest = &body[i + 1..];
            }
            None => break,
        }
    }
    found.map(|answer| ExtractedAnswer { answer, count })
}

/// Boxed answer in the latest step of the trace.
pub fn extract_answer(trace: &ReasoningTrace) -> Option<ExtractedAnswer> {
    trace.steps.last().and_then(|s| extract_boxed(&s.cot_text))
}

fn format_steps(steps: &[StepRecord]) -> String {
    let mut out = String::new();
    for (i, step) in steps.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "Step {}:\n{}", step.round, step.cot_text.trim());
    }
    out
}

fn window(steps: &[StepRecord], size: usize) -> &[StepRecord] {
    &steps[steps.len().saturating_sub(size)..]
}

/// Fills the progress-report prompt with the task and the last `window` steps.
pub fn progress_report_prompt(task: &str, steps: &[StepRecord], window_size: usize) -> String {
    let solution = format!(
        "<task_description>\n{}\n</task_description>\n\n{}",
        task.trim(),
        format_steps(window(steps, window_size))
    );
    PROGRESS_REPORT
        .render(&[("SOLUTION", &solution)])
        .expect("all slots provided")
}

pub fn cot_prompt(task: &str, previous: &[StepRecord], guidance: &str) -> String {
    COT_GENERATION
        .render(&[
            ("TASK_DESCRIPTION", task.trim()),
            ("CURRENT_STEP", &format_steps(previous)),
            ("META_REASONER_FEEDBACK", guidance),
        ])
        .expect("all slots provided")
}

/// Summarizes the last `window` steps of `steps` through the summarizer backend.
#[allow(clippy::too_many_arguments)]
pub fn summarize_progress(
    task: &str,
    steps: &[StepRecord],
    window_size: usize,
    backend: &dyn ChatBackend,
    cap: u32,
    sampling: Sampling,
    created_at_round: u32,
) -> Result<(ProgressReport, GenerationRequest, GenerationResponse), BackendError> {
    if steps.is_empty() {
        return Err(BackendError::Protocol("cannot summarize an empty trace".into()));
    }
    let recent = window(steps, window_size);
    let request = GenerationRequest {
        role: Role::Summarizer,
        system_prompt: String::new(),
        user_prompt: progress_report_prompt(task, steps, window_size),
        max_tokens: cap,
        temperature: sampling.temperature,
        top_p: sampling.top_p,
        seed_hint: None,
    };
    let response = backend.generate(&request)?;
    if response.text.trim().is_empty() {
        return Err(BackendError::EmptyCompletion);
    }
    let (summary_text, cut) = truncate_words(response.text.trim(), cap);
    let report = ProgressReport {
        summary_text,
        source_rounds: (recent[0].round, recent[recent.len() - 1].round),
        created_at_round,
        truncated: cut || response.truncated,
    };
    Ok((report, request, response))
}

struct RoundCalls<'s> {
    sink: &'s mut dyn TraceSink,
    task_id: &'s str,
    round: u32,
    usage: Vec<CallUsage>,
}

impl RoundCalls<'_> {
    fn log(&mut self, request: GenerationRequest, result: &Result<GenerationResponse, BackendError>) {
        if let Ok(response) = result {
            self.usage.push(CallUsage {
                role: request.role,
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
                latency_ms: response.latency_ms,
                retries: response.retries,
            });
        }
        self.sink.record(TraceEvent::BackendCall {
            task_id: self.task_id.to_string(),
            round: self.round,
            request,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
    }

    fn call(&mut self, backend: &dyn ChatBackend, request: GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let result = backend.generate(&request);
        self.log(request, &result);
        result
    }

    fn event(&mut self, event: TraceEvent) {
        self.sink.record(event);
    }
}

pub struct Orchestrator {
    config: OrchestratorConfig,
    features: FeatureExtractor,
}

enum Stop {
    Solved(String),
    Failed(String),
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let features = FeatureExtractor::new(config.bandit.d, config.projection_seed);
        Ok(Self { config, features })
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn features(&self) -> &FeatureExtractor {
        &self.features
    }

    /// Builds a bandit and seeded catalog that match this configuration.
    pub fn fresh_state(&self, rng_seed: u64) -> Result<(BanditState, Catalog), OrchestratorError> {
        let bad = |e: &dyn core::fmt::Display| OrchestratorError::Config(e.to_string());
        let seeds = self.config.catalog.mode.seed_count();
        let mut bandit = BanditState::new(self.config.bandit.clone(), seeds, rng_seed).map_err(|e| bad(&e))?;
        let mut catalog = Catalog::new(self.config.catalog.clone()).map_err(|e| bad(&e))?;
        catalog.seed(&mut bandit).map_err(|e| bad(&e))?;
        Ok((bandit, catalog))
    }

    fn sample(&self, role: Role, user_prompt: String, max_tokens: u32) -> GenerationRequest {
        GenerationRequest {
            role,
            system_prompt: String::new(),
            user_prompt,
            max_tokens,
            temperature: self.config.sampling.temperature,
            top_p: self.config.sampling.top_p,
            seed_hint: None,
        }
    }

    pub fn run_task(
        &mut self,
        task: &TaskInput<'_>,
        backends: &Backends<'_>,
        bandit: &mut BanditState,
        catalog: &mut Catalog,
        sink: &mut dyn TraceSink,
    ) -> ReasoningTrace {
        sink.record(TraceEvent::TaskStart {
            task_id: task.id.clone(),
            task: task.text.clone(),
        });
        let mut trace = ReasoningTrace {
            task_id: task.id.clone(),
            task: task.text.clone(),
            steps: Vec::new(),
            status: TaskStatus::Running,
            final_answer: None,
            multiple_answers: false,
            failure: None,
            totals: Totals::default(),
            bandit_updates: 0,
            skipped_evaluations: 0,
        };

        let mut stop = None;
        if bandit.config().d != self.features.dim() {
            stop = Some(Stop::Failed(format!(
                "bandit dimension {} does not match feature dimension {}",
                bandit.config().d,
                self.features.dim()
            )));
        } else if catalog.len() != bandit.arm_count() {
            stop = Some(Stop::Failed("catalog and bandit arm sets differ".into()));
        }

        if stop.is_none() {
            for round in 1..=self.config.max_rounds {
                match self.run_round(round, task, backends, bandit, catalog, sink, &mut trace) {
                    Ok(None) => {}
                    Ok(Some(answer)) => {
                        stop = Some(Stop::Solved(answer));
                        break;
                    }
                    Err(msg) => {
                        stop = Some(Stop::Failed(msg));
                        break;
                    }
                }
            }
        }

        match stop {
            Some(Stop::Solved(answer)) => {
                trace.status = TaskStatus::Solved;
                trace.final_answer = Some(answer);
            }
            Some(Stop::Failed(msg)) => {
                trace.status = TaskStatus::Failed;
                trace.failure = Some(msg);
            }
            None => trace.status = TaskStatus::Exhausted,
        }
        if let Some(found) = extract_answer(&trace) {
            trace.multiple_answers = found.count > 1;
        }
        sink.record(TraceEvent::Termination {
            task_id: trace.task_id.clone(),
            status: trace.status,
            rounds: trace.steps.len() as u32,
            final_answer: trace.final_answer.clone(),
            multiple_answers: trace.multiple_answers,
            failure: trace.failure.clone(),
        });
        trace
    }

    /// One loop iteration. `Ok(Some(answer))` ends the task as solved.
    #[allow(clippy::too_many_arguments)]
    fn run_round(
        &mut self,
        round: u32,
        task: &TaskInput<'_>,
        backends: &Backends<'_>,
        bandit: &mut BanditState,
        catalog: &mut Catalog,
        sink: &mut dyn TraceSink,
        trace: &mut ReasoningTrace,
    ) -> Result<Option<String>, String> {
        sink.record(TraceEvent::RoundStart {
            task_id: task.id.clone(),
            round,
        });
        let mut calls = RoundCalls {
            sink,
            task_id: &task.id,
            round,
            usage: Vec::new(),
        };
        let caps = self.config.token_caps;

        let mut report = None;
        let mut context = None;
        let mut selection = None;
        let guidance = if round > 1 {
            let (rep, request, response) = match summarize_progress(
                &task.text,
                &trace.steps,
                self.config.report_window,
                backends.summarizer,
                caps.progress_report,
                self.config.sampling,
                round - 1,
            ) {
                Ok(ok) => ok,
                Err(e) => {
                    let request = self.sample(
                        Role::Summarizer,
                        progress_report_prompt(&task.text, &trace.steps, self.config.report_window),
                        caps.progress_report,
                    );
                    calls.log(request, &Err(e.clone()));
                    finish_round(trace, calls.usage);
                    return Err(format!("progress report failed: {e}"));
                }
            };
            calls.log(request, &Ok(response));
            calls.event(TraceEvent::Report {
                task_id: task.id.clone(),
                round,
                report: rep.clone(),
            });

            let (x, embedding) = match self.features.extract(&rep.summary_text, backends.embedder) {
                Ok(ok) => ok,
                Err(e) => {
                    finish_round(trace, calls.usage);
                    return Err(format!("feature extraction failed: {e}"));
                }
            };
            calls.event(TraceEvent::Embedding {
                task_id: task.id.clone(),
                round,
                model_id: embedding.model_id.clone(),
                dim: embedding.vector.len(),
                prompt_tokens: embedding.prompt_tokens,
                latency_ms: embedding.latency_ms,
                retries: embedding.retries,
            });

            if catalog.config().mode == CatalogMode::Dynamic && catalog.accepts_proposals(bandit) {
                let params = ProposalParams {
                    max_tokens: caps.meta_feedback,
                    temperature: self.config.sampling.temperature,
                    top_p: self.config.sampling.top_p,
                };
                match catalog.propose(&rep.summary_text, backends.meta_reasoner, backends.embedder, bandit, params) {
                    Ok(proposal) => {
                        calls.log(proposal.request, &Ok(proposal.response));
                        calls.event(TraceEvent::Proposal {
                            task_id: task.id.clone(),
                            round,
                            candidate: proposal.candidate,
                            outcome: proposal.outcome,
                        });
                    }
                    // The arm set stays as it was and the round goes on.
                    Err(e) => calls.event(TraceEvent::ProposalFailed {
                        task_id: task.id.clone(),
                        round,
                        error: e.to_string(),
                    }),
                }
            }

            let chosen = match bandit.select(&x) {
                Ok(sel) => sel,
                Err(e) => {
                    finish_round(trace, calls.usage);
                    return Err(format!("arm selection failed: {e}"));
                }
            };
            calls.event(TraceEvent::Selection {
                task_id: task.id.clone(),
                round,
                arm_id: chosen.arm,
                explored: chosen.explored,
                score: chosen.score,
            });
            let text = match catalog.guidance_for(chosen.arm) {
                Ok(s) => s.guidance_text.clone(),
                Err(e) => {
                    finish_round(trace, calls.usage);
                    return Err(e.to_string());
                }
            };
            report = Some(rep);
            context = Some(x);
            selection = Some(chosen);
            Guidance {
                arm_id: Some(chosen.arm),
                text,
            }
        } else {
            Guidance {
                arm_id: None,
                text: DEFAULT_GUIDANCE.to_string(),
            }
        };

        let request = self.sample(Role::Generator, cot_prompt(&task.text, &trace.steps, &guidance.text), caps.cot);
        let cot_text = match calls.call(backends.generator, request) {
            Ok(r) if !r.text.trim().is_empty() => r.text,
            Ok(_) => {
                finish_round(trace, calls.usage);
                return Err(BackendError::EmptyCompletion.to_string());
            }
            Err(e) => {
                finish_round(trace, calls.usage);
                return Err(format!("generation failed: {e}"));
            }
        };

        let mut step = StepRecord {
            round,
            guidance,
            cot_text,
            progress_report: report,
            context_vector: context,
            selected_arm: selection.map(|s| s.arm),
            explored: selection.is_some_and(|s| s.explored),
            reward: None,
            bandit_updated: false,
            token_usage: Vec::new(),
        };

        // N_s counts the steps of C_t, including the one just generated.
        let n_s = trace.steps.len() as u64 + 1;
        let reward = self.evaluate(&task.text, &trace.steps, &step, n_s, backends.evaluator, &mut calls);
        match &reward {
            Ok(record) => calls.event(TraceEvent::Reward {
                task_id: task.id.clone(),
                round,
                reward: record.clone(),
            }),
            Err(reason) => {
                if selection.is_some() {
                    trace.skipped_evaluations += 1;
                }
                calls.event(TraceEvent::EvaluatorSkipped {
                    task_id: task.id.clone(),
                    round,
                    reason: reason.clone(),
                });
            }
        }

        if let (Some(sel), Some(x), Ok(record)) = (selection, step.context_vector.as_ref(), reward.as_ref()) {
            let r = record.total();
            match bandit.update(sel.arm, x, r) {
                Ok(update) => {
                    step.bandit_updated = true;
                    trace.bandit_updates += 1;
                    calls.event(TraceEvent::Update {
                        task_id: task.id.clone(),
                        round,
                        arm_id: sel.arm,
                        reward: r,
                        applied_reward: update.applied_reward,
                        retired: update.retired,
                        bandit_round: bandit.round(),
                    });
                }
                Err(e) => {
                    step.reward = reward.ok();
                    trace.steps.push(step);
                    finish_round(trace, calls.usage);
                    return Err(format!("bandit update failed: {e}"));
                }
            }
        }
        step.reward = reward.ok();

        let answer = extract_boxed(&step.cot_text);
        let accepted = match (&answer, task.checker) {
            (Some(a), Some(checker)) if self.config.verify_answers => checker.accept(&a.answer, &step.cot_text),
            (Some(_), _) => true,
            (None, _) => false,
        };
        trace.steps.push(step);
        finish_round(trace, calls.usage);
        Ok(answer.filter(|_| accepted).map(|a| a.answer))
    }

    fn evaluate(
        &self,
        task: &str,
        previous: &[StepRecord],
        current: &StepRecord,
        n_s: u64,
        backend: &dyn ChatBackend,
        calls: &mut RoundCalls<'_>,
    ) -> Result<RewardRecord, String> {
        let mut recent: Vec<StepRecord> = window(previous, self.config.report_window.saturating_sub(1)).to_vec();
        recent.push(current.clone());
        let progress = format_steps(&recent);
        let n_s_text = format!("{n_s}");
        let prompt = match (self.config.reward_profile, self.config.evaluator_mode) {
            (RewardProfile::Training, _) => TRAINING_EVALUATION.render(&[
                ("TASK_OBJECTIVE", task.trim()),
                ("STRATEGY", &current.guidance.text),
                ("CURRENT_PROGRESS", &progress),
                ("NUM_STEPS", &n_s_text),
            ]),
            (RewardProfile::Composite, EvaluatorMode::ScoreOnly) => PROGRESS_SCORE_ONLY.render(&[
                ("TASK_OBJECTIVE", task.trim()),
                ("CURRENT_PROGRESS", &progress),
                ("NUM_STEPS", &n_s_text),
            ]),
            (RewardProfile::Composite, EvaluatorMode::Structured) => {
                let w = &self.config.weights;
                PROGRESS_EVALUATION.render(&[
                    ("TASK_OBJECTIVE", task.trim()),
                    ("CURRENT_PROGRESS", &progress),
                    ("NUM_STEPS", &n_s_text),
                    ("W1", &format!("{}", w.w1)),
                    ("W2", &format!("{}", w.w2)),
                    ("ALPHA", &format!("{}", w.alpha)),
                    ("BETA", &format!("{}", w.beta)),
                ])
            }
        }
        .expect("all slots provided");

        let cap = match self.config.reward_profile {
            RewardProfile::Training => self.config.token_caps.evaluator,
            RewardProfile::Composite => self.config.evaluator_cap(),
        };
        let mut remaining = u64::from(cap);
        let mut last_error = String::from("evaluator budget exhausted");
        for attempt in 1..=self.config.evaluator_retries + 1 {
            if remaining == 0 {
                break;
            }
            let request = self.sample(Role::Evaluator, prompt.clone(), remaining as u32);
            let response = match calls.call(backend, request) {
                Ok(r) => r,
                Err(e) => return Err(format!("evaluator backend error: {e}")),
            };
            remaining = remaining.saturating_sub(response.completion_tokens);
            match self.parse_reward(&response.text, n_s, attempt) {
                Ok(record) => return Ok(record),
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(last_error)
    }

    fn parse_reward(&self, text: &str, n_s: u64, attempts: u32) -> Result<RewardRecord, RewardError> {
        let weights = &self.config.weights;
        match (self.config.reward_profile, self.config.evaluator_mode) {
            (RewardProfile::Training, _) => {
                let components = parse_training_output(text)?;
                let total = compute_training_reward(&components, &self.config.training_weights)?;
                Ok(RewardRecord::Training {
                    components,
                    total,
                    attempts,
                })
            }
            (RewardProfile::Composite, mode) => {
                let parsed = match mode {
                    EvaluatorMode::Structured => parse_evaluator_output(text, n_s, weights)?,
                    EvaluatorMode::ScoreOnly => parse_score_only(text, n_s, weights)?,
                };
                Ok(RewardRecord::Composite {
                    scores: parsed.scores,
                    breakdown: parsed.breakdown,
                    recomputed: parsed.recomputed,
                    attempts,
                })
            }
        }
    }
}

fn finish_round(trace: &mut ReasoningTrace, usage: Vec<CallUsage>) {
    for u in &usage {
        trace.totals.add(u);
    }
    // A round that failed before producing a step still counts toward totals.
    if let Some(last) = trace.steps.last_mut() {
        if last.token_usage.is_empty() {
            last.token_usage = usage;
        }
    }
}

impl From<BanditError> for OrchestratorError {
    fn from(e: BanditError) -> Self {
        OrchestratorError::Config(e.to_string())
    }
}
