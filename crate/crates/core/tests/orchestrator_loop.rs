use metareason_core::backend::{
    BackendError, ChatBackend, GenerationRequest, GenerationResponse, HashEmbedder, MockBackend, MockScript, Role,
};
use metareason_core::bandit::ArmId;
use metareason_core::catalog::{CatalogMode, DEFAULT_GUIDANCE};
use metareason_core::orchestrator::{
    extract_boxed, progress_report_prompt, summarize_progress, Backends, Guidance, NullSink, Orchestrator,
    OrchestratorConfig, Sampling, StepRecord, TaskInput, TaskStatus, TraceEvent,
};
use metareason_core::sim::game24::Game24Checker;
use metareason_core::sim::scenario::scenario_run;

mod common;

const GOOD_EVAL: &str =
    r#"{"C_c": 0.5, "C_a": 0.5, "S_p": 0.5, "R_u": 0.0, "R": 0.4, "brief_rationale": "fine"}"#;

fn small_config(mode: CatalogMode, rounds: u32) -> OrchestratorConfig {
    let mut config = OrchestratorConfig {
        max_rounds: rounds,
        ..Default::default()
    };
    config.bandit.d = 16;
    config.catalog.mode = mode;
    config
}

struct Roles {
    generator: MockBackend,
    summarizer: MockBackend,
    meta: MockBackend,
    evaluator: MockBackend,
    embedder: HashEmbedder,
}

impl Roles {
    fn new(generator: &str, evaluator: &str) -> Self {
        Self {
            generator: MockBackend::new(MockScript::constant(generator)),
            summarizer: MockBackend::new(MockScript::constant("Progress is partial; no errors seen.")),
            meta: MockBackend::new(MockScript::constant("- Action: Continue and provide specific suggestions for the next steps.")),
            evaluator: MockBackend::new(MockScript::constant(evaluator)),
            embedder: HashEmbedder::new(64, 0),
        }
    }

    fn backends(&self) -> Backends<'_> {
        Backends {
            generator: &self.generator,
            summarizer: &self.summarizer,
            meta_reasoner: &self.meta,
            evaluator: &self.evaluator,
            embedder: &self.embedder,
        }
    }
}

fn run(
    config: OrchestratorConfig,
    roles: &Roles,
    task: &TaskInput<'_>,
) -> (metareason_core::orchestrator::ReasoningTrace, metareason_core::bandit::BanditState, Vec<TraceEvent>) {
    let mut orch = Orchestrator::new(config).unwrap();
    let (mut bandit, mut catalog) = orch.fresh_state(0).unwrap();
    let mut events = Vec::new();
    let trace = orch.run_task(task, &roles.backends(), &mut bandit, &mut catalog, &mut events);
    (trace, bandit, events)
}

#[test]
fn answer_in_round_one_ends_immediately() {
    let roles = Roles::new("The answer is \\boxed{24}", GOOD_EVAL);
    let (trace, bandit, events) = run(small_config(CatalogMode::FixedK3, 30), &roles, &TaskInput::new("t", "make 24"));
    assert_eq!(trace.status, TaskStatus::Solved);
    assert_eq!(trace.final_answer.as_deref(), Some("24"));
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.bandit_updates, 0);
    assert_eq!(bandit.round(), 0);
    let step = &trace.steps[0];
    assert_eq!(step.guidance.arm_id, None);
    assert_eq!(step.guidance.text, DEFAULT_GUIDANCE);
    assert!(step.selected_arm.is_none() && step.progress_report.is_none());
    assert_eq!(roles.summarizer.calls(), 0);
    assert!(!events.iter().any(|e| matches!(e, TraceEvent::Selection { .. } | TraceEvent::Update { .. })));
}

#[test]
fn unanswered_run_exhausts_with_t_minus_one_updates() {
    let roles = Roles::new("Still working on it.", GOOD_EVAL);
    let (trace, bandit, _) = run(small_config(CatalogMode::FixedK3, 5), &roles, &TaskInput::new("t", "hard task"));
    assert_eq!(trace.status, TaskStatus::Exhausted);
    assert!(trace.final_answer.is_none());
    assert_eq!(trace.steps.len(), 5);
    assert_eq!(trace.bandit_updates, 4);
    assert_eq!(bandit.round(), 4);
    let pulls: u64 = bandit.arms().map(|(_, a)| a.pull_count()).sum();
    assert_eq!(pulls, 4);
    for (i, step) in trace.steps.iter().enumerate() {
        assert_eq!(step.round as usize, i + 1);
        assert_eq!(step.selected_arm.is_some(), i > 0);
        assert_eq!(step.bandit_updated, i > 0);
    }
    assert_eq!(roles.summarizer.calls(), 4);
    assert_eq!(roles.evaluator.calls(), 5);
}

#[test]
fn evaluator_failure_skips_the_update() {
    let roles = Roles::new("Still working on it.", "I cannot score this.");
    let (trace, bandit, events) = run(small_config(CatalogMode::FixedK3, 4), &roles, &TaskInput::new("t", "x"));
    assert_eq!(trace.status, TaskStatus::Exhausted);
    // round 1 is evaluated too but has no update to skip
    assert_eq!(trace.skipped_evaluations, 3);
    assert_eq!(trace.bandit_updates, 0);
    assert_eq!(bandit.round(), 0);
    // one initial attempt plus two retries per round
    assert_eq!(roles.evaluator.calls(), 12);
    assert_eq!(events.iter().filter(|e| matches!(e, TraceEvent::EvaluatorSkipped { .. })).count(), 4);
}

#[test]
fn evaluator_retry_recovers() {
    let mut roles = Roles::new("Working.", GOOD_EVAL);
    roles.evaluator = MockBackend::new(MockScript::constant(GOOD_EVAL).with_rule("", &["garbage", GOOD_EVAL]));
    let (trace, _, _) = run(small_config(CatalogMode::FixedK3, 3), &roles, &TaskInput::new("t", "x"));
    assert_eq!(trace.skipped_evaluations, 0);
    assert_eq!(trace.bandit_updates, 2);
    match trace.steps[0].reward.as_ref().unwrap() {
        metareason_core::orchestrator::RewardRecord::Composite { attempts, .. } => assert_eq!(*attempts, 2),
        other => panic!("unexpected {other:?}"),
    }
}

struct Failing;

impl ChatBackend for Failing {
    fn generate(&self, _request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        Err(BackendError::Transport("connection refused".into()))
    }
}

#[test]
fn generator_failure_keeps_partial_trace() {
    let roles = Roles::new("Working.", GOOD_EVAL);
    let failing = Failing;
    let flaky = MockBackend::new(MockScript::constant("Working.").with_rule("", &["Step one.", ""]));
    let mut backends = roles.backends();
    backends.generator = &flaky;
    let mut orch = Orchestrator::new(small_config(CatalogMode::FixedK3, 10)).unwrap();
    let (mut bandit, mut catalog) = orch.fresh_state(0).unwrap();
    let trace = orch.run_task(&TaskInput::new("t", "x"), &backends, &mut bandit, &mut catalog, &mut NullSink);
    assert_eq!(trace.status, TaskStatus::Failed);
    assert_eq!(trace.steps.len(), 1);
    assert!(trace.failure.is_some());
    assert!(trace.final_answer.is_none());

    backends.generator = &failing;
    let trace = orch.run_task(&TaskInput::new("t2", "x"), &backends, &mut bandit, &mut catalog, &mut NullSink);
    assert_eq!(trace.status, TaskStatus::Failed);
    assert!(trace.steps.is_empty());
    assert!(trace.failure.unwrap().contains("connection refused"));
}

#[test]
fn summarizer_failure_fails_the_task() {
    let roles = Roles::new("Working.", GOOD_EVAL);
    let mut backends = roles.backends();
    backends.summarizer = &Failing;
    let mut orch = Orchestrator::new(small_config(CatalogMode::FixedK3, 10)).unwrap();
    let (mut bandit, mut catalog) = orch.fresh_state(0).unwrap();
    let trace = orch.run_task(&TaskInput::new("t", "x"), &backends, &mut bandit, &mut catalog, &mut NullSink);
    assert_eq!(trace.status, TaskStatus::Failed);
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(bandit.round(), 0);
}

fn step(round: u32, text: &str) -> StepRecord {
    StepRecord {
        round,
        guidance: Guidance {
            arm_id: None,
            text: DEFAULT_GUIDANCE.into(),
        },
        cot_text: text.into(),
        progress_report: None,
        context_vector: None,
        selected_arm: None,
        explored: false,
        reward: None,
        bandit_updated: false,
        token_usage: Vec::new(),
    }
}

#[test]
fn report_window_selects_the_latest_steps() {
    let steps: Vec<StepRecord> = (1..=10).map(|r| step(r, &format!("marker-{r}"))).collect();
    let prompt = progress_report_prompt("the task", &steps, 3);
    for r in 1..=7 {
        assert!(!prompt.contains(&format!("marker-{r}\n")) && !prompt.contains(&format!("marker-{r}<")));
    }
    for r in 8..=10 {
        assert!(prompt.contains(&format!("marker-{r}")));
    }
    assert!(prompt.contains("the task"));

    let one = progress_report_prompt("the task", &steps[..1], 3);
    assert!(one.contains("marker-1"));

    let mock = MockBackend::new(MockScript::constant("summary words here"));
    let sampling = Sampling::default();
    let (a, _, _) = summarize_progress("the task", &steps, 3, &mock, 512, sampling, 10).unwrap();
    let (b, _, _) = summarize_progress("the task", &steps, 3, &mock, 512, sampling, 10).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.source_rounds, (8, 10));
    let (cut, _, _) = summarize_progress("the task", &steps, 3, &mock, 2, sampling, 10).unwrap();
    assert!(cut.truncated);
    assert_eq!(cut.summary_text, "summary words");
    assert!(summarize_progress("the task", &[], 3, &mock, 512, sampling, 1).is_err());
}

#[test]
fn boxed_answer_extraction() {
    assert_eq!(extract_boxed("so \\boxed{24}").unwrap().answer, "24");
    assert!(extract_boxed("no answer yet").is_none());
    let two = extract_boxed("\\boxed{12} then \\boxed{24}").unwrap();
    assert_eq!((two.answer.as_str(), two.count), ("24", 2));
    assert_eq!(extract_boxed("\\boxed{\\frac{1}{2}}").unwrap().answer, "\\frac{1}{2}");
    assert!(extract_boxed("\\boxed{unterminated").is_none());
}

#[test]
fn multiple_answers_are_flagged() {
    let roles = Roles::new("\\boxed{12} or rather \\boxed{24}", GOOD_EVAL);
    let (trace, _, _) = run(small_config(CatalogMode::FixedK3, 3), &roles, &TaskInput::new("t", "x"));
    assert_eq!(trace.final_answer.as_deref(), Some("24"));
    assert!(trace.multiple_answers);
}

#[test]
fn verification_keeps_looping_on_rejected_answers() {
    let mut roles = Roles::new("", GOOD_EVAL);
    roles.generator = MockBackend::new(
        MockScript::constant("(13 - 9) * (10 - 4) = 24 \\boxed{24}").with_rule("", &["4 * 9 - 10 - 13 = 24 \\boxed{24}", "(13 - 9) * (10 - 4) = 24 \\boxed{24}"]),
    );
    let checker = Game24Checker { numbers: [4, 9, 10, 13] };
    let task = TaskInput::new("g", "4 9 10 13").with_checker(&checker);
    let mut config = small_config(CatalogMode::FixedK3, 10);
    config.verify_answers = true;
    let (trace, _, _) = run(config.clone(), &roles, &task);
    assert_eq!(trace.status, TaskStatus::Solved);
    assert_eq!(trace.steps.len(), 2);

    roles.generator = MockBackend::new(MockScript::constant("4 * 9 - 10 - 13 = 24 \\boxed{24}"));
    config.verify_answers = false;
    let (trace, _, _) = run(config, &roles, &task);
    assert_eq!(trace.steps.len(), 1);
}

#[test]
fn completion_tokens_stay_within_budget() {
    let long = "word ".repeat(2000);
    let mut roles = Roles::new(&long, GOOD_EVAL);
    roles.summarizer = MockBackend::new(MockScript::constant(long.clone()));
    roles.meta = MockBackend::new(MockScript::constant(format!("- Action: {long}")));
    let config = small_config(CatalogMode::Dynamic, 6);
    let budget = config.round_completion_budget() * 6;
    let (trace, _, _) = run(config, &roles, &TaskInput::new("t", "x"));
    assert!(trace.totals.completion_tokens <= budget);
    let summed: u64 = trace.steps.iter().map(|s| s.completion_tokens()).sum();
    assert_eq!(summed, trace.totals.completion_tokens);
    assert!(trace.steps.iter().all(|s| s.cot_text.split_whitespace().count() <= 512));
}

#[test]
fn mock_runs_replay_identically() {
    let once = || {
        let roles = Roles::new("Working.", GOOD_EVAL);
        let (trace, bandit, events) = run(small_config(CatalogMode::Dynamic, 6), &roles, &TaskInput::new("t", "x"));
        let events: Vec<String> = events.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
        (serde_json::to_string(&trace).unwrap(), bandit.snapshot(), events)
    };
    assert_eq!(once(), once());
}

#[test]
fn catalog_grows_monotonically_and_stays_deduplicated() {
    let roles = Roles::new("Working.", GOOD_EVAL);
    let meta = MockBackend::new(MockScript::constant("- Action: Continue and provide specific suggestions for the next steps.").with_rule(
        "",
        &[
            "- Action: Check the parity of each intermediate value.",
            "- Action: Check the parity of each intermediate value.",
            "- Action: Estimate the magnitude of the result before computing it.",
            "nothing useful",
        ],
    ));
    let mut backends = roles.backends();
    backends.meta_reasoner = &meta;
    let mut orch = Orchestrator::new(small_config(CatalogMode::Dynamic, 8)).unwrap();
    let (mut bandit, mut catalog) = orch.fresh_state(0).unwrap();
    let mut events = Vec::new();
    orch.run_task(&TaskInput::new("t", "x"), &backends, &mut bandit, &mut catalog, &mut events);
    assert_eq!(catalog.len(), 9);
    assert_eq!(bandit.arm_count(), 9);
    let mut sizes = Vec::new();
    let mut size = 7;
    for e in &events {
        if let TraceEvent::Proposal { outcome, .. } = e {
            if matches!(outcome, metareason_core::catalog::ProposalOutcome::Added(_)) {
                size += 1;
            }
            sizes.push(size);
        }
    }
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    let embedder = HashEmbedder::new(64, 0);
    let texts: Vec<Vec<f64>> = catalog.strategies().iter().map(|s| embedder.vector(&s.guidance_text)).collect();
    for i in 0..texts.len() {
        assert_eq!(catalog.strategies()[i].arm_id, ArmId(i as u32));
        for j in 0..i {
            assert!(metareason_core::linalg::cosine(&texts[i], &texts[j]) < 0.90);
        }
    }
}

#[test]
fn evaluator_modes_and_profiles() {
    let mut config = small_config(CatalogMode::FixedK3, 3);
    config.evaluator_mode = metareason_core::orchestrator::EvaluatorMode::ScoreOnly;
    let roles = Roles::new("Working.", "0.7");
    let (trace, _, _) = run(config, &roles, &TaskInput::new("t", "x"));
    assert_eq!(trace.bandit_updates, 2);
    assert!(trace.steps.iter().all(|s| s.token_usage.iter().filter(|u| u.role == Role::Evaluator).all(|u| u.completion_tokens <= 4)));

    let mut config = small_config(CatalogMode::FixedK3, 3);
    config.reward_profile = metareason_core::orchestrator::RewardProfile::Training;
    let roles = Roles::new(
        "Working.",
        r#"{"objective_completion": 1, "progress_quality": 0, "efficiency": 0, "strategy_alignment": 0}"#,
    );
    let (trace, _, _) = run(config, &roles, &TaskInput::new("t", "x"));
    let r = trace.steps[1].reward.as_ref().unwrap().total();
    assert!((r - 0.40).abs() < 1e-12);
}

#[test]
fn bandit_learns_to_backtrack_after_errors() {
    for seed in 0..3 {
        let mut script = common::scenario("backtrack.toml");
        script.seed = seed;
        let run = scenario_run(&script, &OrchestratorConfig::default(), &mut NullSink).unwrap();
        let backtrack = run
            .catalog
            .strategies()
            .iter()
            .find(|s| s.guidance_text.starts_with("Backtrack"))
            .unwrap()
            .arm_id;
        let picks: Vec<ArmId> = run
            .selections(&script)
            .into_iter()
            .filter(|s| s.context == "error")
            .map(|s| s.arm)
            .collect();
        let last = &picks[picks.len() - 50..];
        let hits = last.iter().filter(|&&a| a == backtrack).count();
        assert!(hits >= 40, "seed {seed}: {hits}/50");
    }
}
