//! Strategy set and its one-to-one mapping onto bandit arms.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, ChatBackend, EmbeddingBackend, GenerationRequest, GenerationResponse, Role};
use crate::bandit::{ArmId, BanditState};
use crate::linalg::cosine;
use crate::prompts::DYNAMIC_STRATEGY;

/// Diagnosis → strategy pairs the catalog is seeded from, in table order. The
/// first three are the standard strategies; the last four are examples of
/// strategies that dynamic generation produced.
pub const SEED_STRATEGIES: [(&str, &str); 7] = [
    (
        "Progress is insufficient or the current strategy seems ineffective.",
        "Restart from scratch and propose alternative strategies.",
    ),
    (
        "There are mistakes in intermediate steps.",
        "Backtrack to the point where the error occurred.",
    ),
    (
        "The current approach is working well.",
        "Continue and provide specific suggestions for the next steps.",
    ),
    (
        "Ambiguous or conflicting intermediate results are observed.",
        "Pause to clarify and disambiguate the current reasoning, then reconcile the discrepancies.",
    ),
    (
        "The reasoning process appears overly complex or convoluted.",
        "Simplify by decomposing the task into smaller, manageable sub-tasks.",
    ),
    (
        "Evidence of error propagation or low confidence in certain sub-components.",
        "Perform targeted verification on critical steps and focus on areas with low confidence.",
    ),
    (
        "Repetitive or circular reasoning patterns are detected.",
        "Reset to a previously successful checkpoint and explore alternative solution paths.",
    ),
];

/// Guidance used in round 1, before any report exists.
pub const DEFAULT_GUIDANCE: &str = SEED_STRATEGIES[2].1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error("unknown strategy for arm {0}")]
    UnknownArm(ArmId),
    #[error("bandit has {bandit} arms but the catalog seeds {seeds}")]
    ArmMismatch { bandit: usize, seeds: usize },
    #[error("invalid catalog configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogMode {
    FixedK3,
    FixedK5,
    Dynamic,
}

impl CatalogMode {
    pub fn seed_count(self) -> usize {
        match self {
            CatalogMode::FixedK3 => 3,
            CatalogMode::FixedK5 => 5,
            CatalogMode::Dynamic => SEED_STRATEGIES.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub mode: CatalogMode,
    pub dedup_similarity_threshold: f64,
    pub max_arms: usize,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self {
            mode: CatalogMode::Dynamic,
            dedup_similarity_threshold: 0.90,
            max_arms: 32,
        }
    }
}

impl CatalogConfig {
    pub fn validate(&self) -> Result<(), CatalogError> {
        if !(0.0..=1.0).contains(&self.dedup_similarity_threshold) {
            return Err(CatalogError::Config("dedup_similarity_threshold must lie in [0, 1]"));
        }
        if self.max_arms < self.mode.seed_count() {
            return Err(CatalogError::Config("max_arms is smaller than the seed set"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub arm_id: ArmId,
    pub guidance_text: String,
    pub diagnosis_hint: String,
    pub origin: Origin,
    pub created_at_round: u64,
}

/// Exported catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub arm_id: ArmId,
    pub origin: Origin,
    pub created_at_round: u64,
    pub retired: bool,
    pub guidance_text: String,
    pub diagnosis_hint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProposalOutcome {
    /// A new arm was registered.
    Added(ArmId),
    /// The candidate was too close to an existing strategy.
    Duplicate { similar_to: ArmId, similarity: f64 },
    /// The reply had no usable `Action` field.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub request: GenerationRequest,
    pub response: GenerationResponse,
    pub candidate: Option<String>,
    pub outcome: ProposalOutcome,
}

/// Sampling parameters for meta-reasoner calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalParams {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    config: CatalogConfig,
    strategies: Vec<Strategy>,
    embeddings: Vec<Option<Vec<f64>>>,
}

impl Catalog {
    pub fn new(config: CatalogConfig) -> Result<Self, CatalogError> {
        config.validate()?;
        Ok(Self {
            config,
            strategies: Vec::new(),
            embeddings: Vec::new(),
        })
    }

    pub fn config(&self) -> &CatalogConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    /// Registers the seed strategies, adding bandit arms as needed.
    ///
    /// The bandit may already hold some pristine arms (from `BanditState::new`);
    /// they are mapped in id order. Seeding an already seeded catalog is a no-op.
    pub fn seed(&mut self, bandit: &mut BanditState) -> Result<(), CatalogError> {
        if !self.strategies.is_empty() {
            return Ok(());
        }
        let seeds = self.config.mode.seed_count();
        if bandit.arm_count() > seeds {
            return Err(CatalogError::ArmMismatch {
                bandit: bandit.arm_count(),
                seeds,
            });
        }
        while bandit.arm_count() < seeds {
            bandit.add_arm();
        }
        for (idx, (diagnosis, guidance)) in SEED_STRATEGIES.iter().take(seeds).enumerate() {
            let arm_id = ArmId(idx as u32);
            let created = bandit.arm(arm_id).map_or(0, |a| a.created_at_round());
            self.strategies.push(Strategy {
                arm_id,
                guidance_text: guidance.to_string(),
                diagnosis_hint: diagnosis.to_string(),
                origin: Origin::Seed,
                created_at_round: created,
            });
            self.embeddings.push(None);
        }
        Ok(())
    }

    pub fn guidance_for(&self, arm_id: ArmId) -> Result<&Strategy, CatalogError> {
        self.strategies
            .get(arm_id.index())
            .ok_or(CatalogError::UnknownArm(arm_id))
    }

    /// Whether another proposal may be attempted right now.
    pub fn accepts_proposals(&self, bandit: &BanditState) -> bool {
        self.config.mode == CatalogMode::Dynamic && bandit.arm_count() < self.config.max_arms
    }

    fn embedding_for(&mut self, idx: usize, embedder: &dyn EmbeddingBackend) -> Result<&[f64], BackendError> {
        if self.embeddings[idx].is_none() {
            let v = embedder.embed(&self.strategies[idx].guidance_text)?.vector;
            self.embeddings[idx] = Some(v);
        }
        Ok(self.embeddings[idx].as_deref().expect("filled above"))
    }

    /// Most similar existing strategy to `vector`, if any.
    fn nearest(&mut self, vector: &[f64], embedder: &dyn EmbeddingBackend) -> Result<Option<(ArmId, f64)>, BackendError> {
        let mut best: Option<(ArmId, f64)> = None;
        for idx in 0..self.strategies.len() {
            let sim = cosine(vector, self.embedding_for(idx, embedder)?);
            if best.is_none_or(|(_, top)| sim > top) {
                best = Some((ArmId(idx as u32), sim));
            }
        }
        Ok(best)
    }

    /// Asks the meta-reasoner for a new strategy and registers it unless it
    /// duplicates an existing one.
    pub fn propose(
        &mut self,
        report_text: &str,
        meta: &dyn ChatBackend,
        embedder: &dyn EmbeddingBackend,
        bandit: &mut BanditState,
        params: ProposalParams,
    ) -> Result<Proposal, CatalogError> {
        let prompt = DYNAMIC_STRATEGY
            .render(&[("PROGRESS_REPORT", report_text)])
            .expect("all slots provided");
        let request = GenerationRequest {
            role: Role::MetaReasoner,
            system_prompt: String::new(),
            user_prompt: prompt,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            top_p: params.top_p,
            seed_hint: None,
        };
        let response = meta.generate(&request)?;
        let Some(candidate) = parse_action(&response.text) else {
            return Ok(Proposal {
                request,
                response,
                candidate: None,
                outcome: ProposalOutcome::Unparseable,
            });
        };
        let outcome = self.register(&candidate, embedder, bandit)?;
        Ok(Proposal {
            request,
            response,
            candidate: Some(candidate),
            outcome,
        })
    }

    /// Dedup check plus registration for a candidate guidance text.
    pub fn register(
        &mut self,
        candidate: &str,
        embedder: &dyn EmbeddingBackend,
        bandit: &mut BanditState,
    ) -> Result<ProposalOutcome, CatalogError> {
        let vector = embedder.embed(candidate)?.vector;
        if let Some((similar_to, similarity)) = self.nearest(&vector, embedder)? {
            if similarity >= self.config.dedup_similarity_threshold {
                return Ok(ProposalOutcome::Duplicate {
                    similar_to,
                    similarity,
                });
            }
        }
        let arm_id = bandit.add_arm();
        debug_assert_eq!(arm_id.index(), self.strategies.len());
        self.strategies.push(Strategy {
            arm_id,
            guidance_text: candidate.to_string(),
            diagnosis_hint: String::new(),
            origin: Origin::Dynamic,
            created_at_round: bandit.round(),
        });
        self.embeddings.push(Some(vector));
        Ok(ProposalOutcome::Added(arm_id))
    }

    pub fn export(&self, bandit: &BanditState) -> Vec<CatalogEntry> {
        self.strategies
            .iter()
            .map(|s| CatalogEntry {
                arm_id: s.arm_id,
                origin: s.origin,
                created_at_round: s.created_at_round,
                retired: bandit.arm(s.arm_id).is_some_and(|a| a.is_retired()),
                guidance_text: s.guidance_text.clone(),
                diagnosis_hint: s.diagnosis_hint.clone(),
            })
            .collect()
    }
}

fn field_label(line: &str) -> Option<(&str, &str)> {
    let line = line.trim_start().trim_start_matches(['-', '*', '#']).trim_start();
    let colon = line.find(':')?;
    let label = line[..colon].trim().trim_matches('*').trim();
    if label.is_empty() || label.len() > 20 || !label.chars().all(|c| c.is_ascii_alphabetic() || c == ' ') {
        return None;
    }
    Some((label, line[colon + 1..].trim_start_matches('*')))
}

/// Extracts the text of the last `Action:` field of a meta-reasoner reply.
/// Continuation lines are kept until a blank line or the next labelled field.
pub fn parse_action(reply: &str) -> Option<String> {
    let lines: Vec<&str> = reply.lines().collect();
    let start = lines
        .iter()
        .rposition(|l| field_label(l).is_some_and(|(label, _)| label.eq_ignore_ascii_case("action")))?;
    let (_, first) = field_label(lines[start]).expect("matched above");
    let mut text = String::from(first.trim());
    for line in &lines[start + 1..] {
        if line.trim().is_empty() || field_label(line).is_some() {
            break;
        }
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(line.trim());
    }
    let text = text.trim().trim_matches('*').trim().to_string();
    (!text.is_empty()).then_some(text)
}
