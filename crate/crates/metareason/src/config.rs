//! TOML run configuration.
//!
//! Sections: `[orchestrator]`, `[bandit]`, `[catalog]`, `[weights]`,
//! `[backends]` and `[mock]`. Every field has a default, so an empty file is a
//! valid configuration.

use std::path::Path;
use std::time::Duration;

use metareason_core::backend::MockScript;
use metareason_core::bandit::BanditConfig;
use metareason_core::catalog::CatalogConfig;
use metareason_core::orchestrator::{
    EvaluatorMode, OrchestratorConfig, RewardProfile, Sampling, TaskProfile, TokenCaps,
};
use metareason_core::reward::{RewardWeights, TrainingRewardWeights};
use serde::{Deserialize, Serialize};

use crate::http::{Endpoint, OpenAiClient, RetryPolicy};

pub const API_KEY_ENV: &str = "METAREASON_API_KEY";
pub const BASE_URL_ENV: &str = "METAREASON_BASE_URL";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorSection {
    /// Sets `max_rounds` when that is not given explicitly.
    pub task_profile: TaskProfile,
    pub max_rounds: Option<u32>,
    pub report_window: usize,
    pub projection_seed: u64,
    pub verify_answers: bool,
    pub evaluator_mode: EvaluatorMode,
    pub reward_profile: RewardProfile,
    pub evaluator_retries: u32,
    pub training_weights: TrainingRewardWeights,
    pub sampling: Sampling,
    pub token_caps: TokenCaps,
}

impl Default for OrchestratorSection {
    fn default() -> Self {
        let base = OrchestratorConfig::default();
        Self {
            task_profile: TaskProfile::Game24,
            max_rounds: None,
            report_window: base.report_window,
            projection_seed: base.projection_seed,
            verify_answers: base.verify_answers,
            evaluator_mode: base.evaluator_mode,
            reward_profile: base.reward_profile,
            evaluator_retries: base.evaluator_retries,
            training_weights: base.training_weights,
            sampling: base.sampling,
            token_caps: base.token_caps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleEndpoint {
    pub model: String,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl RoleEndpoint {
    fn model(model: &str) -> Self {
        Self {
            model: model.to_string(),
            base_url: None,
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub base_url: String,
    /// Name of the variable holding the API key.
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
    pub embedding_dim: usize,
    pub generator: RoleEndpoint,
    pub summarizer: RoleEndpoint,
    pub meta_reasoner: RoleEndpoint,
    pub evaluator: RoleEndpoint,
    pub embedding: RoleEndpoint,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: API_KEY_ENV.into(),
            max_retries: 3,
            backoff_ms: 500,
            max_backoff_ms: 8_000,
            timeout_secs: 120,
            embedding_dim: 1536,
            generator: RoleEndpoint::model("gpt-4o-mini"),
            summarizer: RoleEndpoint::model("gpt-4o-mini"),
            meta_reasoner: RoleEndpoint::model("gpt-4o-mini"),
            evaluator: RoleEndpoint::model("gpt-4o"),
            embedding: RoleEndpoint::model("text-embedding-3-small"),
        }
    }
}

/// Live clients for every role.
pub struct LiveBackends {
    pub generator: OpenAiClient,
    pub summarizer: OpenAiClient,
    pub meta_reasoner: OpenAiClient,
    pub evaluator: OpenAiClient,
    pub embedder: OpenAiClient,
}

impl BackendsConfig {
    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            initial_backoff: Duration::from_millis(self.backoff_ms),
            max_backoff: Duration::from_millis(self.max_backoff_ms),
        }
    }

    /// Resolves one role's endpoint. `env` looks up environment variables.
    pub fn endpoint(
        &self,
        role: &RoleEndpoint,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Endpoint, ConfigError> {
        let key_var = role.api_key_env.as_deref().unwrap_or(&self.api_key_env);
        let api_key = env(key_var)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ConfigError::MissingCredential(key_var.to_string()))?;
        let base_url = match &role.base_url {
            Some(url) => url.clone(),
            None => env(BASE_URL_ENV).filter(|u| !u.is_empty()).unwrap_or_else(|| self.base_url.clone()),
        };
        Ok(Endpoint {
            base_url,
            api_key,
            model: role.model.clone(),
        })
    }

    pub fn live(&self, env: &dyn Fn(&str) -> Option<String>) -> Result<LiveBackends, ConfigError> {
        let timeout = Duration::from_secs(self.timeout_secs);
        let client = |role: &RoleEndpoint| -> Result<OpenAiClient, ConfigError> {
            Ok(OpenAiClient::new(self.endpoint(role, env)?, self.retry(), timeout))
        };
        Ok(LiveBackends {
            generator: client(&self.generator)?,
            summarizer: client(&self.summarizer)?,
            meta_reasoner: client(&self.meta_reasoner)?,
            evaluator: client(&self.evaluator)?,
            embedder: client(&self.embedding)?.with_embedding_dim(self.embedding_dim),
        })
    }
}

/// Scripted replies used in mock mode for inline and puzzle tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub generator: MockScript,
    pub summarizer: MockScript,
    pub meta_reasoner: MockScript,
    pub evaluator: MockScript,
    pub embedding_dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            generator: MockScript::constant("Let me combine two of the numbers and look at what remains."),
            summarizer: MockScript::constant("Some combinations were tried; none reaches the target yet."),
            meta_reasoner: MockScript::constant(
                "- Action: Continue and provide specific suggestions for the next steps.",
            ),
            evaluator: MockScript::constant(
                r#"{"C_c": 0.5, "C_a": 0.5, "S_p": 0.5, "R_u": 0.0, "R": 0.4, "brief_rationale": "partial progress"}"#,
            ),
            embedding_dim: 1536,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub orchestrator: OrchestratorSection,
    pub bandit: BanditConfig,
    pub catalog: CatalogConfig,
    pub weights: RewardWeights,
    pub backends: BackendsConfig,
    pub mock: MockConfig,
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        config
            .orchestrator()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        Self::parse(&text, &shown)
    }

    pub fn orchestrator(&self) -> OrchestratorConfig {
        let o = &self.orchestrator;
        OrchestratorConfig {
            max_rounds: o.max_rounds.unwrap_or_else(|| o.task_profile.max_rounds()),
            report_window: o.report_window,
            projection_seed: o.projection_seed,
            verify_answers: o.verify_answers,
            evaluator_mode: o.evaluator_mode,
            reward_profile: o.reward_profile,
            evaluator_retries: o.evaluator_retries,
            weights: self.weights,
            training_weights: o.training_weights,
            sampling: o.sampling,
            token_caps: o.token_caps,
            bandit: self.bandit.clone(),
            catalog: self.catalog.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("", "x").unwrap();
        assert_eq!(c.orchestrator(), OrchestratorConfig::default());
    }

    #[test]
    fn sections_feed_the_orchestrator() {
        let c = RunConfig::parse(
            "[orchestrator]\ntask_profile = \"theorem_qa\"\n[bandit]\nc = 0.5\n[weights]\nbeta = 0.6\n",
            "x",
        )
        .unwrap();
        let o = c.orchestrator();
        assert_eq!(o.max_rounds, 100);
        assert_eq!(o.bandit.c, 0.5);
        assert_eq!(o.weights.beta, 0.6);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(matches!(RunConfig::parse("[weights]\nw1 = 0.9\n", "x"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("[bandit]\nfoo = 1\n", "x"), Err(ConfigError::Parse { .. })));
        assert!(RunConfig::parse("[orchestrator]\nbandit = {}\n", "x").is_err());
    }

    #[test]
    fn credentials_and_base_url_come_from_the_environment() {
        let b = BackendsConfig::default();
        let none = |_: &str| None;
        assert!(matches!(b.endpoint(&b.generator, &none), Err(ConfigError::MissingCredential(_))));
        let env = |k: &str| match k {
            API_KEY_ENV => Some("k".to_string()),
            BASE_URL_ENV => Some("http://localhost:9/v1".to_string()),
            _ => None,
        };
        let e = b.endpoint(&b.generator, &env).unwrap();
        assert_eq!((e.base_url.as_str(), e.api_key.as_str()), ("http://localhost:9/v1", "k"));
    }
}
