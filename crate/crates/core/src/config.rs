//! Run configuration file. Flat `key = value` TOML with dotted section keys:
//!
//! ```toml
//! engine.k_max = 5
//! mcts.budget = 256
//! reasoner.timeout_ms = 10000
//! grounding.budget = 24
//! ```

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::engine::EngineConfig;
use crate::reasoner::{PriceTable, RemoteConfig};

pub const REMOTE_URL_VAR: &str = "AGENT_REMOTE_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("remote reasoner needs an endpoint: set reasoner.url or {REMOTE_URL_VAR}")]
    NoRemoteUrl,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub k_max: Option<usize>,
    pub change_epsilon: Option<f64>,
    pub prune_min_evals: Option<u64>,
    pub prune_semantics_threshold: Option<f64>,
    pub refine_candidate_threshold: Option<usize>,
    pub candidate_cap: Option<usize>,
    pub steps_per_round: Option<u32>,
    pub rounds: Option<u32>,
    pub visual_filter_on: Option<bool>,
    pub mcts_on: Option<bool>,
    pub description_on: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsSection {
    pub budget: Option<u32>,
    pub depth: Option<u32>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingSection {
    pub budget: Option<usize>,
    pub seed_offset: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerSection {
    pub url: Option<String>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub price_in: Option<f64>,
    pub price_out: Option<f64>,
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub engine: EngineSection,
    pub mcts: MctsSection,
    pub grounding: GroundingSection,
    pub reasoner: ReasonerSection,
}

impl FileConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::parse(&text, &shown)
    }

    /// Overwrites the fields this file sets.
    pub fn apply(&self, cfg: &mut EngineConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        let e = &self.engine;
        set(&mut cfg.k_max, &e.k_max);
        set(&mut cfg.change_epsilon, &e.change_epsilon);
        set(&mut cfg.prune_min_evals, &e.prune_min_evals);
        set(&mut cfg.prune_semantics_threshold, &e.prune_semantics_threshold);
        set(&mut cfg.refine_candidate_threshold, &e.refine_candidate_threshold);
        set(&mut cfg.candidate_cap, &e.candidate_cap);
        set(&mut cfg.steps_per_round, &e.steps_per_round);
        set(&mut cfg.rounds, &e.rounds);
        set(&mut cfg.visual_filter_on, &e.visual_filter_on);
        set(&mut cfg.mcts_on, &e.mcts_on);
        set(&mut cfg.description_on, &e.description_on);
        set(&mut cfg.mcts_budget, &self.mcts.budget);
        set(&mut cfg.mcts_depth, &self.mcts.depth);
        set(&mut cfg.exploration_c, &self.mcts.c);
        set(&mut cfg.probe_budget, &self.grounding.budget);
        set(&mut cfg.probe_seed_offset, &self.grounding.seed_offset);
    }

    /// Remote reasoner settings; `env_url` (from [`REMOTE_URL_VAR`]) wins
    /// over the file's `reasoner.url`.
    pub fn remote(&self, env_url: Option<String>) -> Result<RemoteConfig, ConfigError> {
        let r = &self.reasoner;
        let url = env_url
            .filter(|u| !u.is_empty())
            .or_else(|| r.url.clone())
            .ok_or(ConfigError::NoRemoteUrl)?;
        let mut cfg = RemoteConfig::new(url);
        if let Some(v) = r.timeout_ms {
            cfg.timeout_ms = v;
        }
        if let Some(v) = r.retries {
            cfg.retries = v;
        }
        if let Some(v) = r.max_tokens {
            cfg.max_tokens = v;
        }
        cfg.prices = PriceTable {
            price_in: r.price_in.unwrap_or(0.0),
            price_out: r.price_out.unwrap_or(0.0),
        };
        Ok(cfg)
    }
}

pub fn remote_url_from_env() -> Option<String> {
    std::env::var(REMOTE_URL_VAR).ok()
}
