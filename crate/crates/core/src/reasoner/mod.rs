//! The model-facing surface of the engine: five roles (select, describe,
//! differ, refine, cluster), text embedding and usage accounting.

mod remote;
mod scripted;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{observation_diff, EnvError, Observation, ProgressDelta};
use crate::grounding::{segment, UIElement};
use crate::skill::{Embedding, Fingerprint, IdGen, Skill, SkillError, SkillId, Trajectory, EMBED_DIM};

pub use remote::{RemoteConfig, RemoteModel};
pub use scripted::ScriptedOracle;

/// Most candidates `select` ever returns.
pub const SELECT_CAP: usize = 8;
/// Cosine similarity at or above which two same-shaped skills are equivalent.
pub const CLUSTER_COSINE: f64 = 0.9;
pub const NO_EFFECT: &str = "no observable effect";

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("skill {0} is not in the library")]
    UnknownSkill(SkillId),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Skill(#[from] SkillError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Select,
    Describe,
    Differ,
    Refine,
    Cluster,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Select, Role::Describe, Role::Differ, Role::Refine, Role::Cluster];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Select => "select",
            Role::Describe => "describe",
            Role::Differ => "differ",
            Role::Refine => "refine",
            Role::Cluster => "cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleTemplate {
    pub role: Role,
    pub template_id: &'static str,
    pub text: &'static str,
}

impl RoleTemplate {
    pub fn for_role(role: Role) -> &'static RoleTemplate {
        TEMPLATES.iter().find(|t| t.role == role).expect("every role has a template")
    }

    pub fn render(&self, slots: &Slots) -> String {
        self.text
            .replace("{observation_digest}", &slots.observation_digest)
            .replace("{skill_summaries}", &slots.skill_summaries)
            .replace("{trajectory_digest}", &slots.trajectory_digest)
    }
}

pub const TEMPLATES: [RoleTemplate; 5] = [
    RoleTemplate {
        role: Role::Select,
        template_id: "select-v1",
        text: "You see the current screen:\n{observation_digest}\n\
               Known skills:\n{skill_summaries}\n\
               Reply with a JSON array of the ids of skills that could apply to this screen. \
               Reply [] if none apply.",
    },
    RoleTemplate {
        role: Role::Describe,
        template_id: "describe-v1",
        text: "Screen before acting:\n{observation_digest}\n\
               Skill that was executed:\n{skill_summaries}\n\
               What happened, step by step:\n{trajectory_digest}\n\
               Describe in one short sentence what this skill does.",
    },
    RoleTemplate {
        role: Role::Differ,
        template_id: "differ-v1",
        text: "Skill:\n{skill_summaries}\n\
               Screen before and after:\n{observation_digest}\n{trajectory_digest}\n\
               Rate from 0 to 1 how much meaningful progress the change shows. \
               Reply with a single number.",
    },
    RoleTemplate {
        role: Role::Refine,
        template_id: "refine-v1",
        text: "Screen before acting:\n{observation_digest}\n\
               Skill:\n{skill_summaries}\n\
               Outcome:\n{trajectory_digest}\n\
               Propose a shorter or cleaner action list that keeps the useful effect, \
               as `;`-separated action tokens, or reply NO_IMPROVEMENT.",
    },
    RoleTemplate {
        role: Role::Cluster,
        template_id: "cluster-v1",
        text: "Skills:\n{skill_summaries}\n\
               Group skills that do the same thing. Reply with a JSON array of arrays of ids; \
               leave out skills that have no equivalent.",
    },
];

/// Values substituted into a role template.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Slots {
    pub observation_digest: String,
    pub skill_summaries: String,
    pub trajectory_digest: String,
}

/// What the reasoner may know about a library entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillSummary {
    pub id: SkillId,
    pub descriptor: String,
    pub fingerprint: Fingerprint,
    pub origin_hash: u64,
    pub actions: String,
    pub kind_signature: String,
    pub embedding: Embedding,
    pub mean_semantics: Option<f64>,
}

impl SkillSummary {
    pub fn of(skill: &Skill, origin_hash: u64) -> Self {
        SkillSummary {
            id: skill.id.clone(),
            descriptor: skill.descriptor.clone(),
            fingerprint: skill.fingerprint(),
            origin_hash,
            actions: skill.action_string(),
            kind_signature: skill.kind_signature(),
            embedding: skill.embedding.clone(),
            mean_semantics: skill.stats.mean_semantics(),
        }
    }

    fn line(&self) -> String {
        format!("{} [{}] {}", self.id, self.actions, self.descriptor)
    }
}

pub fn summaries_text(summaries: &[SkillSummary]) -> String {
    summaries.iter().map(SkillSummary::line).collect::<Vec<_>>().join("\n")
}

/// Textual view of an observation: the cell grid and its segmented elements.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationDigest {
    pub state_hash: u64,
    pub grid: String,
    pub elements: Vec<UIElement>,
}

impl ObservationDigest {
    pub fn of(obs: &Observation) -> Self {
        ObservationDigest {
            state_hash: obs.state_hash(),
            grid: obs.to_text(),
            elements: segment(obs),
        }
    }

    pub fn element_tokens(&self) -> Vec<String> {
        self.elements.iter().map(UIElement::token).collect()
    }

    /// Role words of every visible element.
    pub fn roles(&self) -> BTreeSet<String> {
        self.element_tokens().iter().filter_map(|t| handle_role(t)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("hash {:016x}\n{}elements:", self.state_hash, self.grid);
        for e in &self.elements {
            out.push_str(&format!("\n  {} bbox={:?} glyphs={}", e.token(), e.bbox, e.signature));
        }
        out
    }
}

/// Role word of an element handle such as `attack9x11`.
pub(crate) fn handle_role(token: &str) -> Option<String> {
    let split = token.find(|c: char| c.is_ascii_digit())?;
    let (word, rest) = token.split_at(split);
    let (a, b) = rest.split_once('x')?;
    let numeric = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    (!word.is_empty() && word.bytes().all(|c| c.is_ascii_lowercase()) && numeric(a) && numeric(b))
        .then(|| word.to_string())
}

/// Roles of the elements a descriptor says the skill acts on (its first
/// clause, before any `;`).
pub fn salient_roles(descriptor: &str) -> BTreeSet<String> {
    let clause = descriptor.split(';').next().unwrap_or("");
    tokenize(clause).filter_map(|t| handle_role(&t)).collect()
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Bag-of-tokens hash embedding, L2 normalized; empty text maps to zero.
pub fn hash_embed(text: &str) -> Embedding {
    let mut v = vec![0.0; EMBED_DIM];
    for tok in tokenize(text) {
        v[(fnv1a(tok.as_bytes()) % EMBED_DIM as u64) as usize] += 1.0;
    }
    Embedding::normalized(v)
}

/// Scripted semantic score: progress weighs four times raw visual change.
pub fn differ_rubric(
    before: &Observation,
    after: &Observation,
    progress: ProgressDelta,
) -> Result<f64, EnvError> {
    let cells = observation_diff(before, after)?;
    let progress_norm = (progress.progression as f64 + progress.score as f64 / 20.0).clamp(0.0, 1.0);
    Ok((4.0 * progress_norm + cells).min(1.0))
}

pub enum RefineOutcome {
    Refined(Skill),
    NoImprovement,
}

/// Prices in currency units per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceTable {
    pub price_in: f64,
    pub price_out: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReasonerUsage {
    pub calls: BTreeMap<Role, u64>,
    pub failed_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub estimated_cost: f64,
}

impl ReasonerUsage {
    pub fn total_calls(&self) -> u64 {
        self.calls.values().sum()
    }
}

pub fn estimated_cost(tokens_in: u64, tokens_out: u64, prices: PriceTable) -> f64 {
    (tokens_in as f64 * prices.price_in + tokens_out as f64 * prices.price_out) / 1e6
}

/// Thread-safe running totals.
#[derive(Debug, Default)]
pub struct UsageMeter {
    prices: PriceTable,
    inner: Mutex<ReasonerUsage>,
}

impl UsageMeter {
    pub fn new(prices: PriceTable) -> Self {
        UsageMeter {
            prices,
            inner: Mutex::new(ReasonerUsage::default()),
        }
    }

    pub fn record(&self, role: Role, tokens_in: u64, tokens_out: u64, failed: bool) {
        let mut u = self.inner.lock().expect("usage lock");
        *u.calls.entry(role).or_default() += 1;
        if failed {
            u.failed_calls += 1;
        }
        u.tokens_in += tokens_in;
        u.tokens_out += tokens_out;
        u.estimated_cost = estimated_cost(u.tokens_in, u.tokens_out, self.prices);
    }

    pub fn snapshot(&self) -> ReasonerUsage {
        self.inner.lock().expect("usage lock").clone()
    }
}

/// The model behind the engine. Implementations must be deterministic for
/// fixed inputs when scripted, and usable from several agent loops at once.
pub trait Reasoner: Send + Sync {
    fn select(
        &self,
        digest: &ObservationDigest,
        library: &[SkillSummary],
    ) -> Result<Vec<SkillId>, ReasonerError>;

    fn describe(
        &self,
        obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
    ) -> Result<String, ReasonerError>;

    fn differ(
        &self,
        skill: &Skill,
        before: &Observation,
        after: &Observation,
        progress: ProgressDelta,
    ) -> Result<f64, ReasonerError>;

    fn refine(
        &self,
        obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
        library: &[SkillSummary],
        ids: &IdGen,
    ) -> Result<RefineOutcome, ReasonerError>;

    fn cluster(&self, summaries: &[SkillSummary]) -> Result<Vec<Vec<SkillId>>, ReasonerError>;

    fn embed(&self, text: &str) -> Embedding {
        hash_embed(text)
    }

    fn usage(&self) -> ReasonerUsage;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReasonerKind {
    #[default]
    Scripted,
    Remote,
}

impl std::str::FromStr for ReasonerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(ReasonerKind::Scripted),
            "remote" => Ok(ReasonerKind::Remote),
            other => Err(format!("unknown reasoner `{other}`")),
        }
    }
}
