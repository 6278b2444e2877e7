//! Skill, action and reward value types.
//!
//! A skill is a literal, ordered sequence of atomic input events. Everything
//! here is a plain value; execution statistics are only mutated through the
//! library store.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{Observation, ProgressDelta};

/// Number of components in every skill embedding.
pub const EMBED_DIM: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error("point ({col},{row}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        col: u32,
        row: u32,
        width: u16,
        height: u16,
    },
    #[error("wait tick count must be at least 1")]
    ZeroWait,
    #[error("a skill needs at least one action")]
    EmptySkill,
    #[error("cannot parse action token `{0}`")]
    Parse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("reward term `{term}` = {value} is outside [0,1]")]
    RewardOutOfRange { term: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub col: u16,
    pub row: u16,
}

impl GridPoint {
    pub const fn new(col: u16, row: u16) -> Self {
        Self { col, row }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridBounds {
    pub width: u16,
    pub height: u16,
}

impl GridBounds {
    pub const fn new(width: u16, height: u16) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, p: GridPoint) -> bool {
        p.col < self.width && p.row < self.height
    }

    pub fn cell_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn check(&self, p: GridPoint) -> Result<(), SkillError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(SkillError::OutOfBounds {
                col: p.col as u32,
                row: p.row as u32,
                width: self.width,
                height: self.height,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Enter,
    Escape,
    Space,
    Up,
    Down,
    Left,
    Right,
}

impl Key {
    pub const ALL: [Key; 7] = [
        Key::Enter,
        Key::Escape,
        Key::Space,
        Key::Up,
        Key::Down,
        Key::Left,
        Key::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Key::Enter => "enter",
            Key::Escape => "escape",
            Key::Space => "space",
            Key::Up => "up",
            Key::Down => "down",
            Key::Left => "left",
            Key::Right => "right",
        }
    }
}

impl FromStr for Key {
    type Err = SkillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Key::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| SkillError::Parse(format!("key:{s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Click,
    Drag,
    Key,
    Wait,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::Drag => "drag",
            ActionKind::Key => "key",
            ActionKind::Wait => "wait",
        }
    }
}

/// One low-level input event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomicAction {
    Click(GridPoint),
    Drag { from: GridPoint, to: GridPoint },
    Key(Key),
    Wait(u32),
}

impl AtomicAction {
    pub fn click(col: u16, row: u16) -> Self {
        AtomicAction::Click(GridPoint::new(col, row))
    }

    pub fn drag(from: (u16, u16), to: (u16, u16)) -> Self {
        AtomicAction::Drag {
            from: GridPoint::new(from.0, from.1),
            to: GridPoint::new(to.0, to.1),
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            AtomicAction::Click(_) => ActionKind::Click,
            AtomicAction::Drag { .. } => ActionKind::Drag,
            AtomicAction::Key(_) => ActionKind::Key,
            AtomicAction::Wait(_) => ActionKind::Wait,
        }
    }

    /// Checks the construction invariants against a grid.
    pub fn validate(&self, bounds: GridBounds) -> Result<(), SkillError> {
        match *self {
            AtomicAction::Click(p) => bounds.check(p),
            AtomicAction::Drag { from, to } => {
                bounds.check(from)?;
                bounds.check(to)
            }
            AtomicAction::Key(_) => Ok(()),
            AtomicAction::Wait(0) => Err(SkillError::ZeroWait),
            AtomicAction::Wait(_) => Ok(()),
        }
    }
}

impl fmt::Display for AtomicAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicAction::Click(p) => write!(f, "click:{},{}", p.col, p.row),
            AtomicAction::Drag { from, to } => {
                write!(f, "drag:{},{}->{},{}", from.col, from.row, to.col, to.row)
            }
            AtomicAction::Key(k) => write!(f, "key:{}", k.name()),
            AtomicAction::Wait(t) => write!(f, "wait:{t}"),
        }
    }
}

fn parse_point(s: &str, token: &str) -> Result<GridPoint, SkillError> {
    let bad = || SkillError::Parse(token.to_string());
    let (c, r) = s.split_once(',').ok_or_else(bad)?;
    Ok(GridPoint::new(
        c.trim().parse().map_err(|_| bad())?,
        r.trim().parse().map_err(|_| bad())?,
    ))
}

impl FromStr for AtomicAction {
    type Err = SkillError;

    fn from_str(token: &str) -> Result<Self, Self::Err> {
        let bad = || SkillError::Parse(token.to_string());
        let (kind, rest) = token.trim().split_once(':').ok_or_else(bad)?;
        match kind {
            "click" => Ok(AtomicAction::Click(parse_point(rest, token)?)),
            "drag" => {
                let (a, b) = rest.split_once("->").ok_or_else(bad)?;
                Ok(AtomicAction::Drag {
                    from: parse_point(a, token)?,
                    to: parse_point(b, token)?,
                })
            }
            "key" => Ok(AtomicAction::Key(rest.parse()?)),
            "wait" => {
                let ticks: u32 = rest.parse().map_err(|_| bad())?;
                if ticks == 0 {
                    return Err(SkillError::ZeroWait);
                }
                Ok(AtomicAction::Wait(ticks))
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for AtomicAction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AtomicAction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `;`-joined canonical action tokens.
pub fn actions_to_string(actions: &[AtomicAction]) -> String {
    actions
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_actions(s: &str) -> Result<Vec<AtomicAction>, SkillError> {
    if s.trim().is_empty() {
        return Err(SkillError::EmptySkill);
    }
    s.split(';').map(str::parse).collect()
}

/// The action-kind signature used for clustering, e.g. `click;drag`.
pub fn kind_signature(actions: &[AtomicAction]) -> String {
    actions
        .iter()
        .map(|a| a.kind().name())
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillId(pub String);

impl SkillId {
    pub fn new(s: impl Into<String>) -> Self {
        SkillId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SkillId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hands out `<prefix>-NNNNNN` ids. Zero padding keeps lexicographic and
/// numeric order aligned.
#[derive(Debug)]
pub struct IdGen {
    prefix: String,
    next: AtomicU64,
}

impl IdGen {
    pub fn new(prefix: impl Into<String>) -> Self {
        Self::starting_at(prefix, 1)
    }

    pub fn starting_at(prefix: impl Into<String>, first: u64) -> Self {
        Self {
            prefix: prefix.into(),
            next: AtomicU64::new(first),
        }
    }

    pub fn fresh(&self) -> SkillId {
        let n = self.next.fetch_add(1, Ordering::Relaxed);
        SkillId(format!("{}-{:06}", self.prefix, n))
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Moves the counter past every id in `existing` that carries this prefix.
    pub fn skip_past<'a>(&self, existing: impl IntoIterator<Item = &'a SkillId>) {
        let head = format!("{}-", self.prefix);
        let max = existing
            .into_iter()
            .filter_map(|id| id.0.strip_prefix(&head)?.parse::<u64>().ok())
            .max();
        if let Some(m) = max {
            self.next.fetch_max(m + 1, Ordering::Relaxed);
        }
    }
}

/// SHA-256 over the canonical action string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint([u8; 32]);

impl Fingerprint {
    pub fn of(actions: &[AtomicAction]) -> Self {
        let digest = Sha256::digest(actions_to_string(actions).as_bytes());
        Fingerprint(digest.into())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || !s.is_ascii() {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(Fingerprint(out))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Fixed-dimension text embedding; either unit length or all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn zero() -> Self {
        Embedding(vec![0.0; EMBED_DIM])
    }

    /// Wraps raw components, L2-normalizing them. All-zero input stays zero.
    pub fn normalized(mut v: Vec<f64>) -> Self {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        Embedding(v)
    }

    /// Wraps components as-is (used when loading stored vectors).
    pub fn from_raw(v: Vec<f64>) -> Self {
        Embedding(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    /// Cosine similarity; 0 whenever either side is the zero vector.
    pub fn cosine(&self, other: &Embedding) -> Result<f64, SkillError> {
        if self.dim() != other.dim() {
            return Err(SkillError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        let na = self.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = other.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Ok(0.0);
        }
        Ok(dot / (na * nb))
    }
}

impl Default for Embedding {
    fn default() -> Self {
        Embedding::zero()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecStats {
    pub executions: u64,
    pub responsive_executions: u64,
    pub semantics_sum: f64,
    pub semantics_count: u64,
    pub last_total_reward: f64,
}

impl ExecStats {
    pub fn record(&mut self, responsive: bool, semantics: f64, total_reward: f64) {
        self.executions += 1;
        if responsive {
            self.responsive_executions += 1;
        }
        self.semantics_sum += semantics;
        self.semantics_count += 1;
        self.last_total_reward = total_reward;
    }

    /// Adds another set of counters. `last_total_reward` is left alone.
    pub fn absorb(&mut self, other: &ExecStats) {
        self.executions += other.executions;
        self.responsive_executions += other.responsive_executions;
        self.semantics_sum += other.semantics_sum;
        self.semantics_count += other.semantics_count;
    }

    pub fn mean_semantics(&self) -> Option<f64> {
        (self.semantics_count > 0).then(|| self.semantics_sum / self.semantics_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skill {
    pub id: SkillId,
    actions: Vec<AtomicAction>,
    pub descriptor: String,
    pub embedding: Embedding,
    pub parent_id: Option<SkillId>,
    fingerprint: Fingerprint,
    pub stats: ExecStats,
}

impl Skill {
    /// Builds a skill with an empty descriptor, zero embedding and zeroed stats.
    pub fn new(
        id: SkillId,
        actions: Vec<AtomicAction>,
        parent_id: Option<SkillId>,
    ) -> Result<Self, SkillError> {
        if actions.is_empty() {
            return Err(SkillError::EmptySkill);
        }
        let fingerprint = Fingerprint::of(&actions);
        Ok(Skill {
            id,
            actions,
            descriptor: String::new(),
            embedding: Embedding::zero(),
            parent_id,
            fingerprint,
            stats: ExecStats::default(),
        })
    }

    pub fn actions(&self) -> &[AtomicAction] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn action_string(&self) -> String {
        actions_to_string(&self.actions)
    }

    pub fn kind_signature(&self) -> String {
        kind_signature(&self.actions)
    }
}

/// Appends one action to `parent` (or starts a new skill when `parent` is
/// `None`). The result has a fresh id, no descriptor and zeroed stats.
pub fn augment(
    parent: Option<&Skill>,
    action: AtomicAction,
    bounds: GridBounds,
    ids: &IdGen,
) -> Result<Skill, SkillError> {
    action.validate(bounds)?;
    let mut actions = parent.map(|p| p.actions.clone()).unwrap_or_default();
    actions.push(action);
    Skill::new(ids.fresh(), actions, parent.map(|p| p.id.clone()))
}

pub fn efficiency_reward(skill: &Skill) -> f64 {
    1.0 / skill.len() as f64
}

/// `1 - max cosine` against the library, clamped to [0,1]; 1 for an empty library.
pub fn diversity_reward(skill: &Skill, library: &[Embedding]) -> Result<f64, SkillError> {
    let mut max_sim = f64::NEG_INFINITY;
    for other in library {
        max_sim = max_sim.max(skill.embedding.cosine(other)?);
    }
    if library.is_empty() {
        return Ok(1.0);
    }
    Ok((1.0 - max_sim).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub diversity: f64,
    pub efficiency: f64,
    pub semantics: f64,
    pub total: f64,
}

/// Unweighted sum of the three implicit reward terms.
pub fn combine_rewards(
    diversity: f64,
    efficiency: f64,
    semantics: f64,
) -> Result<RewardBreakdown, SkillError> {
    for (term, value) in [
        ("diversity", diversity),
        ("efficiency", efficiency),
        ("semantics", semantics),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(SkillError::RewardOutOfRange { term, value });
        }
    }
    Ok(RewardBreakdown {
        diversity,
        efficiency,
        semantics,
        total: diversity + efficiency + semantics,
    })
}

/// Observations recorded while executing a skill.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub before: Observation,
    pub after_states: Vec<Observation>,
    pub per_step_diffs: Vec<f64>,
    /// Change in the environment's progress counters over the whole execution.
    pub progress_delta: ProgressDelta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.after_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.after_states.is_empty()
    }

    pub fn last(&self) -> &Observation {
        self.after_states.last().unwrap_or(&self.before)
    }

    /// True when any step changed the observation by more than `epsilon`.
    pub fn responsive(&self, epsilon: f64) -> bool {
        self.per_step_diffs.iter().any(|d| *d > epsilon)
    }

    /// State immediately before step `i`.
    pub fn state_before_step(&self, i: usize) -> &Observation {
        if i == 0 {
            &self.before
        } else {
            &self.after_states[i - 1]
        }
    }

    /// Appends `other`, which must start where this trajectory ends.
    pub fn concat(mut self, other: Trajectory) -> Trajectory {
        self.after_states.extend(other.after_states);
        self.per_step_diffs.extend(other.per_step_diffs);
        self.progress_delta = self.progress_delta + other.progress_delta;
        self
    }

    /// The first `n` steps; the progress delta is kept only when nothing is cut.
    pub fn truncated(&self, n: usize) -> Trajectory {
        let n = n.min(self.len());
        Trajectory {
            before: self.before.clone(),
            after_states: self.after_states[..n].to_vec(),
            per_step_diffs: self.per_step_diffs[..n].to_vec(),
            progress_delta: if n == self.len() {
                self.progress_delta
            } else {
                ProgressDelta::default()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GRID: GridBounds = GridBounds::new(24, 16);

    #[test]
    fn augment_from_empty() {
        let ids = IdGen::new("t");
        let s = augment(None, AtomicAction::click(5, 3), GRID, &ids).unwrap();
        assert_eq!(s.actions(), &[AtomicAction::click(5, 3)]);
        assert_eq!(s.len(), 1);
        assert!(s.parent_id.is_none());
        assert!(s.descriptor.is_empty());
        assert_eq!(s.stats, ExecStats::default());
    }

    #[test]
    fn augment_appends_and_links_parent() {
        let ids = IdGen::new("t");
        let s = augment(None, AtomicAction::click(5, 3), GRID, &ids).unwrap();
        let d = AtomicAction::drag((2, 2), (9, 4));
        let s2 = augment(Some(&s), d, GRID, &ids).unwrap();
        assert_eq!(s2.actions(), &[AtomicAction::click(5, 3), d]);
        assert_eq!(s2.parent_id.as_ref(), Some(&s.id));
        assert_ne!(s2.id, s.id);
    }

    #[test]
    fn augment_rejects_out_of_bounds() {
        let ids = IdGen::new("t");
        let s = augment(None, AtomicAction::click(5, 3), GRID, &ids).unwrap();
        let err = augment(Some(&s), AtomicAction::click(999, 999), GRID, &ids).unwrap_err();
        assert_eq!(
            err,
            SkillError::OutOfBounds {
                col: 999,
                row: 999,
                width: 24,
                height: 16
            }
        );
        assert!(err.to_string().contains("(999,999)"));
    }

    #[test]
    fn wait_must_be_positive() {
        assert_eq!(AtomicAction::Wait(0).validate(GRID), Err(SkillError::ZeroWait));
        assert!("wait:0".parse::<AtomicAction>().is_err());
        assert!(AtomicAction::Wait(3).validate(GRID).is_ok());
    }

    #[test]
    fn canonical_tokens() {
        let acts = vec![
            AtomicAction::click(5, 3),
            AtomicAction::drag((2, 2), (9, 4)),
            AtomicAction::Key(Key::Escape),
            AtomicAction::Wait(2),
        ];
        let s = actions_to_string(&acts);
        assert_eq!(s, "click:5,3;drag:2,2->9,4;key:escape;wait:2");
        assert_eq!(parse_actions(&s).unwrap(), acts);
        assert_eq!(kind_signature(&acts), "click;drag;key;wait");
        assert!(parse_actions("").is_err());
        assert!(parse_actions("tap:1,2").is_err());
    }

    #[test]
    fn fingerprint_ignores_descriptor() {
        let a = Skill::new(SkillId::new("a"), vec![AtomicAction::click(1, 1)], None).unwrap();
        let mut b = Skill::new(SkillId::new("b"), vec![AtomicAction::click(1, 1)], None).unwrap();
        b.descriptor = "something else".into();
        b.stats.executions = 4;
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = Skill::new(SkillId::new("c"), vec![AtomicAction::click(1, 2)], None).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(Fingerprint::from_hex(&a.fingerprint().to_hex()), Some(a.fingerprint()));
    }

    #[test]
    fn efficiency_examples() {
        let mk = |k: usize| {
            Skill::new(SkillId::new("x"), vec![AtomicAction::Wait(1); k], None).unwrap()
        };
        assert_eq!(efficiency_reward(&mk(1)), 1.0);
        assert_eq!(efficiency_reward(&mk(4)), 0.25);
        assert_eq!(efficiency_reward(&mk(10)), 0.1);
        for k in 1..100 {
            assert!(efficiency_reward(&mk(k + 1)) < efficiency_reward(&mk(k)));
        }
    }

    #[test]
    fn diversity_edges() {
        let mut s = Skill::new(SkillId::new("x"), vec![AtomicAction::Wait(1)], None).unwrap();
        let mut v = vec![0.0; EMBED_DIM];
        v[3] = 1.0;
        s.embedding = Embedding::normalized(v.clone());
        assert_eq!(diversity_reward(&s, &[]).unwrap(), 1.0);
        assert_eq!(diversity_reward(&s, &[Embedding::normalized(v)]).unwrap(), 0.0);
        assert_eq!(diversity_reward(&s, &[Embedding::zero()]).unwrap(), 1.0);
        let short = Embedding::from_raw(vec![1.0; 3]);
        assert!(matches!(
            diversity_reward(&s, &[short]),
            Err(SkillError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine_rewards(1.0, 1.0, 1.0).unwrap().total, 3.0);
        assert_eq!(combine_rewards(0.0, 0.0, 0.0).unwrap().total, 0.0);
        let r = combine_rewards(0.5, 0.25, 0.8).unwrap();
        assert_eq!(r.total, 0.5 + 0.25 + 0.8);
        assert!((r.total - 1.55).abs() < 1e-15);
        let err = combine_rewards(0.5, 1.5, 0.0).unwrap_err();
        assert!(err.to_string().contains("efficiency"));
    }

    #[test]
    fn id_gen_skips_existing() {
        let ids = IdGen::new("a0");
        ids.skip_past(&[SkillId::new("a0-000041"), SkillId::new("b-000999")]);
        assert_eq!(ids.fresh().as_str(), "a0-000042");
    }

    fn arb_action() -> impl Strategy<Value = AtomicAction> {
        prop_oneof![
            (0u16..24, 0u16..16).prop_map(|(c, r)| AtomicAction::click(c, r)),
            (0u16..24, 0u16..16, 0u16..24, 0u16..16)
                .prop_map(|(a, b, c, d)| AtomicAction::drag((a, b), (c, d))),
            (0usize..7).prop_map(|i| AtomicAction::Key(Key::ALL[i])),
            (1u32..5).prop_map(AtomicAction::Wait),
        ]
    }

    proptest! {
        #[test]
        fn augment_preserves_prefix(acts in prop::collection::vec(arb_action(), 1..6), extra in arb_action()) {
            let ids = IdGen::new("p");
            let base = Skill::new(ids.fresh(), acts.clone(), None).unwrap();
            let next = augment(Some(&base), extra, GRID, &ids).unwrap();
            prop_assert_eq!(next.len(), base.len() + 1);
            prop_assert_eq!(&next.actions()[..base.len()], base.actions());
        }

        #[test]
        fn action_string_round_trips(acts in prop::collection::vec(arb_action(), 1..8)) {
            let s = actions_to_string(&acts);
            prop_assert_eq!(parse_actions(&s).unwrap(), acts);
        }

        #[test]
        fn combine_is_exact_sum(d in 0.0f64..=1.0, e in 0.0f64..=1.0, s in 0.0f64..=1.0) {
            let r = combine_rewards(d, e, s).unwrap();
            prop_assert_eq!(r.total, d + e + s);
        }

        #[test]
        fn diversity_in_range_and_monotone(
            base in prop::collection::vec(-1.0f64..1.0, EMBED_DIM),
            lib in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, EMBED_DIM), 0..5),
            extra in prop::collection::vec(-1.0f64..1.0, EMBED_DIM),
        ) {
            let mut s = Skill::new(SkillId::new("x"), vec![AtomicAction::Wait(1)], None).unwrap();
            s.embedding = Embedding::normalized(base);
            let mut lib: Vec<Embedding> = lib.into_iter().map(Embedding::normalized).collect();
            let before = diversity_reward(&s, &lib).unwrap();
            prop_assert!((0.0..=1.0).contains(&before));
            lib.push(Embedding::normalized(extra));
            let after = diversity_reward(&s, &lib).unwrap();
            prop_assert!(after <= before);
        }
    }

    #[test]
    fn fingerprint_equivalence_on_random_skills() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut seen: std::collections::HashMap<Fingerprint, Vec<AtomicAction>> =
            Default::default();
        for _ in 0..10_000 {
            let k = rng.random_range(1..4);
            let acts: Vec<AtomicAction> = (0..k)
                .map(|_| match rng.random_range(0..3) {
                    0 => AtomicAction::click(rng.random_range(0..6), rng.random_range(0..4)),
                    1 => AtomicAction::Key(Key::ALL[rng.random_range(0..7)]),
                    _ => AtomicAction::Wait(rng.random_range(1..3)),
                })
                .collect();
            let fp = Fingerprint::of(&acts);
            assert_eq!(fp, Fingerprint::of(&acts.clone()));
            if let Some(prev) = seen.get(&fp) {
                assert_eq!(prev, &acts);
            } else {
                seen.insert(fp, acts);
            }
        }
        // Distinct action lists must have produced distinct fingerprints.
        let distinct: std::collections::HashSet<_> = seen.values().collect();
        assert_eq!(distinct.len(), seen.len());
    }
}
