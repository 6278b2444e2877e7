//! Deterministic raster micro-games.
//!
//! Agents only ever see [`Observation`]s (a grid of glyph/color cells) and can
//! only act through [`AtomicAction`]s. Every environment is seedable and can
//! be snapshotted and restored so that search can simulate rollouts.

mod bandit;
mod buttonworld;
mod microspire;
pub mod palette;
pub mod render;

use std::any::Any;
use std::fmt;
use std::ops::Add;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skill::{AtomicAction, GridBounds};

pub use bandit::{Bandit, BANDIT_ARM_PROBS};
pub use buttonworld::{correct_buttons, ButtonWorld, BUTTONWORLD_LEVELS};
pub use microspire::{layout as spire_layout, MicroSpire};

/// Atomic actions an episode may apply before it ends on the step limit.
pub const DEFAULT_STEP_LIMIT: u64 = 5_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("environment is terminal ({0})")]
    Terminal(TerminalReason),
    #[error("snapshot belongs to `{got}`, cannot restore into `{expected}`")]
    SnapshotMismatch { expected: EnvId, got: EnvId },
    #[error("observation sizes differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch { a_w: u16, a_h: u16, b_w: u16, b_h: u16 },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    MicroSpire,
    ButtonWorld,
    Bandit,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::MicroSpire => "microspire",
            EnvId::ButtonWorld => "buttonworld",
            EnvId::Bandit => "bandit",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "microspire" => Ok(EnvId::MicroSpire),
            "buttonworld" => Ok(EnvId::ButtonWorld),
            "bandit" => Ok(EnvId::Bandit),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }
}

/// One raster cell. Glyph 0 and color 0 are background, and always together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Cell {
    pub glyph: u16,
    pub color: u16,
}

impl Cell {
    pub const BACKGROUND: Cell = Cell { glyph: 0, color: 0 };

    pub const fn new(glyph: u16, color: u16) -> Self {
        Cell { glyph, color }
    }

    pub fn is_background(&self) -> bool {
        self.color == 0
    }

    fn well_formed(&self) -> bool {
        (self.glyph == 0) == (self.color == 0)
    }
}

/// A visual-only view of the environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    width: u16,
    height: u16,
    cells: Vec<Cell>,
    state_hash: u64,
}

impl Observation {
    pub fn new(width: u16, height: u16, cells: Vec<Cell>) -> Result<Self, EnvError> {
        if cells.len() != width as usize * height as usize {
            return Err(EnvError::InvalidObservation(format!(
                "{} cells for a {width}x{height} grid",
                cells.len()
            )));
        }
        if let Some(i) = cells.iter().position(|c| !c.well_formed()) {
            return Err(EnvError::InvalidObservation(format!(
                "cell {i} mixes background and foreground codes"
            )));
        }
        let state_hash = hash_cells(width, height, &cells);
        Ok(Observation {
            width,
            height,
            cells,
            state_hash,
        })
    }

    pub fn blank(width: u16, height: u16) -> Self {
        Self::new(width, height, vec![Cell::BACKGROUND; width as usize * height as usize])
            .expect("blank grid is well formed")
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn bounds(&self) -> GridBounds {
        GridBounds::new(self.width, self.height)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, col: u16, row: u16) -> Cell {
        self.cells[row as usize * self.width as usize + col as usize]
    }

    pub fn state_hash(&self) -> u64 {
        self.state_hash
    }

    /// One text row per grid row; each cell is `glyph.color` in hex, `..` for
    /// background.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() * 6);
        for row in 0..self.height {
            for col in 0..self.width {
                let c = self.cell(col, row);
                if col > 0 {
                    out.push(' ');
                }
                if c.is_background() {
                    out.push_str("..");
                } else {
                    out.push_str(&format!("{:x}.{:x}", c.glyph, c.color));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// FNV-1a over dimensions and cell codes.
fn hash_cells(width: u16, height: u16, cells: &[Cell]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&width.to_le_bytes());
    eat(&height.to_le_bytes());
    for c in cells {
        eat(&c.glyph.to_le_bytes());
        eat(&c.color.to_le_bytes());
    }
    h
}

/// Fraction of cells whose (glyph, color) differ.
pub fn observation_diff(a: &Observation, b: &Observation) -> Result<f64, EnvError> {
    if a.width != b.width || a.height != b.height {
        return Err(EnvError::DimensionMismatch {
            a_w: a.width,
            a_h: a.height,
            b_w: b.width,
            b_h: b.height,
        });
    }
    if a.cells.is_empty() {
        return Ok(0.0);
    }
    let differing = a.cells.iter().zip(&b.cells).filter(|(x, y)| x != y).count();
    Ok(differing as f64 / a.cells.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalReason {
    VictoryLimit,
    Defeat,
    StepLimit,
}

impl fmt::Display for TerminalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TerminalReason::VictoryLimit => "victory-limit",
            TerminalReason::Defeat => "defeat",
            TerminalReason::StepLimit => "step-limit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub env_id: EnvId,
    pub progression: u32,
    pub score: u32,
    pub steps_taken: u64,
    pub terminal: Option<TerminalReason>,
}

impl ProgressReport {
    pub fn delta_to(&self, later: &ProgressReport) -> ProgressDelta {
        ProgressDelta {
            progression: later.progression as i64 - self.progression as i64,
            score: later.score as i64 - self.score as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProgressDelta {
    pub progression: i64,
    pub score: i64,
}

impl Add for ProgressDelta {
    type Output = ProgressDelta;

    fn add(self, rhs: Self) -> Self::Output {
        ProgressDelta {
            progression: self.progression + rhs.progression,
            score: self.score + rhs.score,
        }
    }
}

/// Opaque, immutable copy of a full environment state, including hidden RNG
/// state. Cheap to clone and share between threads.
#[derive(Clone)]
pub struct EnvSnapshot {
    env_id: EnvId,
    state: Arc<dyn Any + Send + Sync>,
}

impl EnvSnapshot {
    pub(crate) fn new<S: Any + Send + Sync>(env_id: EnvId, state: S) -> Self {
        EnvSnapshot {
            env_id,
            state: Arc::new(state),
        }
    }

    pub fn env_id(&self) -> EnvId {
        self.env_id
    }

    pub(crate) fn state<S: Any>(&self, expected: EnvId) -> Result<&S, EnvError> {
        if self.env_id != expected {
            return Err(EnvError::SnapshotMismatch {
                expected,
                got: self.env_id,
            });
        }
        self.state
            .downcast_ref::<S>()
            .ok_or(EnvError::SnapshotMismatch {
                expected,
                got: self.env_id,
            })
    }

    /// Builds an independent environment positioned at this snapshot.
    pub fn instantiate(&self) -> Box<dyn Environment> {
        let mut env: Box<dyn Environment> = match self.env_id {
            EnvId::MicroSpire => Box::new(MicroSpire::new(0)),
            EnvId::ButtonWorld => Box::new(ButtonWorld::new(0)),
            EnvId::Bandit => Box::new(Bandit::new(0)),
        };
        env.restore(self).expect("snapshot matches its own env id");
        env
    }
}

impl fmt::Debug for EnvSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnvSnapshot")
            .field("env_id", &self.env_id)
            .finish_non_exhaustive()
    }
}

pub trait Environment: Send {
    fn env_id(&self) -> EnvId;

    fn bounds(&self) -> GridBounds;

    fn observe(&self) -> Observation;

    /// Applies one action and returns the next observation.
    fn apply(&mut self, action: &AtomicAction) -> Result<Observation, EnvError>;

    fn snapshot(&self) -> EnvSnapshot;

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<Observation, EnvError>;

    fn progress(&self) -> ProgressReport;

    fn is_terminal(&self) -> bool {
        self.progress().terminal.is_some()
    }

    /// Replaces the hidden chance stream. Search calls this after restoring so
    /// simulated futures do not peek at the real draw sequence.
    fn reseed_chance(&mut self, seed: u64);
}

/// Creates an environment in its canonical initial state for `seed`.
pub fn make_env(env_id: EnvId, seed: u64) -> Box<dyn Environment> {
    match env_id {
        EnvId::MicroSpire => Box::new(MicroSpire::new(seed)),
        EnvId::ButtonWorld => Box::new(ButtonWorld::new(seed)),
        EnvId::Bandit => Box::new(Bandit::new(seed)),
    }
}

/// Parses `env_id` and resets a new environment with `seed`.
pub fn reset(env_id: &str, seed: u64) -> Result<(Box<dyn Environment>, Observation), EnvError> {
    let id: EnvId = env_id.parse()?;
    let env = make_env(id, seed);
    let obs = env.observe();
    Ok((env, obs))
}

/// Grid painter shared by the built-in games.
pub(crate) struct Canvas {
    width: u16,
    height: u16,
    cells: Vec<Cell>,
}

impl Canvas {
    pub(crate) fn new(width: u16, height: u16) -> Self {
        Canvas {
            width,
            height,
            cells: vec![Cell::BACKGROUND; width as usize * height as usize],
        }
    }

    pub(crate) fn set(&mut self, col: u16, row: u16, glyph: u16, color: u16) {
        debug_assert!(col < self.width && row < self.height);
        self.cells[row as usize * self.width as usize + col as usize] = Cell::new(glyph, color);
    }

    pub(crate) fn fill(&mut self, rect: Rect, glyph: u16, color: u16) {
        for row in rect.row0..=rect.row1 {
            for col in rect.col0..=rect.col1 {
                self.set(col, row, glyph, color);
            }
        }
    }

    /// Writes `value` as `width` digit glyphs starting at (col,row).
    pub(crate) fn digits(&mut self, col: u16, row: u16, value: u32, width: u16, color: u16) {
        let mut v = value;
        for i in (0..width).rev() {
            self.set(col + i, row, palette::digit_glyph((v % 10) as u8), color);
            v /= 10;
        }
    }

    pub(crate) fn finish(self) -> Observation {
        Observation::new(self.width, self.height, self.cells).expect("canvas keeps cells well formed")
    }
}

/// Inclusive cell rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub col0: u16,
    pub row0: u16,
    pub col1: u16,
    pub row1: u16,
}

impl Rect {
    pub const fn new(col0: u16, row0: u16, col1: u16, row1: u16) -> Self {
        Rect {
            col0,
            row0,
            col1,
            row1,
        }
    }

    pub fn contains(&self, col: u16, row: u16) -> bool {
        (self.col0..=self.col1).contains(&col) && (self.row0..=self.row1).contains(&row)
    }

    pub fn center(&self) -> (u16, u16) {
        ((self.col0 + self.col1) / 2, (self.row0 + self.row1) / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs_from(codes: &[u16], w: u16, h: u16) -> Observation {
        let cells = codes
            .iter()
            .map(|&c| if c == 0 { Cell::BACKGROUND } else { Cell::new(c, c) })
            .collect();
        Observation::new(w, h, cells).unwrap()
    }

    #[test]
    fn diff_examples() {
        let a = Observation::blank(24, 16);
        assert_eq!(observation_diff(&a, &a).unwrap(), 0.0);

        let full = obs_from(&[1; 384], 24, 16);
        assert_eq!(observation_diff(&a, &full).unwrap(), 1.0);

        let mut codes = vec![0u16; 384];
        codes[0] = 1;
        codes[100] = 2;
        codes[383] = 3;
        let b = obs_from(&codes, 24, 16);
        assert_eq!(observation_diff(&a, &b).unwrap(), 3.0 / 384.0);
        assert_eq!(3.0 / 384.0, 0.0078125);

        let small = Observation::blank(4, 4);
        assert!(matches!(
            observation_diff(&a, &small),
            Err(EnvError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_malformed_cells() {
        let cells = vec![Cell::new(3, 0)];
        assert!(Observation::new(1, 1, cells).is_err());
        assert!(Observation::new(2, 2, vec![Cell::BACKGROUND; 3]).is_err());
    }

    #[test]
    fn hash_depends_on_shape() {
        let a = Observation::blank(4, 6);
        let b = Observation::blank(6, 4);
        assert_ne!(a.state_hash(), b.state_hash());
        assert_eq!(a.state_hash(), Observation::blank(4, 6).state_hash());
    }

    #[test]
    fn unknown_env_id() {
        assert!(matches!(reset("nethack", 1), Err(EnvError::UnknownEnv(_))));
    }

    proptest! {
        #[test]
        fn diff_is_a_metric(
            a in prop::collection::vec(0u16..3, 48),
            b in prop::collection::vec(0u16..3, 48),
            c in prop::collection::vec(0u16..3, 48),
        ) {
            let (a, b, c) = (obs_from(&a, 8, 6), obs_from(&b, 8, 6), obs_from(&c, 8, 6));
            let ab = observation_diff(&a, &b).unwrap();
            prop_assert_eq!(ab, observation_diff(&b, &a).unwrap());
            prop_assert_eq!(observation_diff(&a, &a).unwrap(), 0.0);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 0.0, a == b);
            let ac = observation_diff(&a, &c).unwrap();
            let cb = observation_diff(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
