//! Three-armed bandit with a lamp. Pulling arm `i` lights the lamp with
//! probability [`BANDIT_ARM_PROBS`]`[i]`; the lamp only shows the outcome of
//! the most recent pull. Score counts lit pulls. Used to check search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::palette::*;
use super::{
    Canvas, EnvError, EnvId, EnvSnapshot, Environment, Observation, ProgressReport, Rect,
    TerminalReason, DEFAULT_STEP_LIMIT,
};
use crate::skill::{AtomicAction, GridBounds};

pub const BANDIT_ARM_PROBS: [f64; 3] = [0.2, 0.5, 0.8];

pub mod layout {
    use super::Rect;

    pub const WIDTH: u16 = 24;
    pub const HEIGHT: u16 = 16;
    pub const ARMS: [Rect; 3] = [
        Rect::new(2, 3, 7, 5),
        Rect::new(9, 3, 14, 5),
        Rect::new(16, 3, 21, 5),
    ];
    pub const LAMP: Rect = Rect::new(8, 10, 15, 12);
}

#[derive(Debug, Clone)]
struct BanditState {
    lit: bool,
    wins: u32,
    steps: u64,
    terminal: Option<TerminalReason>,
    chance: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct Bandit {
    s: BanditState,
}

impl Bandit {
    pub fn new(seed: u64) -> Self {
        Bandit {
            s: BanditState {
                lit: false,
                wins: 0,
                steps: 0,
                terminal: None,
                chance: ChaCha8Rng::seed_from_u64(seed),
            },
        }
    }

    /// Click at the center of arm `i`.
    pub fn pull(i: usize) -> AtomicAction {
        let (c, r) = layout::ARMS[i].center();
        AtomicAction::click(c, r)
    }

    fn render(&self) -> Observation {
        let mut c = Canvas::new(layout::WIDTH, layout::HEIGHT);
        for (i, arm) in layout::ARMS.iter().enumerate() {
            c.fill(*arm, LABEL_A + i as u16, BUTTON);
        }
        if self.s.lit {
            c.fill(layout::LAMP, LAMP_GLOW, LAMP);
        }
        c.finish()
    }
}

impl Environment for Bandit {
    fn env_id(&self) -> EnvId {
        EnvId::Bandit
    }

    fn bounds(&self) -> GridBounds {
        GridBounds::new(layout::WIDTH, layout::HEIGHT)
    }

    fn observe(&self) -> Observation {
        self.render()
    }

    fn apply(&mut self, action: &AtomicAction) -> Result<Observation, EnvError> {
        if let Some(reason) = self.s.terminal {
            return Err(EnvError::Terminal(reason));
        }
        self.s.steps += 1;
        if let AtomicAction::Click(p) = action {
            if let Some(i) = layout::ARMS.iter().position(|r| r.contains(p.col, p.row)) {
                self.s.lit = self.s.chance.random_bool(BANDIT_ARM_PROBS[i]);
                if self.s.lit {
                    self.s.wins += 1;
                }
            }
        }
        if self.s.steps >= DEFAULT_STEP_LIMIT {
            self.s.terminal = Some(TerminalReason::StepLimit);
        }
        Ok(self.render())
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::new(EnvId::Bandit, self.s.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<Observation, EnvError> {
        self.s = snapshot.state::<BanditState>(EnvId::Bandit)?.clone();
        Ok(self.render())
    }

    fn progress(&self) -> ProgressReport {
        ProgressReport {
            env_id: EnvId::Bandit,
            progression: 0,
            score: self.s.wins,
            steps_taken: self.s.steps,
            terminal: self.s.terminal,
        }
    }

    fn reseed_chance(&mut self, seed: u64) {
        self.s.chance = ChaCha8Rng::seed_from_u64(seed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lit_frequency_tracks_arm_probability() {
        let mut env = Bandit::new(4);
        for (arm, p) in BANDIT_ARM_PROBS.iter().enumerate() {
            let before = env.progress().score;
            for _ in 0..1500 {
                env.apply(&Bandit::pull(arm)).unwrap();
            }
            let rate = (env.progress().score - before) as f64 / 1500.0;
            assert!((rate - p).abs() < 0.04, "arm {arm}: {rate}");
        }
    }
}
