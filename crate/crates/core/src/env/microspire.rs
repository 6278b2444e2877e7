//! MicroSpire: a one-lane card battler on a 24x16 grid.
//!
//! Rules:
//! * dragging a Strike card onto the enemy with energy >= 1 deals 6 damage and
//!   costs 1 energy;
//! * clicking a Defend card with energy >= 1 grants 5 block and costs 1 energy;
//! * clicking End-Turn lets the enemy attack for `max(0, 4 - block)`, resets
//!   block, refills energy to 3 and draws a fresh hand of three cards;
//! * an enemy at 0 HP clears the floor; the next enemy has `12 + 4*floor` HP;
//! * the player at 0 HP ends the episode in defeat; clearing floor 10 ends it
//!   in victory.
//!
//! Everything else (stray clicks, keys, waits) only advances a hidden tick
//! counter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::palette::*;
use super::{
    Canvas, EnvError, EnvId, EnvSnapshot, Environment, Observation, ProgressReport, Rect,
    TerminalReason, DEFAULT_STEP_LIMIT,
};
use crate::skill::{AtomicAction, GridBounds};

/// Normative layout and balance constants.
pub mod layout {
    use super::Rect;

    pub const WIDTH: u16 = 24;
    pub const HEIGHT: u16 = 16;

    pub const FLOOR_COUNTER: Rect = Rect::new(0, 0, 2, 0);
    pub const ENEMY: Rect = Rect::new(16, 1, 21, 4);
    pub const END_TURN: Rect = Rect::new(21, 7, 23, 8);
    pub const PLAYER: Rect = Rect::new(1, 10, 4, 13);
    pub const ENERGY_ORB: Rect = Rect::new(6, 11, 7, 12);
    pub const HAND: [Rect; 3] = [
        Rect::new(9, 11, 11, 14),
        Rect::new(13, 11, 15, 14),
        Rect::new(17, 11, 19, 14),
    ];

    pub const PLAYER_HP: i32 = 20;
    pub const ENEMY_HP: i32 = 12;
    pub const ENEMY_HP_PER_FLOOR: i32 = 4;
    pub const ENEMY_ATTACK: u32 = 4;
    pub const MAX_ENERGY: u32 = 3;
    pub const STRIKE_DAMAGE: i32 = 6;
    pub const DEFEND_BLOCK: u32 = 5;
    pub const CARD_COST: u32 = 1;
    pub const FLOOR_SCORE: u32 = 5;
    pub const VICTORY_FLOOR: u32 = 10;
    /// Chance that a drawn card is a Strike.
    pub const STRIKE_DRAW_P: f64 = 0.6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Card {
    Strike,
    Defend,
}

#[derive(Debug, Clone)]
struct SpireState {
    floors: u32,
    player_hp: i32,
    block: u32,
    energy: u32,
    enemy_hp: i32,
    hand: [Option<Card>; 3],
    damage_dealt: u32,
    turn: u32,
    ticks: u64,
    steps: u64,
    step_limit: u64,
    terminal: Option<TerminalReason>,
    chance: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct MicroSpire {
    s: SpireState,
}

impl MicroSpire {
    pub fn new(seed: u64) -> Self {
        Self::with_step_limit(seed, DEFAULT_STEP_LIMIT)
    }

    pub fn with_step_limit(seed: u64, step_limit: u64) -> Self {
        MicroSpire {
            s: SpireState {
                floors: 0,
                player_hp: layout::PLAYER_HP,
                block: 0,
                energy: layout::MAX_ENERGY,
                enemy_hp: layout::ENEMY_HP,
                hand: [Some(Card::Strike), Some(Card::Strike), Some(Card::Defend)],
                damage_dealt: 0,
                turn: 0,
                ticks: 0,
                steps: 0,
                step_limit,
                terminal: None,
                chance: ChaCha8Rng::seed_from_u64(seed),
            },
        }
    }

    pub fn player_hp(&self) -> i32 {
        self.s.player_hp
    }

    pub fn enemy_hp(&self) -> i32 {
        self.s.enemy_hp
    }

    pub fn energy(&self) -> u32 {
        self.s.energy
    }

    pub fn block(&self) -> u32 {
        self.s.block
    }

    pub fn hand(&self) -> [Option<Card>; 3] {
        self.s.hand
    }

    pub fn turn(&self) -> u32 {
        self.s.turn
    }

    fn slot_at(col: u16, row: u16) -> Option<usize> {
        layout::HAND.iter().position(|r| r.contains(col, row))
    }

    fn play_strike(&mut self, slot: usize) {
        let s = &mut self.s;
        let dealt = layout::STRIKE_DAMAGE.min(s.enemy_hp);
        s.enemy_hp -= layout::STRIKE_DAMAGE;
        s.damage_dealt += dealt as u32;
        s.energy -= layout::CARD_COST;
        s.hand[slot] = None;
        if s.enemy_hp <= 0 {
            s.enemy_hp = 0;
            s.floors += 1;
            if s.floors >= layout::VICTORY_FLOOR {
                s.terminal = Some(TerminalReason::VictoryLimit);
            } else {
                s.enemy_hp = layout::ENEMY_HP + layout::ENEMY_HP_PER_FLOOR * s.floors as i32;
            }
        }
    }

    fn play_defend(&mut self, slot: usize) {
        let s = &mut self.s;
        s.block += layout::DEFEND_BLOCK;
        s.energy -= layout::CARD_COST;
        s.hand[slot] = None;
    }

    fn end_turn(&mut self) {
        let s = &mut self.s;
        let damage = layout::ENEMY_ATTACK.saturating_sub(s.block) as i32;
        s.player_hp -= damage;
        s.block = 0;
        s.energy = layout::MAX_ENERGY;
        s.turn += 1;
        for slot in s.hand.iter_mut() {
            *slot = Some(if s.chance.random_bool(layout::STRIKE_DRAW_P) {
                Card::Strike
            } else {
                Card::Defend
            });
        }
        if s.player_hp <= 0 {
            s.player_hp = 0;
            s.terminal = Some(TerminalReason::Defeat);
        }
    }

    fn render(&self) -> Observation {
        let s = &self.s;
        let mut c = Canvas::new(layout::WIDTH, layout::HEIGHT);

        let fc = layout::FLOOR_COUNTER;
        c.set(fc.col0, fc.row0, FLOOR_MARK, COUNTER);
        c.digits(fc.col0 + 1, fc.row0, s.floors, 2, COUNTER);

        let e = layout::ENEMY;
        c.fill(e, ENEMY_BODY, ENEMY);
        c.digits(e.col0 + 2, e.row1, s.enemy_hp.max(0) as u32, 2, ENEMY);

        c.fill(layout::END_TURN, END_TURN, BUTTON);

        let p = layout::PLAYER;
        c.fill(p, PLAYER_BODY, PLAYER);
        c.digits(p.col0 + 1, p.row0 + 2, s.player_hp.max(0) as u32, 2, PLAYER);
        c.set(p.col0, p.row1, SHIELD, PLAYER);
        c.set(p.col1, p.row1, SHIELD, PLAYER);
        c.digits(p.col0 + 1, p.row1, s.block.min(99), 2, PLAYER);

        c.fill(layout::ENERGY_ORB, digit_glyph(s.energy as u8), ENERGY);

        for (slot, rect) in s.hand.iter().zip(layout::HAND) {
            let Some(card) = slot else { continue };
            let (art, color) = match card {
                Card::Strike => (STRIKE_ART, ATTACK_CARD),
                Card::Defend => (DEFEND_ART, SKILL_CARD),
            };
            c.fill(rect, art, color);
            c.set(rect.col0, rect.row0, digit_glyph(layout::CARD_COST as u8), color);
        }
        c.finish()
    }
}

impl Environment for MicroSpire {
    fn env_id(&self) -> EnvId {
        EnvId::MicroSpire
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
        self.s.ticks += match action {
            AtomicAction::Wait(t) => *t as u64,
            _ => 1,
        };
        match *action {
            AtomicAction::Click(p) => {
                if let Some(slot) = Self::slot_at(p.col, p.row) {
                    if self.s.hand[slot] == Some(Card::Defend) && self.s.energy >= layout::CARD_COST {
                        self.play_defend(slot);
                    }
                } else if layout::END_TURN.contains(p.col, p.row) {
                    self.end_turn();
                }
            }
            AtomicAction::Drag { from, to } => {
                if let Some(slot) = Self::slot_at(from.col, from.row) {
                    if self.s.hand[slot] == Some(Card::Strike)
                        && layout::ENEMY.contains(to.col, to.row)
                        && self.s.energy >= layout::CARD_COST
                    {
                        self.play_strike(slot);
                    }
                }
            }
            AtomicAction::Key(_) | AtomicAction::Wait(_) => {}
        }
        if self.s.terminal.is_none() && self.s.steps >= self.s.step_limit {
            self.s.terminal = Some(TerminalReason::StepLimit);
        }
        Ok(self.render())
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::new(EnvId::MicroSpire, self.s.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<Observation, EnvError> {
        self.s = snapshot.state::<SpireState>(EnvId::MicroSpire)?.clone();
        Ok(self.render())
    }

    fn progress(&self) -> ProgressReport {
        ProgressReport {
            env_id: EnvId::MicroSpire,
            progression: self.s.floors,
            score: layout::FLOOR_SCORE * self.s.floors + self.s.damage_dealt,
            steps_taken: self.s.steps,
            terminal: self.s.terminal,
        }
    }

    fn reseed_chance(&mut self, seed: u64) {
        self.s.chance = ChaCha8Rng::seed_from_u64(seed);
    }
}
