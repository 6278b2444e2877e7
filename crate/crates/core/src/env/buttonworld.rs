//! ButtonWorld: nested menus, five levels deep.
//!
//! Each menu shows three buttons; exactly one (chosen per level by the seed)
//! opens the next level. Any other button opens a dead-end screen with a Back
//! button. Escape goes back one screen; arrow keys move a focus highlight and
//! Enter/Space activates the focused button.

use std::collections::BTreeSet;

use super::palette::*;
use super::{
    Canvas, EnvError, EnvId, EnvSnapshot, Environment, Observation, ProgressReport, Rect,
    TerminalReason, DEFAULT_STEP_LIMIT,
};
use crate::skill::{AtomicAction, GridBounds, Key};

pub const BUTTONWORLD_LEVELS: u32 = 5;

pub mod layout {
    use super::Rect;

    pub const WIDTH: u16 = 24;
    pub const HEIGHT: u16 = 16;
    pub const TITLE: Rect = Rect::new(0, 0, 5, 0);
    pub const BUTTONS: [Rect; 3] = [
        Rect::new(2, 6, 7, 8),
        Rect::new(9, 6, 14, 8),
        Rect::new(16, 6, 21, 8),
    ];
    pub const BACK: Rect = Rect::new(9, 12, 14, 13);
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Index of the advancing button at each level for `seed`.
pub fn correct_buttons(seed: u64) -> [u8; BUTTONWORLD_LEVELS as usize] {
    let mut out = [0u8; BUTTONWORLD_LEVELS as usize];
    for (level, slot) in out.iter_mut().enumerate() {
        *slot = (splitmix64(seed.wrapping_mul(8).wrapping_add(level as u64)) % 3) as u8;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Screen {
    Menu(u32),
    DeadEnd(u32, u8),
}

#[derive(Debug, Clone)]
struct MenuState {
    correct: [u8; BUTTONWORLD_LEVELS as usize],
    screen: Screen,
    focus: u8,
    max_depth: u32,
    visited: BTreeSet<Screen>,
    steps: u64,
    step_limit: u64,
    terminal: Option<TerminalReason>,
}

#[derive(Debug, Clone)]
pub struct ButtonWorld {
    s: MenuState,
}

impl ButtonWorld {
    pub fn new(seed: u64) -> Self {
        Self::with_step_limit(seed, DEFAULT_STEP_LIMIT)
    }

    pub fn with_step_limit(seed: u64, step_limit: u64) -> Self {
        let mut visited = BTreeSet::new();
        visited.insert(Screen::Menu(0));
        ButtonWorld {
            s: MenuState {
                correct: correct_buttons(seed),
                screen: Screen::Menu(0),
                focus: 0,
                max_depth: 0,
                visited,
                steps: 0,
                step_limit,
                terminal: None,
            },
        }
    }

    pub fn depth(&self) -> Option<u32> {
        match self.s.screen {
            Screen::Menu(d) => Some(d),
            Screen::DeadEnd(..) => None,
        }
    }

    fn go(&mut self, screen: Screen) {
        self.s.screen = screen;
        self.s.focus = 0;
        self.s.visited.insert(screen);
        if let Screen::Menu(d) = screen {
            self.s.max_depth = self.s.max_depth.max(d);
            if d >= BUTTONWORLD_LEVELS {
                self.s.terminal = Some(TerminalReason::VictoryLimit);
            }
        }
    }

    fn activate(&mut self, button: u8) {
        match self.s.screen {
            Screen::Menu(d) => {
                if self.s.correct[d as usize] == button {
                    self.go(Screen::Menu(d + 1));
                } else {
                    self.go(Screen::DeadEnd(d, button));
                }
            }
            Screen::DeadEnd(d, _) => self.go(Screen::Menu(d)),
        }
    }

    fn back(&mut self) {
        match self.s.screen {
            Screen::Menu(0) => {}
            Screen::Menu(d) => self.go(Screen::Menu(d - 1)),
            Screen::DeadEnd(d, _) => self.go(Screen::Menu(d)),
        }
    }

    fn render(&self) -> Observation {
        let mut c = Canvas::new(layout::WIDTH, layout::HEIGHT);
        let t = layout::TITLE;
        c.fill(t, TITLE_BAR, TITLE);
        match self.s.screen {
            Screen::Menu(d) => {
                c.set(t.col1 - 1, t.row0, MENU_MARK, TITLE);
                c.digits(t.col1, t.row0, d + 1, 1, TITLE);
                for (i, rect) in layout::BUTTONS.iter().enumerate() {
                    let color = if i as u8 == self.s.focus { FOCUS } else { BUTTON };
                    c.fill(*rect, BUTTON_FACE, color);
                    let (cc, cr) = rect.center();
                    c.set(cc, cr, LABEL_A + i as u16, color);
                }
            }
            Screen::DeadEnd(d, _) => {
                c.set(t.col1 - 1, t.row0, DEAD_END, TITLE);
                c.digits(t.col1, t.row0, d + 1, 1, TITLE);
                c.fill(layout::BACK, BACK_ARROW, BUTTON);
            }
        }
        c.finish()
    }
}

impl Environment for ButtonWorld {
    fn env_id(&self) -> EnvId {
        EnvId::ButtonWorld
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
        let on_menu = matches!(self.s.screen, Screen::Menu(_));
        match *action {
            AtomicAction::Click(p) => {
                if on_menu {
                    if let Some(i) = layout::BUTTONS.iter().position(|r| r.contains(p.col, p.row)) {
                        self.activate(i as u8);
                    }
                } else if layout::BACK.contains(p.col, p.row) {
                    self.back();
                }
            }
            AtomicAction::Key(Key::Escape) => self.back(),
            AtomicAction::Key(Key::Up | Key::Left) if on_menu => {
                self.s.focus = (self.s.focus + 2) % 3;
            }
            AtomicAction::Key(Key::Down | Key::Right) if on_menu => {
                self.s.focus = (self.s.focus + 1) % 3;
            }
            AtomicAction::Key(Key::Enter | Key::Space) => {
                let focus = self.s.focus;
                self.activate(focus);
            }
            _ => {}
        }
        if self.s.terminal.is_none() && self.s.steps >= self.s.step_limit {
            self.s.terminal = Some(TerminalReason::StepLimit);
        }
        Ok(self.render())
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::new(EnvId::ButtonWorld, self.s.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<Observation, EnvError> {
        self.s = snapshot.state::<MenuState>(EnvId::ButtonWorld)?.clone();
        Ok(self.render())
    }

    fn progress(&self) -> ProgressReport {
        ProgressReport {
            env_id: EnvId::ButtonWorld,
            progression: self.s.max_depth,
            score: self.s.visited.len() as u32,
            steps_taken: self.s.steps,
            terminal: self.s.terminal,
        }
    }

    fn reseed_chance(&mut self, _seed: u64) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    fn click_button(i: usize) -> AtomicAction {
        let (c, r) = layout::BUTTONS[i].center();
        AtomicAction::click(c, r)
    }

    #[test]
    fn seed_permutation_matches_reference_table() {
        // Values from an independent script enumerating seeds 0..9.
        let expected: [[u8; 5]; 10] = [
            [1, 2, 1, 0, 1],
            [1, 1, 1, 0, 0],
            [2, 0, 1, 0, 0],
            [0, 0, 1, 1, 1],
            [1, 0, 2, 0, 2],
            [1, 0, 1, 1, 0],
            [2, 0, 0, 1, 2],
            [2, 1, 2, 0, 0],
            [1, 0, 0, 0, 1],
            [0, 0, 1, 0, 1],
        ];
        for (seed, row) in expected.iter().enumerate() {
            assert_eq!(&correct_buttons(seed as u64), row);
        }
        assert_ne!(correct_buttons(3)[0], correct_buttons(4)[0]);
    }

    #[test]
    fn correct_click_advances() {
        let mut env = ButtonWorld::new(3);
        let right = correct_buttons(3)[0] as usize;
        env.apply(&click_button(right)).unwrap();
        assert_eq!(env.progress().progression, 1);
        assert_eq!(env.progress().score, 2);
    }

    #[test]
    fn wrong_click_dead_ends_and_back_returns() {
        let mut env = ButtonWorld::new(3);
        let wrong = (correct_buttons(3)[0] as usize + 1) % 3;
        let root = env.observe();
        env.apply(&click_button(wrong)).unwrap();
        assert_eq!(env.depth(), None);
        let (c, r) = layout::BACK.center();
        let back = env.apply(&AtomicAction::click(c, r)).unwrap();
        assert_eq!(back, root);
        assert_eq!(env.progress().progression, 0);
    }

    #[test]
    fn keyboard_navigation_reaches_the_end() {
        let seed = 9;
        let mut env = ButtonWorld::new(seed);
        for (level, &c) in correct_buttons(seed).iter().enumerate() {
            for _ in 0..c {
                env.apply(&AtomicAction::Key(Key::Down)).unwrap();
            }
            env.apply(&AtomicAction::Key(Key::Enter)).unwrap();
            assert_eq!(env.progress().progression, level as u32 + 1);
        }
        assert_eq!(env.progress().terminal, Some(TerminalReason::VictoryLimit));
    }

    #[test]
    fn reset_determinism_and_restore() {
        let mut a = ButtonWorld::new(5);
        assert_eq!(a.observe(), ButtonWorld::new(5).observe());
        let snap = a.snapshot();
        let o = a.observe();
        a.apply(&AtomicAction::Key(Key::Down)).unwrap();
        assert_ne!(a.observe(), o);
        assert_eq!(a.restore(&snap).unwrap(), o);
    }
}
