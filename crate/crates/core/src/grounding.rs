//! Turns an observation into clickable UI elements and a bounded set of
//! candidate atomic actions.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{palette, Observation};
use crate::skill::{AtomicAction, GridPoint, Key};

pub const DEFAULT_BUDGET: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIElement {
    /// (col_min, row_min, col_max, row_max), inclusive.
    pub bbox: (u16, u16, u16, u16),
    pub center: (u16, u16),
    pub signature: String,
    pub color: u16,
}

impl UIElement {
    pub fn contains(&self, p: GridPoint) -> bool {
        let (c0, r0, c1, r1) = self.bbox;
        (c0..=c1).contains(&p.col) && (r0..=r1).contains(&p.row)
    }

    pub fn cell_count(&self) -> usize {
        let (c0, r0, c1, r1) = self.bbox;
        (c1 - c0 + 1) as usize * (r1 - r0 + 1) as usize
    }

    /// Short handle such as `attack9x11`: role word from the dominant color
    /// plus the bbox origin.
    pub fn token(&self) -> String {
        format!("{}{}x{}", role_name(self.color), self.bbox.0, self.bbox.1)
    }
}

/// Generic name for a color code.
pub fn role_name(color: u16) -> String {
    let name = match color {
        palette::PLAYER => "player",
        palette::ENEMY => "enemy",
        palette::ENERGY => "energy",
        palette::ATTACK_CARD => "attack",
        palette::SKILL_CARD => "skill",
        palette::BUTTON => "button",
        palette::COUNTER => "counter",
        palette::TITLE => "title",
        palette::FOCUS => "focus",
        palette::LAMP => "lamp",
        other => return format!("color{other}"),
    };
    name.to_string()
}

type Bbox = (u16, u16, u16, u16);

fn overlaps(a: Bbox, b: Bbox) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}

fn union(a: Bbox, b: Bbox) -> Bbox {
    (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))
}

/// Connected components (4-neighbourhood, same color) of non-background
/// cells. Components whose bounding boxes overlap are fused so the returned
/// elements never overlap. Ordered row-major by bbox origin.
pub fn segment(obs: &Observation) -> Vec<UIElement> {
    let (w, h) = (obs.width() as usize, obs.height() as usize);
    let cells = obs.cells();
    let mut seen = vec![false; cells.len()];
    let mut boxes: Vec<Bbox> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..cells.len() {
        if seen[start] || cells[start].is_background() {
            continue;
        }
        let color = cells[start].color;
        seen[start] = true;
        stack.push(start);
        let (c, r) = ((start % w) as u16, (start / w) as u16);
        let mut bb = (c, r, c, r);
        while let Some(i) = stack.pop() {
            let (c, r) = (i % w, i / w);
            bb = union(bb, (c as u16, r as u16, c as u16, r as u16));
            let mut visit = |j: usize| {
                if !seen[j] && cells[j].color == color {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        boxes.push(bb);
    }

    // fuse until no two boxes overlap
    loop {
        let mut fused = false;
        'outer: for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if overlaps(boxes[i], boxes[j]) {
                    boxes[i] = union(boxes[i], boxes[j]);
                    boxes.swap_remove(j);
                    fused = true;
                    break 'outer;
                }
            }
        }
        if !fused {
            break;
        }
    }
    boxes.sort_by_key(|b| (b.1, b.0));

    boxes
        .into_iter()
        .map(|bb| {
            let mut glyphs: BTreeMap<u16, usize> = BTreeMap::new();
            let mut colors: BTreeMap<u16, usize> = BTreeMap::new();
            for row in bb.1..=bb.3 {
                for col in bb.0..=bb.2 {
                    let cell = obs.cell(col, row);
                    if !cell.is_background() {
                        *glyphs.entry(cell.glyph).or_default() += 1;
                        *colors.entry(cell.color).or_default() += 1;
                    }
                }
            }
            let signature = glyphs
                .iter()
                .map(|(g, n)| format!("{g}x{n}"))
                .collect::<Vec<_>>()
                .join(",");
            // most frequent color, lowest code on ties
            let color = colors
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(c, _)| *c)
                .unwrap_or(0);
            UIElement {
                bbox: bb,
                center: ((bb.0 + bb.2) / 2, (bb.1 + bb.3) / 2),
                signature,
                color,
            }
        })
        .collect()
}

/// Full candidate pool: clicks on every center, drags between every ordered
/// pair of distinct centers, then the fixed keys.
pub fn action_pool(elements: &[UIElement]) -> Vec<AtomicAction> {
    let mut pool: Vec<AtomicAction> = elements
        .iter()
        .map(|e| AtomicAction::click(e.center.0, e.center.1))
        .collect();
    for a in elements {
        for b in elements {
            if a != b {
                pool.push(AtomicAction::drag(a.center, b.center));
            }
        }
    }
    pool.extend(Key::ALL.iter().map(|&k| AtomicAction::Key(k)));
    pool
}

/// Candidate actions for augmentation, at most `budget` of them. When the
/// pool is larger than the budget, every click is kept (as far as the budget
/// allows) and the remainder is a seeded uniform sample; pool order is
/// preserved either way.
pub fn propose_actions(elements: &[UIElement], budget: usize, seed: u64) -> Vec<AtomicAction> {
    let budget = budget.max(1);
    let pool = action_pool(elements);
    if pool.len() <= budget {
        return pool;
    }
    let clicks = elements.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = if budget <= clicks {
        index::sample(&mut rng, clicks, budget).into_vec()
    } else {
        let rest = pool.len() - clicks;
        (0..clicks)
            .chain(
                index::sample(&mut rng, rest, budget - clicks)
                    .into_iter()
                    .map(|i| i + clicks),
            )
            .collect()
    };
    keep.sort_unstable();
    keep.into_iter().map(|i| pool[i]).collect()
}
