//! UCT search over a candidate skill set, simulated on restored snapshots.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvSnapshot, Environment, Observation, ProgressDelta};
use crate::skill::{Skill, SkillId};

pub const DISCOUNT: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum MctsError {
    #[error("no candidate skills to search over")]
    NoCandidates,
    #[error("snapshot is already terminal")]
    Terminal,
    #[error("invalid search config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: u32,
    pub max_depth: u32,
    pub exploration_c: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget: 64,
            max_depth: 3,
            exploration_c: 1.414,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        if self.budget == 0 {
            return Err(MctsError::Config("budget must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(MctsError::Config("max_depth must be at least 1"));
        }
        if self.exploration_c.is_nan() || self.exploration_c < 0.0 {
            return Err(MctsError::Config("exploration_c must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub id: SkillId,
    pub visits: u32,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: SkillId,
    pub candidates: Vec<CandidateStats>,
    pub simulations: u32,
}

impl SearchResult {
    pub fn best_stats(&self) -> &CandidateStats {
        self.candidates
            .iter()
            .find(|c| c.id == self.best)
            .expect("best is a candidate")
    }
}

/// Upper confidence bound for trees. Unvisited children sort first.
pub fn uct_score(child_mean: f64, child_visits: u32, parent_visits: u32, c: f64) -> f64 {
    if child_visits == 0 {
        return f64::INFINITY;
    }
    child_mean + c * ((parent_visits.max(1) as f64).ln() / child_visits as f64).sqrt()
}

/// Step value: (observation before, observation after, progress delta) → [0,1].
pub trait ValueFn: Fn(&Observation, &Observation, ProgressDelta) -> f64 + Sync {}
impl<F: Fn(&Observation, &Observation, ProgressDelta) -> f64 + Sync> ValueFn for F {}

struct Node {
    children: Vec<Option<usize>>,
    visits: u32,
    value_sum: f64,
}

impl Node {
    fn new(n: usize) -> Self {
        Node {
            children: vec![None; n],
            visits: 0,
            value_sum: 0.0,
        }
    }

    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }
}

/// Executes a whole skill in a simulation; `None` when the env was already
/// terminal.
fn simulate_skill(env: &mut dyn Environment, skill: &Skill, value_fn: &impl ValueFn) -> Option<f64> {
    if env.is_terminal() {
        return None;
    }
    let before = env.observe();
    let p0 = env.progress();
    let mut after = before.clone();
    for a in skill.actions() {
        match env.apply(a) {
            Ok(o) => after = o,
            Err(_) => break,
        }
    }
    let v = value_fn(&before, &after, p0.delta_to(&env.progress()));
    Some(v.clamp(0.0, 1.0))
}

/// Discounted mean of `values` (first element undiscounted).
fn discounted_mean(values: &[f64]) -> f64 {
    let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
    for v in values {
        num += w * v;
        den += w;
        w *= DISCOUNT;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn search(
    snapshot: &EnvSnapshot,
    candidates: &[Skill],
    config: &SearchConfig,
    value_fn: &impl ValueFn,
) -> Result<SearchResult, MctsError> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(MctsError::NoCandidates);
    }
    if snapshot.instantiate().is_terminal() {
        return Err(MctsError::Terminal);
    }
    let n = candidates.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut arena = vec![Node::new(n)];
    let max_depth = config.max_depth as usize;

    for _ in 0..config.budget {
        let mut env = snapshot.instantiate();
        env.reseed_chance(rng.next_u64());
        let mut path = vec![0usize];
        let mut values: Vec<f64> = Vec::new();
        let mut node = 0usize;

        // selection + expansion
        loop {
            if values.len() >= max_depth {
                break;
            }
            let unexpanded: Vec<usize> = (0..n).filter(|&i| arena[node].children[i].is_none()).collect();
            let (child_idx, fresh) = if !unexpanded.is_empty() {
                (unexpanded[rng.random_range(0..unexpanded.len())], true)
            } else {
                let parent_visits = arena[node].visits;
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for i in 0..n {
                    let c = &arena[arena[node].children[i].expect("expanded")];
                    let s = uct_score(c.mean(), c.visits, parent_visits, config.exploration_c);
                    if s > best_score {
                        best_score = s;
                        best = i;
                    }
                }
                (best, false)
            };
            let Some(v) = simulate_skill(env.as_mut(), &candidates[child_idx], value_fn) else {
                break;
            };
            values.push(v);
            let child = match arena[node].children[child_idx] {
                Some(c) => c,
                None => {
                    arena.push(Node::new(n));
                    let c = arena.len() - 1;
                    arena[node].children[child_idx] = Some(c);
                    c
                }
            };
            path.push(child);
            node = child;
            if fresh {
                break;
            }
        }

        // rollout
        while values.len() < max_depth {
            let pick = rng.random_range(0..n);
            match simulate_skill(env.as_mut(), &candidates[pick], value_fn) {
                Some(v) => values.push(v),
                None => break,
            }
        }

        // the episode ended: remaining depth is worth nothing
        if env.is_terminal() {
            values.resize(max_depth, 0.0);
        }

        // backup: a node at depth d is credited with the return from step d-1 on
        arena[0].visits += 1;
        arena[0].value_sum += discounted_mean(&values);
        for (depth, &id) in path.iter().enumerate().skip(1) {
            arena[id].visits += 1;
            arena[id].value_sum += discounted_mean(&values[depth - 1..]);
        }
    }

    let stats: Vec<CandidateStats> = candidates
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (visits, mean) = arena[0].children[i].map_or((0, 0.0), |c| (arena[c].visits, arena[c].mean()));
            CandidateStats {
                id: s.id.clone(),
                visits,
                mean,
            }
        })
        .collect();
    let best = stats
        .iter()
        .max_by(|a, b| {
            a.visits
                .cmp(&b.visits)
                .then(a.mean.total_cmp(&b.mean))
                .then(b.id.cmp(&a.id))
        })
        .expect("non-empty")
        .id
        .clone();
    Ok(SearchResult {
        best,
        candidates: stats,
        simulations: config.budget,
    })
}
