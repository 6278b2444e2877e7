//! The evolution loop: per-step invocation or augmentation, reward
//! bookkeeping, refinement, and the end-of-round prune and merge passes.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{make_env, observation_diff, EnvError, EnvId, Environment, Observation, TerminalReason};
use crate::grounding::{propose_actions, segment, DEFAULT_BUDGET};
use crate::mcts::{search, MctsError, SearchConfig};
use crate::metrics::{pruning_rate, responsive_rate};
use crate::reasoner::{
    differ_rubric, ObservationDigest, Reasoner, ReasonerError, RefineOutcome, SkillSummary,
};
use crate::skill::{
    augment, combine_rewards, diversity_reward, efficiency_reward, AtomicAction, IdGen,
    RewardBreakdown, Skill, SkillError, SkillId, Trajectory,
};
use crate::store::{StoreError, StoreHandle, TombstoneReason};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Search(#[from] MctsError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("invalid engine config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub k_max: usize,
    pub change_epsilon: f64,
    pub prune_min_evals: u64,
    pub prune_semantics_threshold: f64,
    pub refine_candidate_threshold: usize,
    pub candidate_cap: usize,
    pub probe_budget: usize,
    pub probe_seed_offset: u64,
    pub visual_filter_on: bool,
    pub mcts_on: bool,
    pub description_on: bool,
    pub steps_per_round: u32,
    pub rounds: u32,
    pub seed: u64,
    pub mcts_budget: u32,
    pub mcts_depth: u32,
    pub exploration_c: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let search = SearchConfig::default();
        EngineConfig {
            k_max: 5,
            change_epsilon: 0.0,
            prune_min_evals: 3,
            prune_semantics_threshold: 0.2,
            refine_candidate_threshold: 2,
            candidate_cap: 8,
            probe_budget: DEFAULT_BUDGET,
            probe_seed_offset: 0,
            visual_filter_on: true,
            mcts_on: true,
            description_on: true,
            steps_per_round: 100,
            rounds: 4,
            seed: 0,
            mcts_budget: search.budget,
            mcts_depth: search.max_depth,
            exploration_c: search.exploration_c,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        if !(self.change_epsilon >= 0.0 && self.change_epsilon < 1.0) {
            return bad("change_epsilon must be in [0,1)");
        }
        if !(0.0..=1.0).contains(&self.prune_semantics_threshold) {
            return bad("prune_semantics_threshold must be in [0,1]");
        }
        if self.candidate_cap == 0 {
            return bad("candidate_cap must be at least 1");
        }
        if self.probe_budget == 0 {
            return bad("probe_budget must be at least 1");
        }
        self.search_config(0).validate()?;
        Ok(())
    }

    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            budget: self.mcts_budget,
            max_depth: self.mcts_depth,
            exploration_c: self.exploration_c,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Invoked,
    Augmented,
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub branch: Branch,
    pub skill: Option<SkillId>,
    /// Whether `skill` was newly added to the library by this step.
    pub inserted: bool,
    pub candidates: usize,
    pub trajectory: Option<Trajectory>,
    pub reward: Option<RewardBreakdown>,
    pub responsive: bool,
    /// Probe actions tried during augmentation.
    pub probes: usize,
    pub refined_into: Option<SkillId>,
    pub reasoner_calls: u64,
}

impl StepOutcome {
    /// Only steps that ran a library skill count; discarded probes do not.
    pub fn counts_as_execution(&self) -> bool {
        self.branch != Branch::Idle
    }
}

/// One line of the per-step event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: u32,
    pub step: u32,
    pub branch: Branch,
    pub skill: Option<SkillId>,
    pub inserted: bool,
    pub candidates: usize,
    pub probes: usize,
    pub per_step_diffs: Vec<f64>,
    pub reward: Option<RewardBreakdown>,
    pub responsive: bool,
    pub refined_into: Option<SkillId>,
    pub reasoner_calls: u64,
    pub progression: u32,
    pub score: u32,
}

/// Per-round library and progress figures, one row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub library_size_start: usize,
    pub skills_augmented: u64,
    pub skills_pruned: u64,
    pub pruning_rate: f64,
    pub progression: u32,
    pub score: u32,
    pub responsive_rate: Option<f64>,
    pub estimated_cost: f64,
}

/// Counters behind a [`RoundReport`] that the table does not show.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundTelemetry {
    pub round: u32,
    pub steps_run: u32,
    pub invoked_steps: u32,
    pub augmented_steps: u32,
    pub idle_steps: u32,
    pub executions: u64,
    pub responsive_executions: u64,
    pub refined: u64,
    /// Records tombstoned by the merge pass.
    pub merged: u64,
    /// Records tombstoned because a refinement replaced them.
    pub replaced: u64,
    pub library_size_end: usize,
    /// Executions written to the library, including refinement re-scores.
    pub recorded_executions: u64,
    pub reasoner_calls: u64,
    pub terminal: Option<TerminalReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub report: RoundReport,
    pub telemetry: RoundTelemetry,
    pub steps: Vec<StepRecord>,
}

/// A responsive execution that later probes may extend.
#[derive(Debug, Clone)]
struct Validated {
    skill: Skill,
    trajectory: Trajectory,
}

/// One agent's loop over a shared library.
pub struct Agent<'a> {
    store: StoreHandle,
    reasoner: &'a dyn Reasoner,
    config: EngineConfig,
    ids: IdGen,
    rng: ChaCha8Rng,
    prefix: Option<Validated>,
    /// Probe actions already tried per observation hash.
    tried: BTreeMap<u64, BTreeSet<AtomicAction>>,
    calls: Cell<u64>,
    recorded: Cell<u64>,
}

pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn execute(env: &mut dyn Environment, skill: &Skill, before: Observation) -> Result<Trajectory, EngineError> {
    let p0 = env.progress();
    let mut after_states = Vec::with_capacity(skill.len());
    let mut diffs = Vec::with_capacity(skill.len());
    let mut prev = before.clone();
    for a in skill.actions() {
        if env.is_terminal() {
            break;
        }
        let obs = env.apply(a)?;
        diffs.push(observation_diff(&prev, &obs)?);
        prev = obs.clone();
        after_states.push(obs);
    }
    Ok(Trajectory {
        before,
        after_states,
        per_step_diffs: diffs,
        progress_delta: p0.delta_to(&env.progress()),
    })
}

impl<'a> Agent<'a> {
    pub fn new(store: StoreHandle, reasoner: &'a dyn Reasoner, config: EngineConfig, agent: &str) -> Self {
        let ids = IdGen::new(agent);
        ids.skip_past(store.snapshot().records.keys());
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Agent {
            store,
            reasoner,
            config,
            ids,
            rng,
            prefix: None,
            tried: BTreeMap::new(),
            calls: Cell::new(0),
            recorded: Cell::new(0),
        }
    }

    fn call(&self) -> &dyn Reasoner {
        self.calls.set(self.calls.get() + 1);
        self.reasoner
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &StoreHandle {
        &self.store
    }

    /// Executions this agent has recorded in the library so far.
    pub fn recorded_executions(&self) -> u64 {
        self.recorded.get()
    }

    /// Restarts the per-episode state with a new RNG stream.
    pub fn begin_episode(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.prefix = None;
        self.tried.clear();
    }

    /// One iteration of the loop; `None` once the episode is over.
    pub fn run_step(&mut self, env: &mut dyn Environment) -> Result<Option<StepOutcome>, EngineError> {
        if env.is_terminal() {
            return Ok(None);
        }
        self.calls.set(0);
        let x_t = env.observe();
        let digest = ObservationDigest::of(&x_t);
        let summaries = self.store.live_summaries();
        let picked = self.call().select(&digest, &summaries)?;
        let candidates: Vec<Skill> = picked
            .iter()
            .filter_map(|id| self.store.get(id).filter(|r| r.is_live()))
            .take(self.config.candidate_cap)
            .map(|r| r.to_skill())
            .collect();

        let chosen = if candidates.is_empty() {
            None
        } else {
            self.choose(env, &candidates)?
        };
        let Some(chosen) = chosen else {
            let mut out = self.augmentation_phase(env, x_t)?;
            out.candidates = candidates.len();
            out.reasoner_calls = self.calls.get();
            return Ok(Some(out));
        };

        let trajectory = execute(env, &chosen, x_t.clone())?;
        let responsive = trajectory.responsive(self.config.change_epsilon);
        let reward = self.evaluate_and_update(&chosen, &x_t, &trajectory)?;

        let mut refined = None;
        if candidates.len() < self.config.refine_candidate_threshold {
            refined = self.refine(&x_t, &chosen, &trajectory)?;
        }
        let refined_into = refined.as_ref().map(|(id, _)| id.clone());

        self.prefix = (responsive && chosen.len() < self.config.k_max && refined_into.is_none())
            .then(|| Validated {
                skill: chosen.clone(),
                trajectory: trajectory.clone(),
            });

        Ok(Some(StepOutcome {
            branch: Branch::Invoked,
            skill: Some(chosen.id.clone()),
            inserted: refined.is_some_and(|(_, new)| new),
            candidates: candidates.len(),
            trajectory: Some(trajectory),
            reward: Some(reward),
            responsive,
            probes: 0,
            refined_into,
            reasoner_calls: self.calls.get(),
        }))
    }

    /// Picks the skill to run, or `None` when no candidate looks worth it.
    fn choose(&mut self, env: &dyn Environment, candidates: &[Skill]) -> Result<Option<Skill>, EngineError> {
        let (best, estimate) = if self.config.mcts_on {
            let cfg = self.config.search_config(self.rng.next_u64());
            let value = |a: &Observation, b: &Observation, d| differ_rubric(a, b, d).unwrap_or(0.0);
            let result = search(&env.snapshot(), candidates, &cfg, &value)?;
            let mean = result.best_stats().mean;
            (result.best, mean)
        } else {
            let best = candidates
                .iter()
                .max_by(|a, b| {
                    let ma = a.stats.mean_semantics().unwrap_or(f64::NEG_INFINITY);
                    let mb = b.stats.mean_semantics().unwrap_or(f64::NEG_INFINITY);
                    ma.total_cmp(&mb).then_with(|| b.id.cmp(&a.id))
                })
                .expect("non-empty");
            (best.id.clone(), best.stats.mean_semantics().unwrap_or(f64::INFINITY))
        };
        // prune-grade picks are not worth invoking; look for something new
        if estimate <= 0.0 || estimate < self.config.prune_semantics_threshold {
            return Ok(None);
        }
        Ok(candidates.iter().find(|s| s.id == best).cloned())
    }

    /// Probes up to `k_max` grounded actions, extending the last validated
    /// skill when there is one; keeps the first probe that passes the filter.
    pub fn augmentation_phase(
        &mut self,
        env: &mut dyn Environment,
        x_t: Observation,
    ) -> Result<StepOutcome, EngineError> {
        let prefix = self.valid_prefix(&x_t);
        let tried = self.tried.entry(x_t.state_hash()).or_default();
        let mut proposals = propose_actions(
            &segment(&x_t),
            self.config.probe_budget,
            self.rng.next_u64() ^ self.config.probe_seed_offset,
        );
        proposals.retain(|a| !tried.contains(a));
        proposals.shuffle(&mut self.rng);

        let mut probes = 0;
        for action in proposals.into_iter().take(self.config.k_max) {
            if env.is_terminal() {
                break;
            }
            probes += 1;
            self.tried.entry(env.observe().state_hash()).or_default().insert(action);
            if let Some(mut out) = self.probe_with(env, prefix.as_ref(), action)? {
                out.probes = probes;
                return Ok(out);
            }
        }
        Ok(StepOutcome {
            branch: Branch::Idle,
            skill: None,
            inserted: false,
            candidates: 0,
            trajectory: None,
            reward: None,
            responsive: false,
            probes,
            refined_into: None,
            reasoner_calls: 0,
        })
    }

    /// Runs a single probe action from the current state, extending the
    /// validated prefix if it still applies. `None` when the filter rejects it.
    pub fn probe(&mut self, env: &mut dyn Environment, action: AtomicAction) -> Result<Option<StepOutcome>, EngineError> {
        let prefix = self.valid_prefix(&env.observe());
        let out = self.probe_with(env, prefix.as_ref(), action)?;
        if out.is_none() {
            self.prefix = prefix;
        }
        Ok(out)
    }

    fn valid_prefix(&mut self, x_t: &Observation) -> Option<Validated> {
        self.prefix
            .take()
            .filter(|p| p.trajectory.last().state_hash() == x_t.state_hash())
            .filter(|p| self.store.is_live(&p.skill.id))
    }

    fn probe_with(
        &mut self,
        env: &mut dyn Environment,
        prefix: Option<&Validated>,
        action: AtomicAction,
    ) -> Result<Option<StepOutcome>, EngineError> {
        let before = env.observe();
        let probe_skill = Skill::new(SkillId::new("probe"), vec![action], None)?;
        let probe = execute(env, &probe_skill, before)?;
        let validated = probe.responsive(self.config.change_epsilon);
        if self.config.visual_filter_on && !validated {
            return Ok(None);
        }
        let (skill, trajectory) = self.extend(prefix, action, probe, env)?;
        let responsive = trajectory.responsive(self.config.change_epsilon);
        let (stored, inserted) = self.store_new(skill, &trajectory)?;
        let reward = self.evaluate_and_update(&stored, &trajectory.before, &trajectory)?;
        self.prefix = (validated && stored.len() < self.config.k_max).then(|| Validated {
            skill: stored.clone(),
            trajectory: trajectory.clone(),
        });
        Ok(Some(StepOutcome {
            branch: Branch::Augmented,
            skill: Some(stored.id),
            inserted,
            candidates: 0,
            trajectory: Some(trajectory),
            reward: Some(reward),
            responsive,
            probes: 1,
            refined_into: None,
            reasoner_calls: 0,
        }))
    }

    fn extend(
        &self,
        prefix: Option<&Validated>,
        action: AtomicAction,
        probe: Trajectory,
        env: &dyn Environment,
    ) -> Result<(Skill, Trajectory), EngineError> {
        let skill = augment(prefix.map(|p| &p.skill), action, env.bounds(), &self.ids)?;
        let trajectory = match prefix {
            Some(p) => p.trajectory.clone().concat(probe),
            None => probe,
        };
        Ok((skill, trajectory))
    }

    /// Describes, embeds and inserts; returns the library's copy.
    fn store_new(
        &self,
        mut skill: Skill,
        trajectory: &Trajectory,
    ) -> Result<(Skill, bool), EngineError> {
        skill.descriptor = if self.config.description_on {
            self.call().describe(&trajectory.before, &skill, trajectory)?
        } else {
            skill.action_string()
        };
        skill.embedding = self.reasoner.embed(&skill.descriptor);
        let id = self.store.insert(&skill, trajectory.before.state_hash());
        let inserted = id == skill.id;
        let record = self.store.get(&id).ok_or_else(|| StoreError::UnknownSkill(id.clone()))?;
        Ok((record.to_skill(), inserted))
    }

    /// Scores an execution and records it against the skill.
    pub fn evaluate_and_update(
        &self,
        skill: &Skill,
        x_t: &Observation,
        trajectory: &Trajectory,
    ) -> Result<RewardBreakdown, EngineError> {
        if !self.store.is_live(&skill.id) {
            return Err(StoreError::UnknownSkill(skill.id.clone()).into());
        }
        let semantics = self
            .call()
            .differ(skill, x_t, trajectory.last(), trajectory.progress_delta)?
            .clamp(0.0, 1.0);
        let others: Vec<_> = self
            .store
            .live_records()
            .into_iter()
            .filter(|r| r.id != skill.id)
            .map(|r| r.embedding)
            .collect();
        let diversity = diversity_reward(skill, &others)?;
        let reward = combine_rewards(diversity, efficiency_reward(skill), semantics)?;
        self.store.record_execution(
            &skill.id,
            trajectory.responsive(self.config.change_epsilon),
            semantics,
            reward.total,
        )?;
        self.recorded.set(self.recorded.get() + 1);
        Ok(reward)
    }

    fn refine(
        &self,
        x_t: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
    ) -> Result<Option<(SkillId, bool)>, EngineError> {
        let summaries = self.store.live_summaries();
        let outcome = self.call().refine(x_t, skill, trajectory, &summaries, &self.ids)?;
        let RefineOutcome::Refined(revised) = outcome else {
            return Ok(None);
        };
        let cut = trajectory.truncated(revised.len());
        let (stored, inserted) = self.store_new(revised, &cut)?;
        self.evaluate_and_update(&stored, x_t, &cut)?;
        if stored.id != skill.id {
            self.store.tombstone(&skill.id, TombstoneReason::Merged, Some(stored.id.clone()))?;
        }
        Ok(Some((stored.id, inserted)))
    }
}

/// Tombstones live skills with enough evidence of low semantic value.
pub fn prune_pass(store: &StoreHandle, config: &EngineConfig) -> Result<Vec<SkillId>, EngineError> {
    let mut pruned = Vec::new();
    for r in store.live_records() {
        let st = r.stats();
        if st.semantics_count >= config.prune_min_evals
            && st.mean_semantics().is_some_and(|m| m < config.prune_semantics_threshold)
        {
            store.prune(&r.id, TombstoneReason::Pruned)?;
            pruned.push(r.id);
        }
    }
    Ok(pruned)
}

/// Clusters live skills and folds each group into its best member.
pub fn merge_pass(store: &StoreHandle, reasoner: &dyn Reasoner) -> Result<u64, EngineError> {
    let summaries: Vec<SkillSummary> = store.live_summaries();
    let groups = reasoner.cluster(&summaries)?;
    let mut merged = 0;
    for group in groups {
        let mut members: Vec<Skill> = group
            .iter()
            .filter_map(|id| store.get(id).filter(|r| r.is_live()))
            .map(|r| r.to_skill())
            .collect();
        if members.len() < 2 {
            continue;
        }
        members.sort_by(|a, b| {
            let ma = a.stats.mean_semantics().unwrap_or(f64::NEG_INFINITY);
            let mb = b.stats.mean_semantics().unwrap_or(f64::NEG_INFINITY);
            mb.total_cmp(&ma).then(a.len().cmp(&b.len())).then_with(|| a.id.cmp(&b.id))
        });
        let keep = &members[0].id;
        for other in &members[1..] {
            store.absorb(keep, &other.id)?;
            store.tombstone(&other.id, TombstoneReason::Merged, Some(keep.clone()))?;
            merged += 1;
        }
    }
    Ok(merged)
}

/// Seed of the environment for a given run seed and round.
pub fn round_seed(seed: u64, round: u32) -> u64 {
    mix_seed(seed, round as u64)
}

/// Runs one round on a fresh episode, then prunes and merges.
pub fn run_round(agent: &mut Agent<'_>, env_id: EnvId, round: u32) -> Result<RoundResult, EngineError> {
    let config = agent.config.clone();
    config.validate()?;
    let seed = round_seed(config.seed, round);
    let mut env = make_env(env_id, seed);
    agent.begin_episode(mix_seed(seed, 1));
    let cost_before = agent.reasoner.usage().estimated_cost;
    let library_size_start = agent.store.live_count();
    let recorded_before = agent.recorded_executions();

    let mut t = RoundTelemetry {
        round,
        ..RoundTelemetry::default()
    };
    let mut augmented = 0u64;
    let mut steps = Vec::new();
    for step in 0..config.steps_per_round {
        let Some(out) = agent.run_step(env.as_mut())? else {
            break;
        };
        t.steps_run += 1;
        match out.branch {
            Branch::Invoked => t.invoked_steps += 1,
            Branch::Augmented => t.augmented_steps += 1,
            Branch::Idle => t.idle_steps += 1,
        }
        if out.counts_as_execution() {
            t.executions += 1;
            t.responsive_executions += out.responsive as u64;
        }
        augmented += out.inserted as u64;
        if out.refined_into.is_some() {
            t.refined += 1;
            t.replaced += 1;
        }
        t.reasoner_calls += out.reasoner_calls;
        let progress = env.progress();
        steps.push(StepRecord {
            round,
            step,
            branch: out.branch,
            skill: out.skill,
            inserted: out.inserted,
            candidates: out.candidates,
            probes: out.probes,
            per_step_diffs: out.trajectory.map(|tr| tr.per_step_diffs).unwrap_or_default(),
            reward: out.reward,
            responsive: out.responsive,
            refined_into: out.refined_into,
            reasoner_calls: out.reasoner_calls,
            progression: progress.progression,
            score: progress.score,
        });
    }

    let pruned = prune_pass(&agent.store, &config)?.len() as u64;
    if config.description_on {
        t.reasoner_calls += 1;
        t.merged = merge_pass(&agent.store, agent.reasoner)?;
    }
    t.library_size_end = agent.store.live_count();
    t.recorded_executions = agent.recorded_executions() - recorded_before;
    let progress = env.progress();
    t.terminal = progress.terminal;
    let report = RoundReport {
        round,
        library_size_start,
        skills_augmented: augmented,
        skills_pruned: pruned,
        pruning_rate: pruning_rate(pruned, augmented),
        progression: progress.progression,
        score: progress.score,
        responsive_rate: responsive_rate(t.responsive_executions, t.executions),
        estimated_cost: agent.reasoner.usage().estimated_cost - cost_before,
    };
    Ok(RoundResult {
        report,
        telemetry: t,
        steps,
    })
}
