//! Seeded multi-round experiments, their report files and plot series.
//!
//! Output layout:
//!
//! ```text
//! out/report.json          ExperimentReport (deterministic)
//! out/timing.json          wall-clock only
//! out/library.jsonl        shared library (--shared-library only)
//! out/seed-N/library.jsonl
//! out/seed-N/steps.jsonl   one StepRecord per line
//! out/seed-N/rounds.json   RoundReports
//! out/seed-N/telemetry.json
//! out/plots/*.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{run_round, Agent, Branch, EngineConfig, EngineError, RoundReport, RoundTelemetry, StepRecord};
use crate::env::{make_env, observation_diff, EnvError, EnvId};
use crate::parallel::par_map;
use crate::reasoner::{Reasoner, ReasonerKind, RemoteConfig, RemoteModel, ScriptedOracle};
use crate::skill::{SkillId, Trajectory};
use crate::store::{LibrarySnapshot, LibraryStore, StoreError};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const TOP_SKILLS: usize = 10;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("seed {seed}: {source}")]
    Engine { seed: u64, source: EngineError },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub env: EnvId,
    pub rounds: u32,
    pub steps_per_round: u32,
    pub seeds: Vec<u64>,
    pub reasoner: ReasonerKind,
    /// Thresholds, ablation flags and search settings; `rounds`,
    /// `steps_per_round` and `seed` are taken from the fields above.
    pub engine: EngineConfig,
    #[serde(skip)]
    pub remote: Option<RemoteConfig>,
    pub out_dir: PathBuf,
    /// Library to resume from.
    pub library: Option<PathBuf>,
    pub shared_library: bool,
}

impl ExperimentSpec {
    pub fn new(env: EnvId, seeds: Vec<u64>, out_dir: impl Into<PathBuf>) -> Self {
        let engine = EngineConfig::default();
        ExperimentSpec {
            env,
            rounds: engine.rounds,
            steps_per_round: engine.steps_per_round,
            seeds,
            reasoner: ReasonerKind::Scripted,
            engine,
            remote: None,
            out_dir: out_dir.into(),
            library: None,
            shared_library: false,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Invalid("no seeds given".into()));
        }
        if self.rounds == 0 {
            return Err(HarnessError::Invalid("rounds must be at least 1".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(HarnessError::Invalid("seeds must be distinct".into()));
        }
        if self.reasoner == ReasonerKind::Remote && self.remote.is_none() {
            return Err(HarnessError::Invalid("remote reasoner selected without an endpoint".into()));
        }
        self.engine_config(0)
            .validate()
            .map_err(|e| HarnessError::Invalid(e.to_string()))
    }

    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            rounds: self.rounds,
            steps_per_round: self.steps_per_round,
            seed,
            ..self.engine.clone()
        }
    }

    fn reasoner(&self) -> Box<dyn Reasoner> {
        match (&self.reasoner, &self.remote) {
            (ReasonerKind::Remote, Some(cfg)) => Box::new(RemoteModel::new(cfg.clone())),
            _ => Box::new(ScriptedOracle::new()),
        }
    }
}

/// What the report echoes back about the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub env: EnvId,
    pub rounds: u32,
    pub steps_per_round: u32,
    pub seeds: Vec<u64>,
    pub reasoner: ReasonerKind,
    pub shared_library: bool,
    pub resumed_from: Option<String>,
    /// `mcts` or `greedy`.
    pub selector: String,
    pub engine: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub rounds: Vec<RoundReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Seeds contributing a value.
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        (n > 0).then(|| Stat {
            mean: values.iter().sum::<f64>() / n as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAggregate {
    pub round: u32,
    pub library_size_start: Option<Stat>,
    pub skills_augmented: Option<Stat>,
    pub skills_pruned: Option<Stat>,
    pub pruning_rate: Option<Stat>,
    pub progression: Option<Stat>,
    pub score: Option<Stat>,
    /// Over the seeds where the rate is defined.
    pub responsive_rate: Option<Stat>,
    pub estimated_cost: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub engine_version: String,
    pub config: ConfigEcho,
    pub seeds: Vec<SeedReport>,
    pub aggregates: Vec<RoundAggregate>,
    /// Invocation counts per skill over every seed and round.
    pub skill_invocations: BTreeMap<SkillId, u64>,
}

/// Per-round mean/min/max over seeds.
pub fn aggregate(seeds: &[SeedReport]) -> Vec<RoundAggregate> {
    let rounds = seeds.iter().map(|s| s.rounds.len()).max().unwrap_or(0);
    (0..rounds)
        .map(|i| {
            let rows: Vec<&RoundReport> = seeds.iter().filter_map(|s| s.rounds.get(i)).collect();
            let stat = |f: &dyn Fn(&RoundReport) -> Option<f64>| {
                Stat::of(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            RoundAggregate {
                round: i as u32,
                library_size_start: stat(&|r| Some(r.library_size_start as f64)),
                skills_augmented: stat(&|r| Some(r.skills_augmented as f64)),
                skills_pruned: stat(&|r| Some(r.skills_pruned as f64)),
                pruning_rate: stat(&|r| Some(r.pruning_rate)),
                progression: stat(&|r| Some(r.progression as f64)),
                score: stat(&|r| Some(r.score as f64)),
                responsive_rate: stat(&|r| r.responsive_rate),
                estimated_cost: stat(&|r| Some(r.estimated_cost)),
            }
        })
        .collect()
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundReport>,
    pub telemetry: Vec<RoundTelemetry>,
    pub steps: Vec<StepRecord>,
    pub library: LibrarySnapshot,
}

impl SeedRun {
    pub fn recorded_executions(&self) -> u64 {
        self.telemetry.iter().map(|t| t.recorded_executions).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub runs: Vec<SeedRun>,
    /// The shared store's final state in shared-library mode.
    pub shared: Option<LibrarySnapshot>,
}

fn agent_name(seed: u64) -> String {
    format!("s{seed}")
}

fn run_seed(spec: &ExperimentSpec, store: &LibraryStore, seed: u64) -> Result<SeedRun, HarnessError> {
    let reasoner = spec.reasoner();
    let name = agent_name(seed);
    let mut agent = Agent::new(store.handle(&name), reasoner.as_ref(), spec.engine_config(seed), &name);
    let mut run = SeedRun {
        seed,
        rounds: Vec::new(),
        telemetry: Vec::new(),
        steps: Vec::new(),
        library: LibrarySnapshot::empty(spec.env),
    };
    for round in 0..spec.rounds {
        let r = run_round(&mut agent, spec.env, round).map_err(|source| HarnessError::Engine { seed, source })?;
        run.rounds.push(r.report);
        run.telemetry.push(r.telemetry);
        run.steps.extend(r.steps);
    }
    run.library = store.snapshot();
    Ok(run)
}

fn load_resume(spec: &ExperimentSpec) -> Result<LibrarySnapshot, HarnessError> {
    let Some(path) = &spec.library else {
        return Ok(LibrarySnapshot::empty(spec.env));
    };
    let snap = LibrarySnapshot::load(path)?;
    if snap.env_id != spec.env {
        return Err(HarnessError::Invalid(format!(
            "{} holds a {} library, not {}",
            path.display(),
            snap.env_id,
            spec.env
        )));
    }
    Ok(snap)
}

/// Runs every seed without touching the disk.
pub fn execute(spec: &ExperimentSpec) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    let resume = load_resume(spec)?;
    let shared = spec.shared_library.then(|| LibraryStore::from_snapshot(resume.clone()));
    let runs = par_map(&spec.seeds, |&seed| match &shared {
        Some(store) => run_seed(spec, store, seed),
        None => run_seed(spec, &LibraryStore::from_snapshot(resume.clone()), seed),
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let seeds: Vec<SeedReport> = runs
        .iter()
        .map(|r| SeedReport {
            seed: r.seed,
            rounds: r.rounds.clone(),
        })
        .collect();
    let mut skill_invocations = BTreeMap::new();
    for step in runs.iter().flat_map(|r| &r.steps) {
        if let (Branch::Invoked, Some(id)) = (step.branch, &step.skill) {
            *skill_invocations.entry(id.clone()).or_insert(0) += 1;
        }
    }
    let engine = spec.engine_config(0);
    let report = ExperimentReport {
        engine_version: ENGINE_VERSION.to_string(),
        config: ConfigEcho {
            env: spec.env,
            rounds: spec.rounds,
            steps_per_round: spec.steps_per_round,
            seeds: spec.seeds.clone(),
            reasoner: spec.reasoner,
            shared_library: spec.shared_library,
            resumed_from: spec.library.as_ref().map(|p| p.display().to_string()),
            selector: if engine.mcts_on { "mcts" } else { "greedy" }.to_string(),
            engine,
        },
        aggregates: aggregate(&seeds),
        seeds,
        skill_invocations,
    };
    Ok(ExperimentOutput {
        report,
        runs,
        shared: shared.map(|s| s.snapshot()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_ms: u128,
    pub parallel: bool,
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Writes every per-seed file, the report, the plot series and timing.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, timing: &Timing) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for run in &out.runs {
        let d = seed_dir(dir, run.seed);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
        if out.shared.is_none() {
            let p = d.join("library.jsonl");
            write(&p, &run.library.to_jsonl())?;
        }
        let mut steps = String::new();
        for s in &run.steps {
            steps.push_str(&serde_json::to_string(s).expect("step records serialize"));
            steps.push('\n');
        }
        write(&d.join("steps.jsonl"), &steps)?;
        write(&d.join("rounds.json"), &to_json(&run.rounds))?;
        write(&d.join("telemetry.json"), &to_json(&run.telemetry))?;
    }
    if let Some(lib) = &out.shared {
        write(&dir.join("library.jsonl"), &lib.to_jsonl())?;
    }
    write(&dir.join("report.json"), &to_json(&out.report))?;
    emit_plot_data(&out.report, &dir.join("plots"))?;
    write(&dir.join("timing.json"), &to_json(timing))?;
    Ok(())
}

/// Runs the experiment and writes all of its files under `spec.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    let t0 = Instant::now();
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(io_err(&spec.out_dir))?;
    let out = execute(spec)?;
    let timing = Timing {
        wall_clock_ms: t0.elapsed().as_millis(),
        parallel: crate::parallel::is_parallel(),
    };
    write_outputs(&out, &spec.out_dir, &timing)?;
    Ok(out.report)
}

fn fmt_opt(v: Option<Stat>) -> String {
    v.map(|s| format!("{},{},{}", s.mean, s.min, s.max)).unwrap_or_else(|| ",,".to_string())
}

/// The invocation counts behind the top-skills plot, highest first.
pub fn top_skills(report: &ExperimentReport, n: usize) -> Vec<(SkillId, u64)> {
    let mut v: Vec<(SkillId, u64)> = report.skill_invocations.iter().map(|(k, c)| (k.clone(), *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(n);
    v
}

/// CSV series: library size and responsive rate per round, top skill
/// invocation counts.
pub fn emit_plot_data(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut size = String::from("round,mean,min,max\n");
    let mut rate = String::from("round,mean,min,max\n");
    for a in &report.aggregates {
        let _ = writeln!(size, "{},{}", a.round, fmt_opt(a.library_size_start));
        let _ = writeln!(rate, "{},{}", a.round, fmt_opt(a.responsive_rate));
    }
    let mut top = String::from("rank,skill,invocations\n");
    for (i, (id, c)) in top_skills(report, TOP_SKILLS).into_iter().enumerate() {
        let _ = writeln!(top, "{},{},{}", i + 1, id, c);
    }
    let files = [
        ("library_size.csv", size),
        ("responsive_rate.csv", rate),
        ("top_skills.csv", top),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        write(&p, &body)?;
        out.push(p);
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Rebuilds the aggregates of an output directory from its per-seed
/// round files and checks them against the stored report.
pub fn recompute_report(dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let path = dir.join("report.json");
    let stored: ExperimentReport = read_json(&path)?;
    let mut seeds = Vec::new();
    for s in &stored.seeds {
        let rounds: Vec<RoundReport> = read_json(&seed_dir(dir, s.seed).join("rounds.json"))?;
        seeds.push(SeedReport { seed: s.seed, rounds });
    }
    let aggregates = aggregate(&seeds);
    if seeds != stored.seeds || aggregates != stored.aggregates {
        return Err(HarnessError::Format {
            path: path.display().to_string(),
            message: "stored aggregates disagree with the per-seed round files".into(),
        });
    }
    Ok(ExperimentReport {
        seeds,
        aggregates,
        ..stored
    })
}

/// Re-executes a stored skill from the initial state of `env` at `seed`.
pub fn replay(library: &LibrarySnapshot, id: &SkillId, env: EnvId, seed: u64) -> Result<Trajectory, HarnessError> {
    let record = library
        .records
        .get(id)
        .ok_or_else(|| HarnessError::Invalid(format!("no skill {id} in the library")))?;
    let mut e = make_env(env, seed);
    let before = e.observe();
    let p0 = e.progress();
    let mut prev = before.clone();
    let mut after_states = Vec::new();
    let mut per_step_diffs = Vec::new();
    for a in &record.actions {
        if e.is_terminal() {
            break;
        }
        let obs = e.apply(a)?;
        per_step_diffs.push(observation_diff(&prev, &obs)?);
        prev = obs.clone();
        after_states.push(obs);
    }
    Ok(Trajectory {
        before,
        after_states,
        per_step_diffs,
        progress_delta: p0.delta_to(&e.progress()),
    })
}
