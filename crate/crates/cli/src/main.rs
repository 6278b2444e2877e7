use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bottomup::config::{remote_url_from_env, FileConfig};
use bottomup::engine::EngineConfig;
use bottomup::env::EnvId;
use bottomup::harness::{recompute_report, replay, run_experiment, ExperimentSpec};
use bottomup::reasoner::ReasonerKind;
use bottomup::skill::SkillId;
use bottomup::store::LibrarySnapshot;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agent", version, about = "Bottom-up skill evolution runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded multi-round experiment and write its reports.
    Run(RunArgs),
    /// Re-execute a stored skill and print its per-step diffs.
    Replay(ReplayArgs),
    /// Recompute and check the aggregates of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "microspire")]
    env: EnvId,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    steps: Option<u32>,
    /// Comma-separated list, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "scripted")]
    reasoner: ReasonerKind,
    /// Library to resume from.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with `engine.*`, `mcts.*`, `grounding.*`, `reasoner.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    no_visual_filter: bool,
    #[arg(long)]
    no_mcts: bool,
    #[arg(long)]
    no_description: bool,
    #[arg(long)]
    shared_library: bool,
    #[arg(long)]
    mcts_budget: Option<u32>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    library: PathBuf,
    #[arg(long)]
    skill: String,
    #[arg(long)]
    env: Option<EnvId>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
}

fn build_spec(a: &RunArgs) -> Result<ExperimentSpec> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut engine = EngineConfig::default();
    file.apply(&mut engine);
    if a.no_visual_filter {
        engine.visual_filter_on = false;
    }
    if a.no_mcts {
        engine.mcts_on = false;
    }
    if a.no_description {
        engine.description_on = false;
    }
    if let Some(b) = a.mcts_budget {
        engine.mcts_budget = b;
    }
    let mut spec = ExperimentSpec::new(a.env, a.seeds.clone(), &a.out);
    spec.rounds = a.rounds.unwrap_or(engine.rounds);
    spec.steps_per_round = a.steps.unwrap_or(engine.steps_per_round);
    spec.engine = engine;
    spec.reasoner = a.reasoner;
    spec.library = a.library.clone();
    spec.shared_library = a.shared_library;
    if a.reasoner == ReasonerKind::Remote {
        spec.remote = Some(file.remote(remote_url_from_env())?);
    }
    Ok(spec)
}

fn run(a: RunArgs) -> Result<()> {
    let spec = build_spec(&a)?;
    let report = run_experiment(&spec).with_context(|| format!("experiment into {}", a.out.display()))?;
    let last = report.aggregates.last();
    let fmt = |s: Option<bottomup::harness::Stat>| s.map_or("n/a".to_string(), |s| format!("{:.2}", s.mean));
    println!(
        "{} seeds x {} rounds on {}: final progression {}, responsive rate {}%, reports in {}",
        report.seeds.len(),
        spec.rounds,
        spec.env,
        fmt(last.and_then(|l| l.progression)),
        fmt(last.and_then(|l| l.responsive_rate)),
        a.out.display()
    );
    Ok(())
}

fn replay_cmd(a: ReplayArgs) -> Result<()> {
    let lib = LibrarySnapshot::load(&a.library)?;
    let env = a.env.unwrap_or(lib.env_id);
    let id = SkillId::new(a.skill);
    let record = lib.records.get(&id).with_context(|| format!("no skill {id} in {}", a.library.display()))?;
    if !record.is_live() {
        eprintln!("note: {id} is tombstoned");
    }
    println!("{id}: {}", record.descriptor);
    let tr = replay(&lib, &id, env, a.seed)?;
    for (i, (action, diff)) in record.actions.iter().zip(&tr.per_step_diffs).enumerate() {
        println!("step {i}: {action} diff {diff:.4}");
    }
    if tr.len() < record.actions.len() {
        println!("episode ended after {} of {} actions", tr.len(), record.actions.len());
    }
    println!(
        "progression {:+}, score {:+}",
        tr.progress_delta.progression, tr.progress_delta.score
    );
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let report = recompute_report(&a.input)?;
    println!("{}", serde_json::to_string_pretty(&report.aggregates)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
