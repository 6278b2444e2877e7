use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bottomup::engine::EngineConfig;
use bottomup::env::EnvId;
use bottomup::harness::*;
use bottomup::skill::{AtomicAction, Skill, SkillId};
use bottomup::store::LibraryStore;

fn spec(dir: &Path, seeds: Vec<u64>, rounds: u32, steps: u32) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(EnvId::MicroSpire, seeds, dir);
    s.rounds = rounds;
    s.steps_per_round = steps;
    s
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_experiment(&spec(&a, vec![7], 4, 100)).unwrap();
    run_experiment(&spec(&b, vec![7], 4, 100)).unwrap();
    let (mut fa, mut fb) = (files(&a), files(&b));
    assert!(fa.remove("timing.json").is_some());
    fb.remove("timing.json");
    let names: Vec<_> = fa.keys().cloned().collect();
    assert_eq!(
        names,
        [
            "plots/library_size.csv",
            "plots/responsive_rate.csv",
            "plots/top_skills.csv",
            "report.json",
            "seed-7/library.jsonl",
            "seed-7/rounds.json",
            "seed-7/steps.jsonl",
            "seed-7/telemetry.json",
        ]
    );
    assert_eq!(fa, fb);
}

#[test]
fn layout_and_plot_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec(tmp.path(), vec![1, 2, 3], 4, 30)).unwrap();
    assert_eq!(report.seeds.len(), 3);
    assert_eq!(report.aggregates.len(), 4);
    assert_eq!(report.engine_version, env!("CARGO_PKG_VERSION"));
    let size = fs::read_to_string(tmp.path().join("plots/library_size.csv")).unwrap();
    assert_eq!(size.lines().count(), 5);
    assert_eq!(size.lines().next(), Some("round,mean,min,max"));
    let top = fs::read_to_string(tmp.path().join("plots/top_skills.csv")).unwrap();
    assert!(top.lines().count() <= TOP_SKILLS + 1);
    let steps = fs::read_to_string(tmp.path().join("seed-2/steps.jsonl")).unwrap();
    // episodes may end before the step limit
    let n = steps.lines().count();
    assert!(n > 0 && n <= 4 * 30);
}

#[test]
fn aggregates_are_exact_means() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&spec(tmp.path(), vec![4, 5, 6], 2, 40)).unwrap();
    for a in &report.aggregates {
        let vals: Vec<f64> = report.seeds.iter().map(|s| s.rounds[a.round as usize].progression as f64).collect();
        let p = a.progression.unwrap();
        assert_eq!(p.mean, vals.iter().sum::<f64>() / 3.0);
        assert_eq!(p.min, vals.iter().copied().fold(f64::INFINITY, f64::min));
    }
    assert_eq!(recompute_report(tmp.path()).unwrap(), report);
}

#[test]
fn recompute_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&spec(tmp.path(), vec![1], 2, 20)).unwrap();
    let p = tmp.path().join("seed-1/rounds.json");
    let text = fs::read_to_string(&p).unwrap().replacen("\"round\": 1", "\"round\": 9", 1);
    fs::write(&p, text).unwrap();
    assert!(recompute_report(tmp.path()).is_err());
    assert!(recompute_report(&tmp.path().join("missing")).is_err());
}

#[test]
fn greedy_selector_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = spec(tmp.path(), vec![1], 1, 20);
    s.engine.mcts_on = false;
    let report = run_experiment(&s).unwrap();
    assert!(!report.config.engine.mcts_on);
    assert_eq!(report.config.selector, "greedy");
    let text = fs::read_to_string(tmp.path().join("report.json")).unwrap();
    assert!(text.contains("\"mcts_on\": false"));
}

#[test]
fn resume_starts_from_stored_library() {
    let tmp = tempfile::tempdir().unwrap();
    let store = LibraryStore::new(EnvId::MicroSpire);
    for i in 0..59u16 {
        let mut s = Skill::new(SkillId::new(format!("old-{i}")), vec![AtomicAction::click(i % 24, i / 24)], None).unwrap();
        s.descriptor = format!("old routine {i}");
        store.insert(&s, 0);
    }
    let lib = tmp.path().join("lib.jsonl");
    store.save(&lib).unwrap();
    let mut s = spec(&tmp.path().join("out"), vec![3], 2, 10);
    s.library = Some(lib.clone());
    let report = run_experiment(&s).unwrap();
    assert_eq!(report.seeds[0].rounds[0].library_size_start, 59);
    assert_eq!(report.config.resumed_from.as_deref(), Some(lib.display().to_string().as_str()));
}

#[test]
fn bad_inputs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"schema_version\":1}\nnot json\n").unwrap();
    let mut s = spec(&tmp.path().join("out"), vec![1], 1, 5);
    s.library = Some(bad);
    assert!(run_experiment(&s).is_err());

    let other = tmp.path().join("other.jsonl");
    LibraryStore::new(EnvId::ButtonWorld).save(&other).unwrap();
    s.library = Some(other);
    assert!(matches!(run_experiment(&s), Err(HarnessError::Invalid(_))));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let s = spec(&blocker.join("out"), vec![1], 1, 5);
    assert!(matches!(run_experiment(&s), Err(HarnessError::Io { .. })));
}

#[test]
fn shared_library_loses_no_executions() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = spec(tmp.path(), vec![0, 1, 2, 3], 2, 60);
    s.shared_library = true;
    let out = execute(&s).unwrap();
    let shared = out.shared.as_ref().unwrap();
    let recorded: u64 = out.runs.iter().map(|r| r.recorded_executions()).sum();
    assert!(recorded > 0);
    assert_eq!(shared.total_own_executions(), recorded);
    write_outputs(&out, tmp.path(), &Timing { wall_clock_ms: 0, parallel: false }).unwrap();
    assert!(tmp.path().join("library.jsonl").exists());
    assert!(!tmp.path().join("seed-0/library.jsonl").exists());
}

#[test]
fn plot_data_clamps_and_handles_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let mut report = run_experiment(&spec(&tmp.path().join("run"), vec![1], 1, 5)).unwrap();
    report.skill_invocations = (0..6).map(|i| (SkillId::new(format!("k{i}")), 10 - i)).collect();
    let dir = tmp.path().join("plots");
    emit_plot_data(&report, &dir).unwrap();
    let top = fs::read_to_string(dir.join("top_skills.csv")).unwrap();
    assert_eq!(top.lines().count(), 7);
    assert_eq!(top.lines().nth(1), Some("1,k0,10"));
    assert_eq!(top_skills(&report, 3).len(), 3);

    report.seeds.clear();
    report.aggregates.clear();
    report.skill_invocations.clear();
    let empty = tmp.path().join("empty");
    for p in emit_plot_data(&report, &empty).unwrap() {
        assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1);
    }
}

#[test]
fn replay_reexecutes_stored_actions() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&spec(tmp.path(), vec![2], 1, 40)).unwrap();
    let lib = bottomup::store::LibrarySnapshot::load(tmp.path().join("seed-2/library.jsonl")).unwrap();
    let rec = lib.live().next().expect("round left some skills");
    let tr = replay(&lib, &rec.id, EnvId::MicroSpire, 2).unwrap();
    assert!(tr.len() <= rec.actions.len());
    assert_eq!(tr.per_step_diffs.len(), tr.len());
    assert!(replay(&lib, &SkillId::new("nope"), EnvId::MicroSpire, 2).is_err());
}

#[test]
fn engine_config_comes_from_spec() {
    let s = spec(Path::new("x"), vec![9], 3, 17);
    let c = s.engine_config(9);
    assert_eq!((c.rounds, c.steps_per_round, c.seed), (3, 17, 9));
    assert_eq!(c.k_max, EngineConfig::default().k_max);
}
