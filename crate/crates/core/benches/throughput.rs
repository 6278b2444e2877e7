use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use bottomup::engine::{run_round, Agent, EngineConfig};
use bottomup::env::{make_env, spire_layout as layout, EnvId};
use bottomup::grounding::segment;
use bottomup::mcts::{search, SearchConfig};
use bottomup::parallel::par_map;
use bottomup::reasoner::{differ_rubric, ScriptedOracle};
use bottomup::skill::{AtomicAction, Skill, SkillId};
use bottomup::store::LibraryStore;

fn one_seed(seed: u64) -> u64 {
    let store = LibraryStore::new(EnvId::MicroSpire);
    let oracle = ScriptedOracle::new();
    let cfg = EngineConfig { seed, steps_per_round: 50, ..EngineConfig::default() };
    let mut agent = Agent::new(store.handle("b"), &oracle, cfg, "b");
    (0..2).map(|r| run_round(&mut agent, EnvId::MicroSpire, r).unwrap().telemetry.executions).sum()
}

fn seeds(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("seeds");
    g.sample_size(10);
    g.bench_function("par_map", |b| b.iter(|| par_map(black_box(&seeds), |&s| one_seed(s))));
    g.bench_function("sequential", |b| {
        b.iter(|| black_box(&seeds).iter().map(|&s| one_seed(s)).collect::<Vec<_>>())
    });
    g.finish();
}

fn mcts(c: &mut Criterion) {
    let env = make_env(EnvId::MicroSpire, 3);
    let snap = env.snapshot();
    let hand = layout::HAND;
    let candidates: Vec<Skill> = hand
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = AtomicAction::drag(r.center(), layout::ENEMY.center());
            Skill::new(SkillId::new(format!("c{i}")), vec![a], None).unwrap()
        })
        .chain(std::iter::once(
            Skill::new(SkillId::new("end"), vec![AtomicAction::click(22, 7)], None).unwrap(),
        ))
        .collect();
    let value = |a: &_, b: &_, d| differ_rubric(a, b, d).unwrap_or(0.0);
    let mut g = c.benchmark_group("mcts");
    for budget in [16u32, 64, 256] {
        let cfg = SearchConfig { budget, ..SearchConfig::default() };
        g.bench_with_input(BenchmarkId::from_parameter(budget), &cfg, |b, cfg| {
            b.iter(|| search(&snap, &candidates, cfg, &value).unwrap())
        });
    }
    g.finish();
}

fn segmentation(c: &mut Criterion) {
    let obs = make_env(EnvId::MicroSpire, 1).observe();
    c.bench_function("segment_microspire", |b| b.iter(|| segment(black_box(&obs))));
}

criterion_group!(benches, seeds, mcts, segmentation);
criterion_main!(benches);
