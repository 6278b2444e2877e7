use std::collections::BTreeMap;
use std::thread;

use bottomup::env::EnvId;
use bottomup::skill::{AtomicAction, Embedding, Fingerprint, Skill, SkillId, EMBED_DIM};
use bottomup::store::{
    Contribution, LibrarySnapshot, LibraryStore, SkillRecord, StoreError, Tombstone, TombstoneReason,
};
use proptest::prelude::*;

const IDS: usize = 6;

fn actions_for(i: usize) -> Vec<AtomicAction> {
    (0..=i % 3).map(|j| AtomicAction::click(i as u16, j as u16)).collect()
}

fn contribution() -> impl Strategy<Value = Contribution> {
    (0u64..20, 0u64..20, 0u32..100).prop_map(|(e, r, s)| Contribution {
        executions: e,
        responsive_executions: r.min(e),
        semantics_sum: s as f64 / 7.0,
        semantics_count: e,
    })
}

fn record(i: usize) -> impl Strategy<Value = SkillRecord> {
    (
        1u64..8,
        prop::option::of((0u64..8, any::<bool>())),
        prop::collection::btree_map("[ab]@[01]", contribution(), 0..3),
        0usize..3,
        any::<u64>(),
        -3.0f64..3.0,
    )
        .prop_map(move |(version, tomb, contributions, desc, origin, reward)| {
            let actions = actions_for(i);
            let mut raw = vec![0.0; EMBED_DIM];
            raw[desc] = 1.0;
            SkillRecord {
                id: SkillId::new(format!("s{i}")),
                fingerprint: Fingerprint::of(&actions),
                actions,
                descriptor: format!("descriptor {desc}"),
                embedding: Embedding::normalized(raw),
                parent_id: (i > 0 && desc == 1).then(|| SkillId::new(format!("s{}", i - 1))),
                origin_hash: origin,
                last_total_reward: reward,
                contributions,
                version,
                tombstone: tomb.map(|(at, merged)| Tombstone {
                    at_version: at.min(version),
                    reason: if merged { TombstoneReason::Merged } else { TombstoneReason::Pruned },
                    merged_into: merged.then(|| SkillId::new("s0")),
                }),
            }
        })
}

fn snapshot() -> impl Strategy<Value = LibrarySnapshot> {
    let recs: Vec<_> = (0..IDS).map(|i| prop::option::of(record(i))).collect();
    recs.prop_map(|rs| {
        let records: BTreeMap<SkillId, SkillRecord> =
            rs.into_iter().flatten().map(|r| (r.id.clone(), r)).collect();
        let mut s = LibrarySnapshot::empty(EnvId::MicroSpire);
        s.global_version = records.values().map(|r| r.version).max().unwrap_or(0);
        s.records = records;
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn merge_is_commutative(a in snapshot(), b in snapshot()) {
        prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
    }

    #[test]
    fn merge_is_associative(a in snapshot(), b in snapshot(), c in snapshot()) {
        let left = a.merge(&b).unwrap().merge(&c).unwrap();
        let right = a.merge(&b.merge(&c).unwrap()).unwrap();
        prop_assert_eq!(left, right);
    }

    #[test]
    fn merge_is_idempotent(a in snapshot(), b in snapshot()) {
        prop_assert_eq!(a.merge(&a).unwrap(), a.clone());
        let ab = a.merge(&b).unwrap();
        prop_assert_eq!(ab.merge(&b).unwrap(), ab);
    }

    #[test]
    fn merge_keeps_tombstones_and_counts(a in snapshot(), b in snapshot()) {
        let m = a.merge(&b).unwrap();
        prop_assert!(m.global_version >= a.global_version.max(b.global_version));
        for input in [&a, &b] {
            for (id, r) in &input.records {
                let merged = &m.records[id];
                if !r.is_live() {
                    prop_assert!(!merged.is_live());
                }
                prop_assert!(merged.stats().executions >= r.stats().executions);
                prop_assert!(merged.stats().semantics_count >= r.stats().semantics_count);
                prop_assert!(merged.version >= r.version);
            }
        }
    }

    #[test]
    fn save_load_round_trip(a in snapshot()) {
        let text = a.to_jsonl();
        let back = LibrarySnapshot::from_jsonl(&text, "mem").unwrap();
        prop_assert_eq!(&back, &a);
        prop_assert_eq!(back.to_jsonl(), text);
    }
}

#[test]
fn merge_with_empty_is_identity() {
    let store = LibraryStore::new(EnvId::MicroSpire);
    for i in 0..4 {
        store.insert(&Skill::new(SkillId::new(format!("k{i}")), actions_for(i), None).unwrap(), i as u64);
    }
    let a = store.snapshot();
    assert_eq!(a.merge(&LibrarySnapshot::empty(EnvId::MicroSpire)).unwrap(), a);
}

#[test]
fn merge_rejects_schema_mismatch() {
    let a = LibrarySnapshot::empty(EnvId::MicroSpire);
    let mut b = a.clone();
    b.schema_version = 2;
    assert!(matches!(a.merge(&b), Err(StoreError::SchemaMismatch(1, 2))));
}

fn populated() -> LibraryStore {
    let store = LibraryStore::new(EnvId::MicroSpire);
    let h = store.handle("agent0");
    for i in 0..5 {
        let id = store.insert(&Skill::new(SkillId::new(format!("k{i}")), actions_for(i), None).unwrap(), 7);
        for j in 0..i {
            h.record_execution(&id, j % 2 == 0, 0.1 * j as f64, 1.5).unwrap();
        }
    }
    store.prune(&SkillId::new("k1"), TombstoneReason::Pruned).unwrap();
    store
}

#[test]
fn save_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let store = populated();
    let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    store.save(&p1).unwrap();
    store.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(LibrarySnapshot::load(&p1).unwrap(), store.snapshot());
}

#[test]
fn truncated_file_names_failing_record() {
    let text = populated().snapshot().to_jsonl();
    let lines: Vec<&str> = text.lines().collect();
    // header + 5 records; cut the fourth record (index 3) in half
    let cut = &lines[4][..lines[4].len() / 2];
    let truncated = format!("{}\n{}\n", lines[..4].join("\n"), cut);
    match LibrarySnapshot::from_jsonl(&truncated, "lib.jsonl") {
        Err(e @ StoreError::Parse { record: Some(3), line: 5, .. }) => {
            assert!(e.to_string().contains("record 3"), "{e}");
        }
        other => panic!("unexpected {other:?}"),
    }
    let dropped = format!("{}\n", lines[..4].join("\n"));
    assert!(matches!(
        LibrarySnapshot::from_jsonl(&dropped, "lib.jsonl"),
        Err(StoreError::Parse { record: Some(3), .. })
    ));
}

#[test]
fn concurrent_agents_never_lose_updates() {
    let store = LibraryStore::new(EnvId::MicroSpire);
    let ids: Vec<SkillId> = (0..3)
        .map(|i| store.insert(&Skill::new(SkillId::new(format!("k{i}")), actions_for(i), None).unwrap(), 0))
        .collect();
    let per_agent = 250u64;
    let handles: Vec<_> = (0..4)
        .map(|a| {
            let h = store.handle(&format!("agent{a}"));
            let ids = ids.clone();
            thread::spawn(move || {
                for n in 0..per_agent {
                    let id = &ids[(n as usize + a) % ids.len()];
                    h.record_execution(id, n % 3 == 0, 0.5, 1.0).unwrap();
                    if n % 50 == 0 {
                        let s = Skill::new(SkillId::new(format!("x{a}-{n}")), actions_for(a + 3), None).unwrap();
                        h.insert(&s, n);
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let snap = store.snapshot();
    assert_eq!(snap.total_own_executions(), 4 * per_agent);
    // one live record per fingerprint despite racing inserts
    let mut fps: Vec<_> = snap.live().map(|r| r.fingerprint).collect();
    let n = fps.len();
    fps.sort_by_key(|f| f.to_hex());
    fps.dedup();
    assert_eq!(fps.len(), n);
}

#[test]
fn tombstoned_records_stay_dead() {
    let store = populated();
    let dead = SkillId::new("k1");
    let other = LibraryStore::from_snapshot(store.snapshot());
    store.merge_in(&populated().snapshot()).unwrap();
    other.merge_in(&store.snapshot()).unwrap();
    assert!(!store.is_live(&dead));
    assert!(!other.is_live(&dead));
    // reinsertion creates a new incarnation
    let again = store.insert(&Skill::new(SkillId::new("k1b"), actions_for(1), None).unwrap(), 0);
    assert_eq!(again, SkillId::new("k1b"));
}
