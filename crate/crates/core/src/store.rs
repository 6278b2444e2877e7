//! The shared skill library: dedup on insert, tombstones instead of deletes,
//! per-contributor counters that merge without coordination, and a canonical
//! JSON Lines file format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::EnvId;
use crate::reasoner::SkillSummary;
use crate::skill::{actions_to_string, parse_actions, AtomicAction, Embedding, ExecStats, Fingerprint, Skill, SkillId};

pub const SCHEMA_VERSION: u32 = 1;
const CREATED_AT: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown skill {0}")]
    UnknownSkill(SkillId),
    #[error("skill {0} is tombstoned")]
    Tombstoned(SkillId),
    #[error("schema version mismatch: {0} vs {1}")]
    SchemaMismatch(u32, u32),
    #[error("environment mismatch: {0} vs {1}")]
    EnvMismatch(EnvId, EnvId),
    #[error("{path}: line {line}{}: {message}", record.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Parse {
        path: String,
        line: usize,
        record: Option<usize>,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TombstoneReason {
    Pruned,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tombstone {
    pub at_version: u64,
    pub reason: TombstoneReason,
    pub merged_into: Option<SkillId>,
}

/// Grow-only counters written by one contributor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Contribution {
    pub executions: u64,
    pub responsive_executions: u64,
    pub semantics_sum: f64,
    pub semantics_count: u64,
}

impl Contribution {
    fn rank(&self) -> (u64, u64, u64, u64) {
        (
            self.executions,
            self.semantics_count,
            self.responsive_executions,
            self.semantics_sum.to_bits(),
        )
    }

    fn join(self, other: Contribution) -> Contribution {
        if other.rank() > self.rank() {
            other
        } else {
            self
        }
    }
}

/// Marks a contribution key as copied from a merged-away record.
const ABSORBED: char = '/';

#[derive(Debug, Clone, PartialEq)]
pub struct SkillRecord {
    pub id: SkillId,
    pub actions: Vec<AtomicAction>,
    pub fingerprint: Fingerprint,
    pub descriptor: String,
    pub embedding: Embedding,
    pub parent_id: Option<SkillId>,
    pub origin_hash: u64,
    pub last_total_reward: f64,
    pub contributions: BTreeMap<String, Contribution>,
    pub version: u64,
    pub tombstone: Option<Tombstone>,
}

impl SkillRecord {
    pub fn is_live(&self) -> bool {
        self.tombstone.is_none()
    }

    pub fn stats(&self) -> ExecStats {
        let mut s = ExecStats {
            last_total_reward: self.last_total_reward,
            ..ExecStats::default()
        };
        for c in self.contributions.values() {
            s.executions += c.executions;
            s.responsive_executions += c.responsive_executions;
            s.semantics_sum += c.semantics_sum;
            s.semantics_count += c.semantics_count;
        }
        s
    }

    /// Executions recorded directly on this record (not absorbed copies).
    pub fn own_executions(&self) -> u64 {
        self.contributions
            .iter()
            .filter(|(k, _)| !k.contains(ABSORBED))
            .map(|(_, c)| c.executions)
            .sum()
    }

    pub fn to_skill(&self) -> Skill {
        let mut s = Skill::new(self.id.clone(), self.actions.clone(), self.parent_id.clone())
            .expect("stored skills are non-empty");
        s.descriptor = self.descriptor.clone();
        s.embedding = self.embedding.clone();
        s.stats = self.stats();
        s
    }

    pub fn summary(&self) -> SkillSummary {
        SkillSummary::of(&self.to_skill(), self.origin_hash)
    }

    fn registers(&self) -> Value {
        json!({
            "actions": actions_to_string(&self.actions),
            "descriptor": self.descriptor,
            "embedding": self.embedding.as_slice(),
            "last_total_reward": self.last_total_reward,
            "origin_hash": format!("{:016x}", self.origin_hash),
            "parent_id": self.parent_id,
        })
    }

    /// Hash of the last-writer-wins fields, used to break version ties.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.registers().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn to_json(&self) -> Value {
        let mut v = self.registers();
        let m = v.as_object_mut().expect("object");
        m.insert("id".into(), json!(self.id));
        m.insert("fingerprint".into(), json!(self.fingerprint.to_hex()));
        m.insert("contributions".into(), json!(self.contributions));
        m.insert("version".into(), json!(self.version));
        m.insert("tombstone".into(), json!(self.tombstone));
        v
    }

    fn from_json(v: Value) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            id: SkillId,
            actions: String,
            fingerprint: String,
            descriptor: String,
            embedding: Vec<f64>,
            parent_id: Option<SkillId>,
            origin_hash: String,
            last_total_reward: f64,
            contributions: BTreeMap<String, Contribution>,
            version: u64,
            tombstone: Option<Tombstone>,
        }
        let raw: Raw = serde_json::from_value(v).map_err(|e| e.to_string())?;
        let actions = parse_actions(&raw.actions).map_err(|e| e.to_string())?;
        if actions.is_empty() {
            return Err("empty action list".into());
        }
        let fingerprint = Fingerprint::of(&actions);
        if fingerprint.to_hex() != raw.fingerprint {
            return Err(format!("fingerprint mismatch for {}", raw.id));
        }
        let origin_hash = u64::from_str_radix(&raw.origin_hash, 16).map_err(|e| e.to_string())?;
        if raw.embedding.len() != crate::skill::EMBED_DIM {
            return Err(format!("embedding has {} components", raw.embedding.len()));
        }
        Ok(SkillRecord {
            id: raw.id,
            actions,
            fingerprint,
            descriptor: raw.descriptor,
            embedding: Embedding::from_raw(raw.embedding),
            parent_id: raw.parent_id,
            origin_hash,
            last_total_reward: raw.last_total_reward,
            contributions: raw.contributions,
            version: raw.version,
            tombstone: raw.tombstone,
        })
    }

    fn join(&self, other: &SkillRecord) -> SkillRecord {
        let winner = match self.version.cmp(&other.version) {
            std::cmp::Ordering::Greater => self,
            std::cmp::Ordering::Less => other,
            std::cmp::Ordering::Equal => {
                if other.content_hash() < self.content_hash() {
                    other
                } else {
                    self
                }
            }
        };
        let mut out = winner.clone();
        for (k, c) in &other.contributions {
            let e = out.contributions.entry(k.clone()).or_default();
            *e = e.join(*c);
        }
        for (k, c) in &self.contributions {
            let e = out.contributions.entry(k.clone()).or_default();
            *e = e.join(*c);
        }
        out.tombstone = match (&self.tombstone, &other.tombstone) {
            (Some(a), Some(b)) => Some(a.clone().min(b.clone())),
            (Some(a), None) | (None, Some(a)) => Some(a.clone()),
            (None, None) => None,
        };
        out.version = self.version.max(other.version);
        out
    }
}

/// Immutable view of a whole library.
#[derive(Debug, Clone, PartialEq)]
pub struct LibrarySnapshot {
    pub schema_version: u32,
    pub env_id: EnvId,
    pub global_version: u64,
    pub records: BTreeMap<SkillId, SkillRecord>,
}

impl LibrarySnapshot {
    pub fn empty(env_id: EnvId) -> Self {
        LibrarySnapshot {
            schema_version: SCHEMA_VERSION,
            env_id,
            global_version: 0,
            records: BTreeMap::new(),
        }
    }

    pub fn live(&self) -> impl Iterator<Item = &SkillRecord> {
        self.records.values().filter(|r| r.is_live())
    }

    pub fn live_count(&self) -> usize {
        self.live().count()
    }

    /// Join of two replicas: union of records, contributions joined per key,
    /// tombstones win, other fields from the higher version.
    pub fn merge(&self, other: &LibrarySnapshot) -> Result<LibrarySnapshot, StoreError> {
        if self.schema_version != other.schema_version {
            return Err(StoreError::SchemaMismatch(self.schema_version, other.schema_version));
        }
        if self.env_id != other.env_id {
            return Err(StoreError::EnvMismatch(self.env_id, other.env_id));
        }
        let mut records = self.records.clone();
        for (id, r) in &other.records {
            let joined = match records.get(id) {
                Some(mine) => mine.join(r),
                None => r.clone(),
            };
            records.insert(id.clone(), joined);
        }
        Ok(LibrarySnapshot {
            schema_version: self.schema_version,
            env_id: self.env_id,
            global_version: self.global_version.max(other.global_version),
            records,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let header = json!({
            "created_at": CREATED_AT,
            "env_id": self.env_id,
            "global_version": self.global_version,
            "record_count": self.records.len(),
            "schema_version": self.schema_version,
        });
        let mut out = header.to_string();
        out.push('\n');
        for r in self.records.values() {
            out.push_str(&r.to_json().to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, path: &str) -> Result<LibrarySnapshot, StoreError> {
        let err = |line: usize, record: Option<usize>, message: String| StoreError::Parse {
            path: path.to_string(),
            line,
            record,
            message,
        };
        let mut lines = text.lines();
        let header: Value = serde_json::from_str(lines.next().ok_or_else(|| err(1, None, "missing header".into()))?)
            .map_err(|e| err(1, None, format!("bad header: {e}")))?;
        #[derive(Deserialize)]
        struct Header {
            #[allow(dead_code)]
            created_at: String,
            env_id: EnvId,
            global_version: u64,
            record_count: usize,
            schema_version: u32,
        }
        let h: Header = serde_json::from_value(header).map_err(|e| err(1, None, format!("bad header: {e}")))?;
        if h.schema_version != SCHEMA_VERSION {
            return Err(StoreError::SchemaMismatch(h.schema_version, SCHEMA_VERSION));
        }
        let mut records = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let v: Value = serde_json::from_str(line).map_err(|e| err(i + 2, Some(i), e.to_string()))?;
            let r = SkillRecord::from_json(v).map_err(|m| err(i + 2, Some(i), m))?;
            if records.insert(r.id.clone(), r).is_some() {
                return Err(err(i + 2, Some(i), "duplicate id".into()));
            }
        }
        if records.len() != h.record_count {
            return Err(err(
                records.len() + 2,
                Some(records.len()),
                format!("expected {} records, found {}", h.record_count, records.len()),
            ));
        }
        Ok(LibrarySnapshot {
            schema_version: h.schema_version,
            env_id: h.env_id,
            global_version: h.global_version,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LibrarySnapshot, StoreError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p)?;
        Self::from_jsonl(&text, &p.display().to_string())
    }

    /// Sum of executions recorded directly on every record.
    pub fn total_own_executions(&self) -> u64 {
        self.records.values().map(SkillRecord::own_executions).sum()
    }
}

/// In-process, internally serialized library shared by agent loops.
#[derive(Debug, Clone)]
pub struct LibraryStore {
    inner: Arc<Mutex<LibrarySnapshot>>,
}

impl LibraryStore {
    pub fn new(env_id: EnvId) -> Self {
        Self::from_snapshot(LibrarySnapshot::empty(env_id))
    }

    pub fn from_snapshot(snapshot: LibrarySnapshot) -> Self {
        LibraryStore {
            inner: Arc::new(Mutex::new(snapshot)),
        }
    }

    fn lock(&self) -> MutexGuard<'_, LibrarySnapshot> {
        self.inner.lock().expect("library lock poisoned")
    }

    /// A handle that records executions under `agent`. Counter epochs start
    /// past any epoch this agent already wrote, so resumed runs never reuse a
    /// contribution key.
    pub fn handle(&self, agent: &str) -> StoreHandle {
        let prefix = format!("{agent}@");
        let epoch = self
            .lock()
            .records
            .values()
            .flat_map(|r| r.contributions.keys())
            .filter(|k| !k.contains(ABSORBED))
            .filter_map(|k| k.strip_prefix(&prefix))
            .filter_map(|e| e.parse::<u64>().ok())
            .max()
            .map_or(0, |e| e + 1);
        StoreHandle {
            store: self.clone(),
            contributor: format!("{agent}@{epoch}"),
        }
    }

    pub fn snapshot(&self) -> LibrarySnapshot {
        self.lock().clone()
    }

    pub fn env_id(&self) -> EnvId {
        self.lock().env_id
    }

    pub fn live_count(&self) -> usize {
        self.lock().live_count()
    }

    pub fn live_records(&self) -> Vec<SkillRecord> {
        self.lock().live().cloned().collect()
    }

    pub fn live_summaries(&self) -> Vec<SkillSummary> {
        self.lock().live().map(SkillRecord::summary).collect()
    }

    pub fn get(&self, id: &SkillId) -> Option<SkillRecord> {
        self.lock().records.get(id).cloned()
    }

    pub fn is_live(&self, id: &SkillId) -> bool {
        self.lock().records.get(id).is_some_and(SkillRecord::is_live)
    }

    /// Returns the live id carrying this fingerprint, or stores a new record.
    pub fn insert(&self, skill: &Skill, origin_hash: u64) -> SkillId {
        let mut g = self.lock();
        let fp = skill.fingerprint();
        if let Some(r) = g.live().find(|r| r.fingerprint == fp) {
            return r.id.clone();
        }
        g.global_version += 1;
        let record = SkillRecord {
            id: skill.id.clone(),
            actions: skill.actions().to_vec(),
            fingerprint: fp,
            descriptor: skill.descriptor.clone(),
            embedding: skill.embedding.clone(),
            parent_id: skill.parent_id.clone(),
            origin_hash,
            last_total_reward: 0.0,
            contributions: BTreeMap::new(),
            version: g.global_version,
            tombstone: None,
        };
        g.records.insert(skill.id.clone(), record);
        skill.id.clone()
    }

    fn mutate<T>(
        &self,
        id: &SkillId,
        f: impl FnOnce(&mut SkillRecord) -> Result<Option<T>, StoreError>,
    ) -> Result<Option<T>, StoreError> {
        let mut g = self.lock();
        let next = g.global_version + 1;
        let r = g.records.get_mut(id).ok_or_else(|| StoreError::UnknownSkill(id.clone()))?;
        let before = r.version;
        let out = f(r)?;
        if out.is_some() {
            r.version = next;
            g.global_version = next;
        } else {
            debug_assert_eq!(before, r.version);
        }
        Ok(out)
    }

    pub fn prune(&self, id: &SkillId, reason: TombstoneReason) -> Result<(), StoreError> {
        self.tombstone(id, reason, None)
    }

    pub fn tombstone(
        &self,
        id: &SkillId,
        reason: TombstoneReason,
        merged_into: Option<SkillId>,
    ) -> Result<(), StoreError> {
        let mut g = self.lock();
        let next = g.global_version + 1;
        let r = g.records.get_mut(id).ok_or_else(|| StoreError::UnknownSkill(id.clone()))?;
        if r.tombstone.is_some() {
            return Ok(());
        }
        r.tombstone = Some(Tombstone {
            at_version: next,
            reason,
            merged_into,
        });
        r.version = next;
        g.global_version = next;
        Ok(())
    }

    /// Copies every contribution of `from` into `into` under absorbed keys.
    pub fn absorb(&self, into: &SkillId, from: &SkillId) -> Result<(), StoreError> {
        let source = self.get(from).ok_or_else(|| StoreError::UnknownSkill(from.clone()))?;
        self.mutate(into, |r| {
            if !r.is_live() {
                return Err(StoreError::Tombstoned(r.id.clone()));
            }
            for (k, c) in &source.contributions {
                let key = if k.contains(ABSORBED) {
                    k.clone()
                } else {
                    format!("{from}{ABSORBED}{k}")
                };
                let e = r.contributions.entry(key).or_default();
                *e = e.join(*c);
            }
            Ok(Some(()))
        })?;
        Ok(())
    }

    pub fn merge_in(&self, remote: &LibrarySnapshot) -> Result<(), StoreError> {
        let mut g = self.lock();
        let merged = g.merge(remote)?;
        *g = merged;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        self.snapshot().save(path)
    }
}

/// Per-agent view of a [`LibraryStore`].
#[derive(Debug, Clone)]
pub struct StoreHandle {
    store: LibraryStore,
    contributor: String,
}

impl StoreHandle {
    pub fn store(&self) -> &LibraryStore {
        &self.store
    }

    pub fn contributor(&self) -> &str {
        &self.contributor
    }

    pub fn record_execution(
        &self,
        id: &SkillId,
        responsive: bool,
        semantics: f64,
        total_reward: f64,
    ) -> Result<(), StoreError> {
        let key = self.contributor.clone();
        self.store.mutate(id, |r| {
            if !r.is_live() {
                return Err(StoreError::Tombstoned(r.id.clone()));
            }
            let c = r.contributions.entry(key).or_default();
            c.executions += 1;
            if responsive {
                c.responsive_executions += 1;
            }
            c.semantics_sum += semantics;
            c.semantics_count += 1;
            r.last_total_reward = total_reward;
            Ok(Some(()))
        })?;
        Ok(())
    }
}

impl std::ops::Deref for StoreHandle {
    type Target = LibraryStore;

    fn deref(&self) -> &LibraryStore {
        &self.store
    }
}
