use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::{Observation, ProgressDelta};
use crate::skill::{parse_actions, IdGen, Skill, SkillId, Trajectory};

use super::scripted::ScriptedOracle;
use super::{
    summaries_text, ObservationDigest, PriceTable, Reasoner, ReasonerError, ReasonerUsage,
    RefineOutcome, Role, RoleTemplate, SkillSummary, Slots, UsageMeter,
};

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub prices: PriceTable,
    pub max_tokens: u32,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            retries: DEFAULT_RETRIES,
            prices: PriceTable::default(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    role: Role,
    template_id: &'a str,
    slots: &'a Slots,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    content: String,
    tokens_in: u64,
    tokens_out: u64,
}

/// HTTP client for an external model. Responses are validated; anything
/// malformed is counted as a failed call and the scripted rule answers
/// instead.
pub struct RemoteModel {
    config: RemoteConfig,
    agent: ureq::Agent,
    meter: UsageMeter,
}

impl RemoteModel {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        let meter = UsageMeter::new(config.prices);
        RemoteModel { config, agent, meter }
    }

    fn post(&self, role: Role, slots: &Slots) -> Result<WireResponse, ReasonerError> {
        let template = RoleTemplate::for_role(role);
        let body = WireRequest {
            role,
            template_id: template.template_id,
            slots,
            max_tokens: self.config.max_tokens,
        };
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            match self.agent.post(&self.config.url).send_json(&body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<WireResponse>()
                        .map_err(|e| ReasonerError::Protocol(format!("bad response body: {e}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(ReasonerError::Transport(last))
    }

    /// One round trip plus validation. Usage is recorded whatever happens.
    fn call<T>(
        &self,
        role: Role,
        slots: Slots,
        parse: impl FnOnce(&str) -> Result<T, ReasonerError>,
    ) -> Result<T, ReasonerError> {
        match self.post(role, &slots) {
            Ok(resp) => {
                let parsed = parse(resp.content.trim());
                self.meter.record(role, resp.tokens_in, resp.tokens_out, parsed.is_err());
                parsed
            }
            Err(e) => {
                self.meter.record(role, 0, 0, true);
                Err(e)
            }
        }
    }

    pub fn try_select(
        &self,
        digest: &ObservationDigest,
        library: &[SkillSummary],
    ) -> Result<Vec<SkillId>, ReasonerError> {
        let slots = Slots {
            observation_digest: digest.to_text(),
            skill_summaries: summaries_text(library),
            trajectory_digest: String::new(),
        };
        self.call(Role::Select, slots, |content| {
            let ids: Vec<String> = serde_json::from_str(content)
                .map_err(|e| ReasonerError::Protocol(format!("select: {e}")))?;
            let known: BTreeSet<&str> = library.iter().map(|s| s.id.as_str()).collect();
            let mut out = Vec::new();
            for id in ids {
                if !known.contains(id.as_str()) {
                    return Err(ReasonerError::Protocol(format!("select: unknown id `{id}`")));
                }
                let id = SkillId::new(id);
                if !out.contains(&id) {
                    out.push(id);
                }
            }
            Ok(out)
        })
    }

    pub fn try_describe(
        &self,
        obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
    ) -> Result<String, ReasonerError> {
        if trajectory.is_empty() {
            return Err(ReasonerError::EmptyTrajectory);
        }
        let slots = Slots {
            observation_digest: ObservationDigest::of(obs).to_text(),
            skill_summaries: format!("{} [{}]", skill.id, skill.action_string()),
            trajectory_digest: trajectory_text(trajectory),
        };
        self.call(Role::Describe, slots, |content| {
            if content.is_empty() {
                Err(ReasonerError::Protocol("describe: empty text".into()))
            } else {
                Ok(content.to_string())
            }
        })
    }

    pub fn try_differ(
        &self,
        skill: &Skill,
        before: &Observation,
        after: &Observation,
    ) -> Result<f64, ReasonerError> {
        let slots = Slots {
            observation_digest: ObservationDigest::of(before).to_text(),
            skill_summaries: format!("{} [{}] {}", skill.id, skill.action_string(), skill.descriptor),
            trajectory_digest: ObservationDigest::of(after).to_text(),
        };
        self.call(Role::Differ, slots, |content| {
            let v: f64 = content
                .parse()
                .map_err(|_| ReasonerError::Protocol(format!("differ: `{content}` is not a number")))?;
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(ReasonerError::Protocol(format!("differ: {v} outside [0,1]")))
            }
        })
    }

    pub fn try_refine(
        &self,
        obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
        library: &[SkillSummary],
        ids: &IdGen,
    ) -> Result<RefineOutcome, ReasonerError> {
        let Some(_) = library.iter().find(|s| s.id == skill.id) else {
            return Err(ReasonerError::UnknownSkill(skill.id.clone()));
        };
        let slots = Slots {
            observation_digest: ObservationDigest::of(obs).to_text(),
            skill_summaries: format!("{} [{}] {}", skill.id, skill.action_string(), skill.descriptor),
            trajectory_digest: trajectory_text(trajectory),
        };
        let actions = self.call(Role::Refine, slots, |content| {
            if content == "NO_IMPROVEMENT" {
                return Ok(None);
            }
            let actions = parse_actions(content)
                .map_err(|e| ReasonerError::Protocol(format!("refine: {e}")))?;
            let bounds = obs.bounds();
            for a in &actions {
                a.validate(bounds)
                    .map_err(|e| ReasonerError::Protocol(format!("refine: {e}")))?;
            }
            // longer rewrites are not accepted yet
            if actions.is_empty() || actions.len() > skill.len() {
                return Err(ReasonerError::Protocol("refine: length out of range".into()));
            }
            Ok(Some(actions))
        })?;
        let Some(actions) = actions else {
            return Ok(RefineOutcome::NoImprovement);
        };
        if actions == skill.actions() {
            return Ok(RefineOutcome::NoImprovement);
        }
        let prefix = crate::skill::actions_to_string(&actions[..actions.len() - 1]);
        let parent = (actions.len() > 1)
            .then(|| library.iter().find(|s| s.actions == prefix))
            .flatten()
            .map(|s| s.id.clone());
        Ok(RefineOutcome::Refined(Skill::new(ids.fresh(), actions, parent)?))
    }

    pub fn try_cluster(&self, summaries: &[SkillSummary]) -> Result<Vec<Vec<SkillId>>, ReasonerError> {
        let slots = Slots {
            observation_digest: String::new(),
            skill_summaries: summaries_text(summaries),
            trajectory_digest: String::new(),
        };
        self.call(Role::Cluster, slots, |content| {
            let groups: Vec<Vec<String>> = serde_json::from_str(content)
                .map_err(|e| ReasonerError::Protocol(format!("cluster: {e}")))?;
            let known: BTreeSet<&str> = summaries.iter().map(|s| s.id.as_str()).collect();
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for g in groups {
                let mut g: Vec<SkillId> = g.into_iter().map(SkillId::new).collect();
                g.sort();
                g.dedup();
                for id in &g {
                    if !known.contains(id.as_str()) || !seen.insert(id.clone()) {
                        return Err(ReasonerError::Protocol(format!("cluster: bad member `{id}`")));
                    }
                }
                if g.len() > 1 {
                    out.push(g);
                }
            }
            out.sort();
            Ok(out)
        })
    }
}

fn trajectory_text(t: &Trajectory) -> String {
    let diffs: Vec<String> = t.per_step_diffs.iter().map(|d| format!("{d:.4}")).collect();
    format!(
        "step diffs: [{}]\nfinal screen:\n{}",
        diffs.join(", "),
        ObservationDigest::of(t.last()).to_text()
    )
}

impl Reasoner for RemoteModel {
    fn select(
        &self,
        digest: &ObservationDigest,
        library: &[SkillSummary],
    ) -> Result<Vec<SkillId>, ReasonerError> {
        Ok(self
            .try_select(digest, library)
            .unwrap_or_else(|_| ScriptedOracle::select_rule(digest, library)))
    }

    fn describe(
        &self,
        obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
    ) -> Result<String, ReasonerError> {
        match self.try_describe(obs, skill, trajectory) {
            Err(ReasonerError::EmptyTrajectory) => Err(ReasonerError::EmptyTrajectory),
            Err(_) => ScriptedOracle::describe_rule(skill, trajectory),
            ok => ok,
        }
    }

    fn differ(
        &self,
        skill: &Skill,
        before: &Observation,
        after: &Observation,
        progress: ProgressDelta,
    ) -> Result<f64, ReasonerError> {
        match self.try_differ(skill, before, after) {
            Ok(v) => Ok(v),
            Err(_) => Ok(super::differ_rubric(before, after, progress)?),
        }
    }

    fn refine(
        &self,
        obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
        library: &[SkillSummary],
        ids: &IdGen,
    ) -> Result<RefineOutcome, ReasonerError> {
        match self.try_refine(obs, skill, trajectory, library, ids) {
            Err(ReasonerError::UnknownSkill(id)) => Err(ReasonerError::UnknownSkill(id)),
            Err(_) => ScriptedOracle::refine_rule(skill, trajectory, library, ids),
            ok => ok,
        }
    }

    fn cluster(&self, summaries: &[SkillSummary]) -> Result<Vec<Vec<SkillId>>, ReasonerError> {
        Ok(self
            .try_cluster(summaries)
            .unwrap_or_else(|_| ScriptedOracle::cluster_rule(summaries)))
    }

    fn usage(&self) -> ReasonerUsage {
        self.meter.snapshot()
    }
}
