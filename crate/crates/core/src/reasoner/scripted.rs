use std::collections::{BTreeMap, BTreeSet};

use crate::env::{palette, Observation, ProgressDelta};
use crate::grounding::{role_name, segment, UIElement};
use crate::skill::{actions_to_string, AtomicAction, GridPoint, IdGen, Skill, SkillId, Trajectory};

use super::{
    differ_rubric, salient_roles, ObservationDigest, PriceTable, Reasoner, ReasonerError,
    ReasonerUsage, RefineOutcome, Role, SkillSummary, UsageMeter, CLUSTER_COSINE, NO_EFFECT,
    SELECT_CAP,
};

/// Deterministic rule-based reasoner. Every call is counted; tokens are 0.
#[derive(Debug, Default)]
pub struct ScriptedOracle {
    meter: UsageMeter,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        ScriptedOracle {
            meter: UsageMeter::new(PriceTable::default()),
        }
    }

    pub(crate) fn select_rule(digest: &ObservationDigest, library: &[SkillSummary]) -> Vec<SkillId> {
        let roles = digest.roles();
        let mut by_hash = Vec::new();
        let mut by_role = Vec::new();
        for s in library {
            if s.origin_hash == digest.state_hash {
                by_hash.push(s);
            } else if !salient_roles(&s.descriptor).is_disjoint(&roles) {
                by_role.push(s);
            }
        }
        let order = |a: &&SkillSummary, b: &&SkillSummary| {
            let ma = a.mean_semantics.unwrap_or(f64::NEG_INFINITY);
            let mb = b.mean_semantics.unwrap_or(f64::NEG_INFINITY);
            mb.total_cmp(&ma).then_with(|| a.id.cmp(&b.id))
        };
        by_hash.sort_by(order);
        by_role.sort_by(order);
        by_hash
            .into_iter()
            .chain(by_role)
            .take(SELECT_CAP)
            .map(|s| s.id.clone())
            .collect()
    }

    pub(crate) fn describe_rule(skill: &Skill, trajectory: &Trajectory) -> Result<String, ReasonerError> {
        if trajectory.is_empty() {
            return Err(ReasonerError::EmptyTrajectory);
        }
        if trajectory.per_step_diffs.iter().all(|d| *d == 0.0) {
            return Ok(NO_EFFECT.to_string());
        }
        let steps: Vec<String> = skill
            .actions()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let state = trajectory.state_before_step(i.min(trajectory.len() - 1));
                action_phrase(a, &segment(state))
            })
            .collect();
        let effects = effect_phrases(&trajectory.before, trajectory.last());
        let effects = if effects.is_empty() {
            "changes view".to_string()
        } else {
            effects.join("; ")
        };
        Ok(format!("{}; {}", steps.join(", "), effects))
    }

    pub(crate) fn refine_rule(
        skill: &Skill,
        trajectory: &Trajectory,
        library: &[SkillSummary],
        ids: &IdGen,
    ) -> Result<RefineOutcome, ReasonerError> {
        if !library.iter().any(|s| s.id == skill.id) {
            return Err(ReasonerError::UnknownSkill(skill.id.clone()));
        }
        let diffs = &trajectory.per_step_diffs;
        let keep = diffs.iter().rposition(|d| *d != 0.0).map_or(0, |i| i + 1);
        let keep = keep.min(skill.len());
        if keep == 0 || keep == skill.len() {
            return Ok(RefineOutcome::NoImprovement);
        }
        let actions = skill.actions()[..keep].to_vec();
        let parent = (keep > 1)
            .then(|| actions_to_string(&actions[..keep - 1]))
            .and_then(|prefix| library.iter().find(|s| s.actions == prefix))
            .map(|s| s.id.clone());
        Ok(RefineOutcome::Refined(Skill::new(ids.fresh(), actions, parent)?))
    }

    pub(crate) fn cluster_rule(summaries: &[SkillSummary]) -> Vec<Vec<SkillId>> {
        let n = summaries.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&summaries[i], &summaries[j]);
                if a.kind_signature != b.kind_signature {
                    continue;
                }
                let cos = a.embedding.cosine(&b.embedding).unwrap_or(0.0);
                if cos >= CLUSTER_COSINE {
                    let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<SkillId>> = BTreeMap::new();
        for (i, s) in summaries.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(s.id.clone());
        }
        let mut out: Vec<Vec<SkillId>> = groups
            .into_values()
            .filter(|g| g.len() > 1)
            .map(|mut g| {
                g.sort();
                g.dedup();
                g
            })
            .filter(|g| g.len() > 1)
            .collect();
        out.sort();
        out
    }
}

fn element_at(elements: &[UIElement], p: GridPoint) -> Option<&UIElement> {
    elements.iter().find(|e| e.contains(p))
}

fn action_phrase(action: &AtomicAction, elements: &[UIElement]) -> String {
    let handle = |p| element_at(elements, p).map_or("empty".to_string(), UIElement::token);
    match *action {
        AtomicAction::Click(p) => format!("click {}", handle(p)),
        AtomicAction::Drag { from, to } => {
            let target = element_at(elements, to).map_or("empty".to_string(), |e| role_name(e.color));
            format!("drag {} onto {}", handle(from), target)
        }
        AtomicAction::Key(k) => format!("press {}", k.name()),
        AtomicAction::Wait(_) => "wait".to_string(),
    }
}

/// Digits inside an element read row-major as one number.
fn element_value(obs: &Observation, e: &UIElement) -> Option<u64> {
    let (c0, r0, c1, r1) = e.bbox;
    let mut value: Option<u64> = None;
    for row in r0..=r1 {
        for col in c0..=c1 {
            if let Some(d) = palette::glyph_digit(obs.cell(col, row).glyph) {
                value = Some(value.unwrap_or(0).saturating_mul(10).saturating_add(d as u64));
            }
        }
    }
    value
}

fn effect_phrases(before: &Observation, after: &Observation) -> Vec<String> {
    let a: Vec<UIElement> = segment(before);
    let b: Vec<UIElement> = segment(after);
    let b_tokens: BTreeMap<String, &UIElement> = b.iter().map(|e| (e.token(), e)).collect();
    let a_tokens: BTreeSet<String> = a.iter().map(UIElement::token).collect();
    let mut out = Vec::new();
    for e in &a {
        let role = role_name(e.color);
        match b_tokens.get(&e.token()) {
            None => out.push(format!("removes {role}")),
            Some(other) => {
                if other.signature == e.signature && other.bbox == e.bbox {
                    continue;
                }
                match (element_value(before, e), element_value(after, other)) {
                    (Some(x), Some(y)) if y < x => out.push(format!("reduces {role} value")),
                    (Some(x), Some(y)) if y > x => out.push(format!("raises {role} value")),
                    _ => out.push(format!("changes {role}")),
                }
            }
        }
    }
    for e in &b {
        if !a_tokens.contains(&e.token()) {
            out.push(format!("adds {}", role_name(e.color)));
        }
    }
    out
}

impl Reasoner for ScriptedOracle {
    fn select(
        &self,
        digest: &ObservationDigest,
        library: &[SkillSummary],
    ) -> Result<Vec<SkillId>, ReasonerError> {
        self.meter.record(Role::Select, 0, 0, false);
        Ok(Self::select_rule(digest, library))
    }

    fn describe(
        &self,
        _obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
    ) -> Result<String, ReasonerError> {
        self.meter.record(Role::Describe, 0, 0, false);
        Self::describe_rule(skill, trajectory)
    }

    fn differ(
        &self,
        _skill: &Skill,
        before: &Observation,
        after: &Observation,
        progress: ProgressDelta,
    ) -> Result<f64, ReasonerError> {
        self.meter.record(Role::Differ, 0, 0, false);
        Ok(differ_rubric(before, after, progress)?)
    }

    fn refine(
        &self,
        _obs: &Observation,
        skill: &Skill,
        trajectory: &Trajectory,
        library: &[SkillSummary],
        ids: &IdGen,
    ) -> Result<RefineOutcome, ReasonerError> {
        self.meter.record(Role::Refine, 0, 0, false);
        Self::refine_rule(skill, trajectory, library, ids)
    }

    fn cluster(&self, summaries: &[SkillSummary]) -> Result<Vec<Vec<SkillId>>, ReasonerError> {
        self.meter.record(Role::Cluster, 0, 0, false);
        Ok(Self::cluster_rule(summaries))
    }

    fn usage(&self) -> ReasonerUsage {
        self.meter.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, observation_diff, spire_layout as layout, EnvId, Environment};
    use crate::reasoner::hash_embed;
    use crate::skill::{Embedding, Fingerprint};
    use proptest::prelude::*;

    fn run(env: &mut dyn Environment, actions: &[AtomicAction]) -> Trajectory {
        let before = env.observe();
        let p0 = env.progress();
        let mut after_states = Vec::new();
        let mut per_step_diffs = Vec::new();
        let mut prev = before.clone();
        for a in actions {
            let o = env.apply(a).unwrap();
            per_step_diffs.push(observation_diff(&prev, &o).unwrap());
            prev = o.clone();
            after_states.push(o);
        }
        Trajectory {
            before,
            after_states,
            per_step_diffs,
            progress_delta: p0.delta_to(&env.progress()),
        }
    }

    fn strike() -> AtomicAction {
        AtomicAction::drag(layout::HAND[0].center(), layout::ENEMY.center())
    }

    fn summary(id: &str, actions: &[AtomicAction], descriptor: &str, origin: u64) -> SkillSummary {
        let skill = Skill::new(SkillId::new(id), actions.to_vec(), None).unwrap();
        let mut s = SkillSummary::of(&skill, origin);
        s.descriptor = descriptor.to_string();
        s.embedding = hash_embed(descriptor);
        s
    }

    #[test]
    fn select_examples() {
        let env = make_env(EnvId::MicroSpire, 1);
        let digest = ObservationDigest::of(&env.observe());
        assert!(ScriptedOracle::select_rule(&digest, &[]).is_empty());

        let here = summary("a", &[AtomicAction::Wait(1)], "", digest.state_hash);
        let elsewhere = summary("b", &[AtomicAction::Wait(2)], "press enter; changes view", 7);
        let by_role = summary("c", &[strike()], "drag attack9x11 onto enemy; removes attack9x11", 7);
        let picked = ScriptedOracle::select_rule(&digest, &[elsewhere, by_role, here]);
        assert_eq!(picked, vec![SkillId::new("a"), SkillId::new("c")]);
    }

    #[test]
    fn select_caps_candidates() {
        let env = make_env(EnvId::MicroSpire, 1);
        let digest = ObservationDigest::of(&env.observe());
        let lib: Vec<_> = (0..12)
            .map(|i| summary(&format!("s{i:02}"), &[AtomicAction::Wait(i + 1)], "", digest.state_hash))
            .collect();
        assert_eq!(ScriptedOracle::select_rule(&digest, &lib).len(), SELECT_CAP);
    }

    #[test]
    fn describe_strike_mentions_enemy() {
        let mut env = make_env(EnvId::MicroSpire, 3);
        let skill = Skill::new(SkillId::new("s"), vec![strike()], None).unwrap();
        let traj = run(env.as_mut(), skill.actions());
        let d = ScriptedOracle::describe_rule(&skill, &traj).unwrap();
        assert!(d.contains("enemy"), "{d}");
        assert!(d.starts_with("drag attack9x11 onto enemy;"), "{d}");
        assert!(d.contains("reduces enemy value"), "{d}");
        assert_eq!(d, ScriptedOracle::describe_rule(&skill, &traj).unwrap());
    }

    #[test]
    fn describe_no_effect() {
        let mut env = make_env(EnvId::MicroSpire, 3);
        let skill = Skill::new(SkillId::new("s"), vec![AtomicAction::click(12, 6)], None).unwrap();
        let traj = run(env.as_mut(), skill.actions());
        assert_eq!(ScriptedOracle::describe_rule(&skill, &traj).unwrap(), NO_EFFECT);
        let empty = traj.truncated(0);
        assert!(matches!(
            ScriptedOracle::describe_rule(&skill, &empty),
            Err(ReasonerError::EmptyTrajectory)
        ));
    }

    #[test]
    fn slot_variants_cluster() {
        let mut a_env = make_env(EnvId::MicroSpire, 3);
        let mut b_env = make_env(EnvId::MicroSpire, 3);
        let second = AtomicAction::drag(layout::HAND[1].center(), layout::ENEMY.center());
        let a = Skill::new(SkillId::new("a"), vec![strike()], None).unwrap();
        let b = Skill::new(SkillId::new("b"), vec![second], None).unwrap();
        let da = ScriptedOracle::describe_rule(&a, &run(a_env.as_mut(), a.actions())).unwrap();
        let db = ScriptedOracle::describe_rule(&b, &run(b_env.as_mut(), b.actions())).unwrap();
        assert_eq!(da, "drag attack9x11 onto enemy; reduces enemy value; reduces energy value; removes attack");
        assert_eq!(db, "drag attack13x11 onto enemy; reduces enemy value; reduces energy value; removes attack");
        let cos = hash_embed(&da).cosine(&hash_embed(&db)).unwrap();
        assert!((cos - 0.9486832980505141).abs() < 1e-12, "{cos}");
        assert!(cos >= CLUSTER_COSINE);
    }

    #[test]
    fn refine_examples() {
        let ids = IdGen::new("r");
        let mut env = make_env(EnvId::MicroSpire, 3);
        let noop = AtomicAction::click(12, 6);
        let sigma = Skill::new(SkillId::new("x"), vec![strike(), noop], None).unwrap();
        let traj = run(env.as_mut(), sigma.actions());
        assert!(traj.per_step_diffs[0] > 0.0 && traj.per_step_diffs[1] == 0.0);
        let strike_only = Skill::new(SkillId::new("p"), vec![strike()], None).unwrap();
        let lib = [SkillSummary::of(&sigma, 0), SkillSummary::of(&strike_only, 0)];
        match ScriptedOracle::refine_rule(&sigma, &traj, &lib, &ids).unwrap() {
            RefineOutcome::Refined(s) => {
                assert_eq!(s.actions(), &[strike()]);
                assert_ne!(s.id, sigma.id);
                assert!(s.descriptor.is_empty());
            }
            RefineOutcome::NoImprovement => panic!("expected a refinement"),
        }

        let mut env = make_env(EnvId::MicroSpire, 3);
        let all_live = Skill::new(SkillId::new("y"), vec![strike()], None).unwrap();
        let traj = run(env.as_mut(), all_live.actions());
        let lib = [SkillSummary::of(&all_live, 0)];
        assert!(matches!(
            ScriptedOracle::refine_rule(&all_live, &traj, &lib, &ids).unwrap(),
            RefineOutcome::NoImprovement
        ));

        let mut env = make_env(EnvId::MicroSpire, 3);
        let dud = Skill::new(SkillId::new("z"), vec![noop], None).unwrap();
        let traj = run(env.as_mut(), dud.actions());
        let lib = [SkillSummary::of(&dud, 0)];
        assert!(matches!(
            ScriptedOracle::refine_rule(&dud, &traj, &lib, &ids).unwrap(),
            RefineOutcome::NoImprovement
        ));
        assert!(matches!(
            ScriptedOracle::refine_rule(&dud, &traj, &[], &ids),
            Err(ReasonerError::UnknownSkill(_))
        ));
    }

    #[test]
    fn refine_links_to_live_prefix() {
        let ids = IdGen::new("r");
        let mut env = make_env(EnvId::MicroSpire, 3);
        let noop = AtomicAction::click(12, 6);
        let end_turn = AtomicAction::click(layout::END_TURN.col0, layout::END_TURN.row0);
        let sigma = Skill::new(SkillId::new("x"), vec![strike(), end_turn, noop], None).unwrap();
        let traj = run(env.as_mut(), sigma.actions());
        let prefix = Skill::new(SkillId::new("p"), vec![strike()], None).unwrap();
        let lib = [SkillSummary::of(&sigma, 0), SkillSummary::of(&prefix, 0)];
        let RefineOutcome::Refined(s) = ScriptedOracle::refine_rule(&sigma, &traj, &lib, &ids).unwrap() else {
            panic!("expected a refinement");
        };
        assert_eq!(s.len(), 2);
        assert_eq!(s.parent_id, Some(SkillId::new("p")));
    }

    fn cs(id: &str, sig_actions: &[AtomicAction], emb: Embedding) -> SkillSummary {
        let skill = Skill::new(SkillId::new(id), sig_actions.to_vec(), None).unwrap();
        let mut s = SkillSummary::of(&skill, 0);
        s.embedding = emb;
        s
    }

    #[test]
    fn cluster_examples() {
        assert!(ScriptedOracle::cluster_rule(&[]).is_empty());
        let e = hash_embed("open thing");
        let a = cs("a", &[AtomicAction::click(1, 1)], e.clone());
        let b = cs("b", &[AtomicAction::click(2, 2)], e.clone());
        assert_eq!(
            ScriptedOracle::cluster_rule(&[a.clone(), b.clone()]),
            vec![vec![SkillId::new("a"), SkillId::new("b")]]
        );
        let mut x = vec![0.0; 64];
        x[0] = 1.0;
        let mut y = vec![0.0; 64];
        y[1] = 1.0;
        let c = cs("c", &[AtomicAction::click(1, 1)], Embedding::normalized(x));
        let d = cs("d", &[AtomicAction::click(2, 2)], Embedding::normalized(y));
        assert!(ScriptedOracle::cluster_rule(&[c, d]).is_empty());
        let k = cs("k", &[AtomicAction::Wait(1)], e);
        assert_eq!(ScriptedOracle::cluster_rule(&[a, k, b]).len(), 1);
    }

    #[test]
    fn scripted_usage_counts_calls() {
        let oracle = ScriptedOracle::new();
        let env = make_env(EnvId::MicroSpire, 1);
        let digest = ObservationDigest::of(&env.observe());
        for _ in 0..50 {
            oracle.select(&digest, &[]).unwrap();
        }
        let u = oracle.usage();
        assert_eq!(u.total_calls(), 50);
        assert_eq!(u.estimated_cost, 0.0);
        let _ = Fingerprint::of(&[AtomicAction::Wait(1)]);
    }

    fn arb_summary() -> impl Strategy<Value = SkillSummary> {
        (0u8..40, 0usize..3, prop::collection::vec(0u8..4, 3)).prop_map(|(id, kind, words)| {
            let action = match kind {
                0 => AtomicAction::click(1, 1),
                1 => AtomicAction::Wait(1),
                _ => AtomicAction::click(2, 3),
            };
            let text: Vec<&str> = words.iter().map(|w| ["up", "down", "left", "right"][*w as usize]).collect();
            cs(&format!("s{id:02}"), &[action], hash_embed(&text.join(" ")))
        })
    }

    proptest! {
        #[test]
        fn cluster_is_order_invariant_partition(mut v in prop::collection::vec(arb_summary(), 0..10)) {
            v.sort_by(|a, b| a.id.cmp(&b.id));
            v.dedup_by(|a, b| a.id == b.id);
            let groups = ScriptedOracle::cluster_rule(&v);
            let mut rev = v.clone();
            rev.reverse();
            prop_assert_eq!(&groups, &ScriptedOracle::cluster_rule(&rev));
            let mut seen = BTreeSet::new();
            for g in &groups {
                prop_assert!(g.len() >= 2);
                for id in g {
                    prop_assert!(seen.insert(id.clone()));
                }
            }
        }

        #[test]
        fn select_is_subset(n in 0usize..12, hash_hits in 0usize..12) {
            let env = make_env(EnvId::MicroSpire, 1);
            let digest = ObservationDigest::of(&env.observe());
            let lib: Vec<_> = (0..n)
                .map(|i| summary(&format!("s{i}"), &[AtomicAction::Wait(i as u32 + 1)], "click button21x7; changes view",
                    if i < hash_hits { digest.state_hash } else { 1 }))
                .collect();
            let picked = ScriptedOracle::select_rule(&digest, &lib);
            prop_assert!(picked.len() <= SELECT_CAP);
            for id in picked {
                prop_assert!(lib.iter().any(|s| s.id == id));
            }
        }
    }
}
