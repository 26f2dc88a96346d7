use std::collections::BTreeMap;
use std::time::Instant;

use super::{
    Check, Comparison, ConditionRecord, DemoSpec, ExperimentKind, ExperimentReport, ExperimentSpec,
    GroupResult, SeedManifest,
};
use crate::attention::{finetune_attention, train_attention, AttentionModel, TrainConfig};
use crate::error::{Error, Result};
use crate::metaattention::{FeatureBank, ProposerConfig};
use crate::policy::{
    behavior_clone, rollout, scene_labels, train_rl, BcConfig, Policy, RlConfig, RolloutContext,
    MISSING, UNLABELED,
};
use crate::simworld::{
    collect_demonstrations, observation_rng, observe, reset, run_episode, scripted_expert,
    ObjectPlacement, TaskSpec,
};
use crate::types::{Demonstration, FeatureVector};

/// Flag on conditions whose target never reaches the proposal set.
pub const NO_TARGET_FLAG: &str = "no-target-proposals";

/// Dispatches on the spec's kind. With `timed` the report records its
/// wall-clock duration.
pub fn run_experiment(spec: &ExperimentSpec, timed: bool) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = match spec.experiment_kind {
        ExperimentKind::InstanceGeneralization => run_instance_generalization(spec)?,
        ExperimentKind::DistractorNarrowing => run_distractor_narrowing(spec)?,
        ExperimentKind::ScopeBroadening => run_scope_broadening(spec)?,
        ExperimentKind::MultiObjectSweep => run_multi_object_sweep(spec)?,
    };
    if timed {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

fn expect_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    spec.validate()?;
    if spec.experiment_kind != kind {
        return Err(Error::invalid(format!(
            "spec is a {} experiment, not {}",
            spec.experiment_kind.as_str(),
            kind.as_str()
        )));
    }
    Ok(())
}

struct Repetition {
    seeds: BTreeMap<String, u64>,
    bank: FeatureBank,
}

impl Repetition {
    fn new(spec: &ExperimentSpec, index: usize) -> Result<Self> {
        let seeds = spec.repetition_seeds(index);
        let bank = spec.bank.build(seeds["bank"])?;
        Ok(Self { seeds, bank })
    }

    fn seed(&self, stage: &str) -> u64 {
        self.seeds[stage]
    }
}

/// Report under construction.
struct Builder<'a> {
    spec: &'a ExperimentSpec,
    groups: Vec<GroupResult>,
    w_unchanged: bool,
    proposal_range: [usize; 2],
}

impl<'a> Builder<'a> {
    fn new(spec: &'a ExperimentSpec) -> Self {
        Self {
            spec,
            groups: Vec::new(),
            w_unchanged: true,
            proposal_range: [usize::MAX, 0],
        }
    }

    /// Index of group `name`, created on first use.
    fn group(&mut self, name: &str, conditions: usize, relevant: &[String]) -> usize {
        if let Some(i) = self.groups.iter().position(|g| g.name == name) {
            return i;
        }
        self.groups.push(GroupResult {
            name: name.to_string(),
            conditions,
            records: Vec::new(),
            success: None,
            target_selection: None,
            distractor_selection: None,
            relevant_classes: relevant.to_vec(),
            confusion: Vec::new(),
        });
        self.groups.len() - 1
    }

    fn add(&mut self, group: usize, outcome: Outcome) {
        for n in outcome.proposed.iter().map(Vec::len) {
            self.proposal_range[0] = self.proposal_range[0].min(n);
            self.proposal_range[1] = self.proposal_range[1].max(n);
        }
        let g = &mut self.groups[group];
        for step in &outcome.labels {
            if g.confusion.len() < step.len() {
                g.confusion.resize(step.len(), BTreeMap::new());
            }
            for (row, label) in step.iter().enumerate() {
                *g.confusion[row].entry(label.clone()).or_insert(0) += 1;
            }
        }
        g.records.push(outcome.record);
    }

    fn rate(&self, name: &str, pick: fn(&GroupResult) -> Option<f64>) -> f64 {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .and_then(pick)
            .unwrap_or(f64::NAN)
    }

    fn finish(
        mut self,
        checks: impl FnOnce(&Self) -> Vec<(&'static str, f64, Comparison)>,
    ) -> ExperimentReport {
        for g in &mut self.groups {
            g.aggregate();
        }
        let checks = checks(&self)
            .into_iter()
            .filter_map(|(name, value, cmp)| {
                self.spec
                    .thresholds
                    .get(name)
                    .map(|&t| Check::new(name, value, cmp, t))
            })
            .collect();
        let spec = self.spec;
        if self.proposal_range[0] == usize::MAX {
            self.proposal_range = [0, 0];
        }
        ExperimentReport {
            spec: spec.clone(),
            seed_manifest: SeedManifest {
                master: spec.seed,
                train_conditions: spec.train_seeds.seeds(),
                eval_conditions: spec.eval_seeds.seeds(),
                repetitions: (0..spec.repetitions)
                    .map(|r| spec.repetition_seeds(r))
                    .collect(),
            },
            groups: self.groups,
            checks,
            w_unchanged: self.w_unchanged,
            proposal_range: self.proposal_range,
            wall_clock_seconds: None,
        }
    }
}

fn success_rate(g: &GroupResult) -> Option<f64> {
    g.success.map(|r| r.rate)
}

fn selection_rate(g: &GroupResult) -> Option<f64> {
    g.target_selection.map(|m| m.mean)
}

fn distractor_rate(g: &GroupResult) -> Option<f64> {
    g.distractor_selection.map(|m| m.mean)
}

/// One evaluated condition with its per-step attention labels.
struct Outcome {
    record: ConditionRecord,
    labels: Vec<Vec<String>>,
    /// Labels of all proposals per step.
    proposed: Vec<Vec<String>>,
}

/// Which selection statistics to derive from row 0.
#[derive(Clone, Copy)]
struct Scoring<'a> {
    target: Option<&'a str>,
    distractors: Option<&'a [String]>,
}

impl Scoring<'_> {
    const NONE: Scoring<'static> = Scoring {
        target: None,
        distractors: None,
    };

    /// Target selection counts only steps on which the target was proposed,
    /// since no attention can pick a proposal that is not there; it is
    /// absent if there were none. Distractor selection counts every step.
    fn record(
        &self,
        rep: usize,
        seed: u64,
        success: Option<bool>,
        labels: &[Vec<String>],
        proposed: &[Vec<String>],
    ) -> ConditionRecord {
        let target_selection = self.target.and_then(|t| {
            let visible: Vec<&Vec<String>> = labels
                .iter()
                .zip(proposed)
                .filter(|(_, p)| p.iter().any(|l| l == t))
                .map(|(l, _)| l)
                .collect();
            let hits = visible.iter().filter(|l| l[0] == t).count();
            (!visible.is_empty()).then(|| hits as f64 / visible.len() as f64)
        });
        let distractor_selection = self.distractors.map(|d| {
            let hits = labels.iter().filter(|l| d.contains(&l[0])).count();
            hits as f64 / labels.len().max(1) as f64
        });
        ConditionRecord {
            repetition: rep,
            condition_seed: seed,
            variant: None,
            success,
            target_selection,
            distractor_selection,
            flags: Vec::new(),
        }
    }
}

fn with_objects(task: &TaskSpec, extra: &[ObjectPlacement]) -> TaskSpec {
    let mut t = task.clone();
    t.objects.extend(extra.iter().cloned());
    t
}

fn with_relevant(task: &TaskSpec, edit: impl FnOnce(&mut ObjectPlacement)) -> TaskSpec {
    let mut t = task.clone();
    let i = t.relevant_objects()[0];
    edit(&mut t.objects[i]);
    t
}

fn demonstrations(
    task: &TaskSpec,
    seeds: &[u64],
    demo: &DemoSpec,
    bank: &FeatureBank,
    proposer: &ProposerConfig,
) -> Result<Vec<Demonstration>> {
    collect_demonstrations(
        task,
        demo.count,
        seeds,
        bank,
        proposer,
        demo.target_convention,
        demo.action_noise,
    )
}

/// Features of the first frame's proposals of the given classes, for
/// crop-initialized attention rows. `None` when no classes are given.
pub fn first_frame_crops(
    demos: &[Demonstration],
    classes: &[String],
) -> Result<Option<Vec<FeatureVector>>> {
    if classes.is_empty() {
        return Ok(None);
    }
    let scene = &demos
        .first()
        .and_then(|d| d.steps.first())
        .ok_or_else(|| Error::invalid("no demonstration frame to crop from"))?
        .scene;
    classes
        .iter()
        .map(|c| {
            scene
                .proposals()
                .iter()
                .find(|p| p.label.as_deref() == Some(c.as_str()))
                .map(|p| p.feature.clone())
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "first demonstration frame has no \"{c}\" proposal to crop"
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn seeded(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.clone()
    }
}

fn learn_attention(
    spec: &ExperimentSpec,
    rep: &Repetition,
    demos: &[Demonstration],
) -> Result<AttentionModel> {
    let crops = first_frame_crops(demos, &spec.attention.crop_classes)?;
    train_attention(
        demos,
        &seeded(&spec.attention.train, rep.seed("attention")),
        crops.as_deref(),
        spec.attention.rows,
    )
}

/// Cloning then search, as configured. Vision and no-vision policies share
/// every seed. Also reports whether `W` came through untouched.
fn learn_policy(
    spec: &ExperimentSpec,
    rep: &Repetition,
    demos: &[Demonstration],
    attention: &AttentionModel,
    vision: bool,
) -> Result<(Policy, bool)> {
    let p = spec.policy.as_ref().expect("validated: policy present");
    let before = attention.w_bits();
    let mut policy = None;
    if let Some(bc) = &p.bc {
        let config = BcConfig {
            seed: rep.seed("bc"),
            ..bc.clone()
        };
        policy = Some(behavior_clone(demos, attention, &p.arch, vision, &config)?);
    }
    if let Some(rl) = &p.rl {
        let config = RlConfig {
            seed: rep.seed("rl"),
            ..rl.clone()
        };
        let ctx = RolloutContext {
            task: &spec.task,
            attention,
            bank: &rep.bank,
            proposer: &spec.proposer,
        };
        policy = Some(train_rl(
            &ctx,
            &config,
            &p.arch,
            vision,
            &spec.train_seeds.seeds(),
            policy.as_ref(),
        )?);
    }
    let policy = policy.expect("validated: at least one policy stage");
    Ok((policy, attention.w_bits() == before))
}

struct Env<'a> {
    attention: &'a AttentionModel,
    bank: &'a FeatureBank,
    proposer: &'a ProposerConfig,
}

impl Env<'_> {
    fn policy_episode(
        &self,
        policy: &Policy,
        task: &TaskSpec,
        rep: usize,
        seed: u64,
        scoring: Scoring<'_>,
    ) -> Result<Outcome> {
        let r = rollout(policy, self.attention, task, seed, self.bank, self.proposer)?;
        let mut labels = r.attended;
        // A blind policy ignores the attention, so its selections say nothing.
        let scoring = if policy.vision {
            scoring
        } else {
            Scoring::NONE
        };
        let record = scoring.record(rep, seed, Some(r.success), &labels, &r.proposed);
        if !policy.vision {
            labels.clear();
        }
        Ok(Outcome {
            record,
            labels,
            proposed: r.proposed,
        })
    }

    /// Attention selections along an expert trajectory.
    fn expert_episode(
        &self,
        task: &TaskSpec,
        rep: usize,
        seed: u64,
        scoring: Scoring<'_>,
    ) -> Result<Outcome> {
        let (states, _) = run_episode(task, reset(task, seed)?, |s| Ok(scripted_expert(task, s)))?;
        let mut rng = observation_rng(seed, "selection");
        let mut labels = Vec::with_capacity(task.horizon);
        let mut proposed = Vec::with_capacity(task.horizon);
        for s in &states[..task.horizon] {
            match observe(s, self.bank, self.proposer, &mut rng) {
                Ok(scene) => {
                    let (_, idx) = self.attention.hard(&scene)?;
                    labels.push(
                        idx.iter()
                            .map(|&i| {
                                scene.proposals()[i]
                                    .label
                                    .clone()
                                    .unwrap_or_else(|| UNLABELED.into())
                            })
                            .collect(),
                    );
                    proposed.push(scene_labels(&scene));
                }
                Err(Error::EmptyScene) => {
                    labels.push(vec![MISSING.to_string(); self.attention.m]);
                    proposed.push(Vec::new());
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Outcome {
            record: scoring.record(rep, seed, None, &labels, &proposed),
            labels,
            proposed,
        })
    }
}

fn classes_of(objects: &[ObjectPlacement]) -> Vec<String> {
    let mut out: Vec<String> = objects.iter().map(|o| o.class_id.clone()).collect();
    out.dedup();
    out
}

/// One trained instance of the target class; evaluation on the trained
/// instance in clean scenes, on unseen instances among distractors (with a
/// no-vision baseline on the same conditions) and with the target hidden
/// from the proposer.
pub fn run_instance_generalization(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_kind(spec, ExperimentKind::InstanceGeneralization)?;
    let targets = spec.target_classes();
    let train_seeds = spec.train_seeds.seeds();
    let eval_seeds = spec.eval_seeds.seeds();
    let missing_seeds = spec
        .missing_target_seeds
        .map(|r| r.seeds())
        .unwrap_or_default();
    let eval_task = with_objects(&spec.task, &spec.eval_distractors);
    let distractors = classes_of(&spec.eval_distractors);
    let scoring = Scoring {
        target: Some(&targets[0]),
        distractors: Some(&distractors),
    };
    let hidden = ProposerConfig {
        suppressed_classes: vec![targets[0].clone()],
        ..spec.proposer.clone()
    };
    let mut b = Builder::new(spec);
    let n = eval_seeds.len();
    let trained = b.group("trained-instance", n, &targets);
    let unseen = b.group("unseen-instances", n, &targets);
    let blind = b.group("unseen-instances/no-vision", n, &targets);
    let missing = (!missing_seeds.is_empty())
        .then(|| b.group("target-missing", missing_seeds.len(), &targets));
    for r in 0..spec.repetitions {
        let rep = Repetition::new(spec, r)?;
        let demos = demonstrations(
            &spec.task,
            &train_seeds,
            &spec.demos,
            &rep.bank,
            &spec.proposer,
        )?;
        let attention = learn_attention(spec, &rep, &demos)?;
        let (vision, ok_v) = learn_policy(spec, &rep, &demos, &attention, true)?;
        let (no_vision, ok_n) = learn_policy(spec, &rep, &demos, &attention, false)?;
        b.w_unchanged &= ok_v && ok_n;
        let env = Env {
            attention: &attention,
            bank: &rep.bank,
            proposer: &spec.proposer,
        };
        for &seed in &eval_seeds {
            b.add(
                trained,
                env.policy_episode(&vision, &spec.task, r, seed, scoring)?,
            );
        }
        for (k, &seed) in eval_seeds.iter().enumerate() {
            let instance = spec.eval_instances[k % spec.eval_instances.len()];
            let task = with_relevant(&eval_task, |o| o.instance_seed = instance);
            let variant = Some(format!("{}#{instance}", targets[0]));
            for (group, policy) in [(unseen, &vision), (blind, &no_vision)] {
                let mut out = env.policy_episode(policy, &task, r, seed, scoring)?;
                out.record.variant = variant.clone();
                b.add(group, out);
            }
        }
        if let Some(group) = missing {
            let env = Env {
                proposer: &hidden,
                ..env
            };
            for &seed in &missing_seeds {
                let mut out = env.policy_episode(&vision, &eval_task, r, seed, scoring)?;
                out.record.flags.push(NO_TARGET_FLAG.to_string());
                b.add(group, out);
            }
        }
    }
    Ok(b.finish(|b| {
        vec![
            (
                "trained_success_min",
                b.rate("trained-instance", success_rate),
                Comparison::AtLeast,
            ),
            (
                "unseen_success_min",
                b.rate("unseen-instances", success_rate),
                Comparison::AtLeast,
            ),
            (
                "no_vision_success_max",
                b.rate("unseen-instances/no-vision", success_rate),
                Comparison::AtMost,
            ),
            (
                "missing_target_success_max",
                b.rate("target-missing", success_rate),
                Comparison::AtMost,
            ),
        ]
    }))
}

/// Condition A learns attention from clean demonstrations only; condition B
/// finetunes A on demonstrations with a confusable distractor present.
/// Both are evaluated with and without the distractor.
pub fn run_distractor_narrowing(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_kind(spec, ExperimentKind::DistractorNarrowing)?;
    let ft = spec.finetune.as_ref().expect("validated: finetune present");
    let distractor = spec
        .distractor
        .clone()
        .expect("validated: distractor present");
    let targets = spec.target_classes();
    let train_seeds = spec.train_seeds.seeds();
    let (clean_seeds, ft_seeds) = train_seeds.split_at(spec.demos.count);
    let eval_seeds = spec.eval_seeds.seeds();
    let clean_task = with_objects(&spec.task, &spec.eval_distractors);
    let confused_task = with_objects(&clean_task, std::slice::from_ref(&distractor));
    let ft_task = with_objects(&spec.task, std::slice::from_ref(&distractor));
    let distractors = vec![distractor.class_id.clone()];
    let scoring = Scoring {
        target: Some(&targets[0]),
        distractors: Some(&distractors),
    };
    let mut b = Builder::new(spec);
    let n = eval_seeds.len();
    let groups = [
        b.group("A/with-distractor", n, &targets),
        b.group("B/with-distractor", n, &targets),
        b.group("A/clean", n, &targets),
        b.group("B/clean", n, &targets),
    ];
    for r in 0..spec.repetitions {
        let rep = Repetition::new(spec, r)?;
        let clean = demonstrations(
            &spec.task,
            clean_seeds,
            &spec.demos,
            &rep.bank,
            &spec.proposer,
        )?;
        let a = learn_attention(spec, &rep, &clean)?;
        let extra = demonstrations(&ft_task, ft_seeds, &ft.demos, &rep.bank, &spec.proposer)?;
        let b_att =
            finetune_attention(&a, &extra, &clean, &seeded(&ft.train, rep.seed("finetune")))?;
        for (k, attention) in [&a, &b_att].into_iter().enumerate() {
            let (policy, ok) = learn_policy(spec, &rep, &clean, attention, true)?;
            b.w_unchanged &= ok;
            let env = Env {
                attention,
                bank: &rep.bank,
                proposer: &spec.proposer,
            };
            for &seed in &eval_seeds {
                b.add(
                    groups[k],
                    env.policy_episode(&policy, &confused_task, r, seed, scoring)?,
                );
                b.add(
                    groups[k + 2],
                    env.policy_episode(&policy, &clean_task, r, seed, scoring)?,
                );
            }
        }
    }
    Ok(b.finish(|b| {
        let sel_a = b.rate("A/with-distractor", selection_rate);
        let sel_b = b.rate("B/with-distractor", selection_rate);
        let clean = b
            .rate("A/clean", success_rate)
            .min(b.rate("B/clean", success_rate));
        vec![
            ("b_selection_min", sel_b, Comparison::AtLeast),
            ("selection_gap_min", sel_b - sel_a, Comparison::AtLeast),
            (
                "b_success_min",
                b.rate("B/with-distractor", success_rate),
                Comparison::AtLeast,
            ),
            ("clean_success_min", clean, Comparison::AtLeast),
        ]
    }))
}

/// A single attention row starts from a crop of the demonstrated class and
/// is finetuned on demonstrations that cycle the relevant object through
/// `scope_classes`. Selection is measured along expert trajectories before
/// and after, once per class.
pub fn run_scope_broadening(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_kind(spec, ExperimentKind::ScopeBroadening)?;
    let ft = spec.finetune.as_ref().expect("validated: finetune present");
    let original = spec.target_classes()[0].clone();
    let train_seeds = spec.train_seeds.seeds();
    let (first_seeds, ft_seeds) = train_seeds.split_at(spec.demos.count);
    let eval_seeds = spec.eval_seeds.seeds();
    let eval_task = with_objects(&spec.task, &spec.eval_distractors);
    let distractors = classes_of(&spec.eval_distractors);
    let one = DemoSpec {
        count: 1,
        ..ft.demos.clone()
    };
    let mut b = Builder::new(spec);
    let n = eval_seeds.len();
    let mut ids = Vec::new();
    for stage in ["pre", "post"] {
        for c in &spec.scope_classes {
            ids.push(b.group(&format!("{stage}/{c}"), n, std::slice::from_ref(c)));
        }
    }
    for r in 0..spec.repetitions {
        let rep = Repetition::new(spec, r)?;
        let demos = demonstrations(
            &spec.task,
            first_seeds,
            &spec.demos,
            &rep.bank,
            &spec.proposer,
        )?;
        let pre = learn_attention(spec, &rep, &demos)?;
        let mut extra = Vec::with_capacity(ft.demos.count);
        for (k, &seed) in ft_seeds[..ft.demos.count].iter().enumerate() {
            let class = &spec.scope_classes[k % spec.scope_classes.len()];
            let task = with_relevant(&spec.task, |o| o.class_id = class.clone());
            extra.extend(demonstrations(
                &task,
                &[seed],
                &one,
                &rep.bank,
                &spec.proposer,
            )?);
        }
        let post = finetune_attention(
            &pre,
            &extra,
            &demos,
            &seeded(&ft.train, rep.seed("finetune")),
        )?;
        let mut slot = ids.iter();
        for attention in [&pre, &post] {
            let env = Env {
                attention,
                bank: &rep.bank,
                proposer: &spec.proposer,
            };
            for c in &spec.scope_classes {
                let group = *slot.next().expect("one group per stage and class");
                let task = with_relevant(&eval_task, |o| o.class_id = c.clone());
                let scoring = Scoring {
                    target: Some(c),
                    distractors: Some(&distractors),
                };
                for &seed in &eval_seeds {
                    let mut out = env.expert_episode(&task, r, seed, scoring)?;
                    out.record.variant = Some(c.clone());
                    b.add(group, out);
                }
            }
        }
    }
    let classes = spec.scope_classes.clone();
    Ok(b.finish(move |b| {
        let over =
            |stage: &str, pick: fn(&GroupResult) -> Option<f64>, keep: &dyn Fn(&String) -> bool| {
                classes
                    .iter()
                    .filter(|c| keep(c))
                    .map(|c| b.rate(&format!("{stage}/{c}"), pick))
                    .collect::<Vec<f64>>()
            };
        let min = |v: Vec<f64>| v.into_iter().fold(f64::INFINITY, f64::min);
        let max = |v: Vec<f64>| v.into_iter().fold(f64::NEG_INFINITY, f64::max);
        vec![
            (
                "post_selection_min",
                min(over("post", selection_rate, &|_| true)),
                Comparison::AtLeast,
            ),
            (
                "distant_selection_max",
                max(over("post", distractor_rate, &|_| true)),
                Comparison::AtMost,
            ),
            (
                "pre_original_selection_min",
                min(over("pre", selection_rate, &|c| *c == original)),
                Comparison::AtLeast,
            ),
            (
                "pre_other_selection_max",
                max(over("pre", selection_rate, &|c| *c != original)),
                Comparison::AtMost,
            ),
        ]
    }))
}

/// Attention over the swept object and the dustpan, a policy on the
/// attended boxes, and a no-vision policy trained the same way.
pub fn run_multi_object_sweep(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    expect_kind(spec, ExperimentKind::MultiObjectSweep)?;
    let targets = spec.target_classes();
    let train_seeds = spec.train_seeds.seeds();
    let eval_seeds = spec.eval_seeds.seeds();
    let eval_task = with_objects(&spec.task, &spec.eval_distractors);
    let mut b = Builder::new(spec);
    let n = eval_seeds.len();
    let vision_group = b.group("attention", n, &targets);
    let blind_group = b.group("no-vision", n, &[]);
    for r in 0..spec.repetitions {
        let rep = Repetition::new(spec, r)?;
        let demos = demonstrations(
            &spec.task,
            &train_seeds,
            &spec.demos,
            &rep.bank,
            &spec.proposer,
        )?;
        let attention = learn_attention(spec, &rep, &demos)?;
        let (vision, ok_v) = learn_policy(spec, &rep, &demos, &attention, true)?;
        let (no_vision, ok_n) = learn_policy(spec, &rep, &demos, &attention, false)?;
        b.w_unchanged &= ok_v && ok_n;
        let env = Env {
            attention: &attention,
            bank: &rep.bank,
            proposer: &spec.proposer,
        };
        for &seed in &eval_seeds {
            b.add(
                vision_group,
                env.policy_episode(&vision, &eval_task, r, seed, Scoring::NONE)?,
            );
            b.add(
                blind_group,
                env.policy_episode(&no_vision, &eval_task, r, seed, Scoring::NONE)?,
            );
        }
    }
    Ok(b.finish(|b| {
        let majorities = b.groups[vision_group].row_majorities();
        let mut got: Vec<String> = majorities.into_iter().flatten().collect();
        let mut want = targets.clone();
        got.sort();
        want.sort();
        vec![
            (
                "attention_success_min",
                b.rate("attention", success_rate),
                Comparison::AtLeast,
            ),
            (
                "no_vision_success_max",
                b.rate("no-vision", success_rate),
                Comparison::AtMost,
            ),
            (
                "distinct_row_majorities",
                if got == want { 1.0 } else { 0.0 },
                Comparison::AtLeast,
            ),
        ]
    }))
}

/// Closed-loop evaluation of a trained policy on the spec's evaluation
/// conditions, with the spec's evaluation distractors present.
pub fn evaluate_policy(
    spec: &ExperimentSpec,
    bank: &FeatureBank,
    attention: &AttentionModel,
    policy: &Policy,
) -> Result<GroupResult> {
    spec.validate()?;
    let targets = spec.target_classes();
    let distractors = classes_of(&spec.eval_distractors);
    let scoring = Scoring {
        target: Some(&targets[0]),
        distractors: Some(&distractors),
    };
    let task = with_objects(&spec.task, &spec.eval_distractors);
    let env = Env {
        attention,
        bank,
        proposer: &spec.proposer,
    };
    let one_rep = ExperimentSpec {
        repetitions: 1,
        ..spec.clone()
    };
    let mut b = Builder::new(&one_rep);
    let name = if policy.vision {
        "attention"
    } else {
        "no-vision"
    };
    let seeds = spec.eval_seeds.seeds();
    let g = b.group(name, seeds.len(), &targets);
    for &seed in &seeds {
        b.add(g, env.policy_episode(policy, &task, 0, seed, scoring)?);
    }
    let mut group = b.groups.swap_remove(g);
    group.aggregate();
    Ok(group)
}
