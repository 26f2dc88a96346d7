//! Desk-scale studies driven by JSON specs.
//!
//! An [`ExperimentSpec`] fixes everything a run depends on: the feature
//! bank, proposer, task, demonstration counts, learning configs, condition
//! seeds and pass thresholds. [`run_experiment`] turns it into an
//! [`ExperimentReport`] holding one record per evaluated condition, group
//! aggregates, attention confusion counts and threshold checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::attention::TrainConfig;
use crate::error::{Error, Result};
use crate::metaattention::{make_clustered_bank, ClassCluster, FeatureBank, ProposerConfig};
use crate::policy::{BcConfig, PolicyArch, RlConfig};
use crate::rng::{derive_indexed, derive_seed, seeded_rng};
use crate::simworld::{ObjectPlacement, TaskSpec};
use crate::types::TargetConvention;

mod runners;
mod table;

pub use runners::{
    evaluate_policy, first_frame_crops, run_distractor_narrowing, run_experiment,
    run_instance_generalization, run_multi_object_sweep, run_scope_broadening,
};
pub use table::render_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    InstanceGeneralization,
    DistractorNarrowing,
    ScopeBroadening,
    MultiObjectSweep,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InstanceGeneralization => "instance-generalization",
            Self::DistractorNarrowing => "distractor-narrowing",
            Self::ScopeBroadening => "scope-broadening",
            Self::MultiObjectSweep => "multi-object-sweep",
        }
    }
}

/// `count` consecutive condition seeds starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (self.start..self.start + self.count).collect()
    }

    fn end(&self) -> u64 {
        self.start + self.count
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.count > 0 && other.count > 0 && self.start < other.end() && other.start < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankSpec {
    pub dimension: usize,
    pub clusters: Vec<ClassCluster>,
    pub instance_noise: f64,
    pub nuisance_noise: f64,
    pub min_separation: f64,
}

impl BankSpec {
    pub fn build(&self, seed: u64) -> Result<FeatureBank> {
        make_clustered_bank(
            self.dimension,
            &self.clusters,
            self.instance_noise,
            self.nuisance_noise,
            self.min_separation,
            &mut seeded_rng(seed),
        )
    }

    fn has_class(&self, class_id: &str) -> bool {
        self.clusters
            .iter()
            .any(|c| c.members.iter().any(|m| m == class_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSpec {
    pub count: usize,
    /// Demonstrator imprecision, relative to the expert's speed.
    #[serde(default)]
    pub action_noise: f64,
    #[serde(default)]
    pub target_convention: TargetConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSpec {
    pub rows: usize,
    /// One class per row; that row starts from a crop of the class taken
    /// from the first demonstration frame. Empty means random rows.
    #[serde(default)]
    pub crop_classes: Vec<String>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    pub demos: DemoSpec,
    pub train: TrainConfig,
}

/// Policy learning: cloning, then search from the cloned weights. At least
/// one stage must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub arch: PolicyArch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rl: Option<RlConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment_kind: ExperimentKind,
    pub seed: u64,
    pub repetitions: usize,
    pub bank: BankSpec,
    pub proposer: ProposerConfig,
    /// Training task. Its relevant objects define the target classes.
    pub task: TaskSpec,
    pub demos: DemoSpec,
    pub attention: AttentionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    pub train_seeds: SeedRange,
    pub eval_seeds: SeedRange,
    /// Objects added to every evaluation scene, identical across groups.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval_distractors: Vec<ObjectPlacement>,
    /// Instance seeds the target takes at evaluation, cycled over
    /// conditions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval_instances: Vec<u64>,
    /// Conditions evaluated with the target hidden from the proposer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_target_seeds: Option<SeedRange>,
    /// The confusable object of a narrowing run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor: Option<ObjectPlacement>,
    /// Classes the relevant object cycles through when broadening scope.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scope_classes: Vec<String>,
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        field: name.to_string(),
        message: message.into(),
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(field("repetitions", "must be ≥ 1"));
        }
        if self.eval_seeds.count == 0 {
            return Err(field("eval_seeds.count", "must be ≥ 1"));
        }
        if self.train_seeds.overlaps(&self.eval_seeds) {
            return Err(field("eval_seeds", "overlaps train_seeds"));
        }
        if let Some(m) = &self.missing_target_seeds {
            if m.overlaps(&self.train_seeds) {
                return Err(field("missing_target_seeds", "overlaps train_seeds"));
            }
        }
        self.task
            .validate()
            .map_err(|e| field("task", e.to_string()))?;
        self.proposer
            .validate()
            .map_err(|e| field("proposer", e.to_string()))?;
        self.attention
            .train
            .validate()
            .map_err(|e| field("attention.train", e.to_string()))?;
        for class in self.all_classes() {
            if !self.bank.has_class(&class) {
                return Err(field("bank.clusters", format!("no class \"{class}\"")));
            }
        }
        if self.attention.rows == 0 {
            return Err(field("attention.rows", "must be ≥ 1"));
        }
        if !self.attention.crop_classes.is_empty()
            && self.attention.crop_classes.len() != self.attention.rows
        {
            return Err(field("attention.crop_classes", "needs one class per row"));
        }
        let mut demo_need = self.demos.count as u64;
        if let Some(ft) = &self.finetune {
            ft.train
                .validate()
                .map_err(|e| field("finetune.train", e.to_string()))?;
            demo_need += ft.demos.count as u64;
        }
        if demo_need == 0 || demo_need > self.train_seeds.count {
            return Err(field(
                "train_seeds.count",
                format!("must cover the {demo_need} demonstrations"),
            ));
        }
        if let Some(p) = &self.policy {
            p.arch
                .validate()
                .map_err(|e| field("policy.arch", e.to_string()))?;
            if p.bc.is_none() && p.rl.is_none() {
                return Err(field("policy", "needs bc, rl or both"));
            }
            if let Some(bc) = &p.bc {
                bc.validate()
                    .map_err(|e| field("policy.bc", e.to_string()))?;
            }
            if let Some(rl) = &p.rl {
                rl.validate()
                    .map_err(|e| field("policy.rl", e.to_string()))?;
            }
        }
        for (k, v) in &self.thresholds {
            if !v.is_finite() {
                return Err(field(&format!("thresholds.{k}"), "must be finite"));
            }
        }
        self.validate_kind()
    }

    fn validate_kind(&self) -> Result<()> {
        let needs_policy = !matches!(self.experiment_kind, ExperimentKind::ScopeBroadening);
        if needs_policy && self.policy.is_none() {
            return Err(field("policy", "required for this experiment kind"));
        }
        let needs_finetune = matches!(
            self.experiment_kind,
            ExperimentKind::DistractorNarrowing | ExperimentKind::ScopeBroadening
        );
        if needs_finetune && self.finetune.is_none() {
            return Err(field("finetune", "required for this experiment kind"));
        }
        match self.experiment_kind {
            ExperimentKind::InstanceGeneralization => {
                let trained = self.task.objects[self.task.relevant_objects()[0]].instance_seed;
                if self.eval_instances.is_empty() {
                    return Err(field(
                        "eval_instances",
                        "required for instance generalization",
                    ));
                }
                if self.eval_instances.contains(&trained) {
                    return Err(field("eval_instances", "contains the training instance"));
                }
            }
            ExperimentKind::DistractorNarrowing => {
                let d = self
                    .distractor
                    .as_ref()
                    .ok_or_else(|| field("distractor", "required for distractor narrowing"))?;
                if self.target_classes().contains(&d.class_id) {
                    return Err(field(
                        "distractor.class_id",
                        "must differ from the target class",
                    ));
                }
            }
            ExperimentKind::ScopeBroadening => {
                if self.scope_classes.is_empty() {
                    return Err(field("scope_classes", "required for scope broadening"));
                }
                if self.attention.rows != 1 {
                    return Err(field(
                        "attention.rows",
                        "scope broadening uses a single row",
                    ));
                }
            }
            ExperimentKind::MultiObjectSweep => {
                if self.task.relevant_objects().len() != self.attention.rows {
                    return Err(field("attention.rows", "needs one row per relevant object"));
                }
            }
        }
        Ok(())
    }

    /// Classes of the task's relevant objects, in order.
    pub fn target_classes(&self) -> Vec<String> {
        self.task
            .relevant_objects()
            .into_iter()
            .map(|i| self.task.objects[i].class_id.clone())
            .collect()
    }

    fn all_classes(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .task
            .objects
            .iter()
            .map(|o| o.class_id.clone())
            .collect();
        out.extend(self.eval_distractors.iter().map(|o| o.class_id.clone()));
        out.extend(self.distractor.iter().map(|o| o.class_id.clone()));
        out.extend(self.scope_classes.iter().cloned());
        out.extend(self.attention.crop_classes.iter().cloned());
        out
    }

    /// Named sub-seeds of repetition `r`.
    pub fn repetition_seeds(&self, r: usize) -> BTreeMap<String, u64> {
        let base = derive_indexed(self.seed, "repetition", r as u64);
        ["bank", "attention", "finetune", "bc", "rl"]
            .iter()
            .map(|k| (k.to_string(), derive_seed(base, k)))
            .collect()
    }
}

impl Artifact for ExperimentSpec {
    const KIND: &'static str = "experiment spec";

    fn validate(&self) -> Result<()> {
        ExperimentSpec::validate(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedManifest {
    pub master: u64,
    pub train_conditions: Vec<u64>,
    pub eval_conditions: Vec<u64>,
    /// Sub-seeds of each repetition, by stage.
    pub repetitions: Vec<BTreeMap<String, u64>>,
}

/// Hits out of trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    pub hits: usize,
    pub count: usize,
    pub rate: f64,
}

impl Rate {
    pub fn of(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mut hits, mut count) = (0, 0);
        for f in flags {
            count += 1;
            hits += f as usize;
        }
        let rate = if count == 0 {
            0.0
        } else {
            hits as f64 / count as f64
        };
        Self { hits, count, rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mean {
    pub count: usize,
    pub mean: f64,
}

impl Mean {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut sum, mut count) = (0.0, 0);
        for v in values {
            sum += v;
            count += 1;
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        Self { count, mean }
    }
}

/// One evaluated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionRecord {
    pub repetition: usize,
    pub condition_seed: u64,
    /// What varied for this condition, e.g. the target instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    /// Fraction of steps on which row 0 selected the target class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_selection: Option<f64>,
    /// Fraction of steps on which row 0 selected a distractor class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_selection: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupResult {
    pub name: String,
    /// Conditions per repetition.
    pub conditions: usize,
    pub records: Vec<ConditionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<Rate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_selection: Option<Mean>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor_selection: Option<Mean>,
    /// Ground-truth relevant class of each attention row, when defined.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relevant_classes: Vec<String>,
    /// Per attention row: selected label → steps.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub confusion: Vec<BTreeMap<String, u64>>,
}

impl GroupResult {
    /// Fills the aggregates from the records. A field is aggregated only
    /// if every record carries it.
    pub fn aggregate(&mut self) {
        let all = |f: &dyn Fn(&ConditionRecord) -> bool| {
            !self.records.is_empty() && self.records.iter().all(f)
        };
        self.success = all(&|r| r.success.is_some())
            .then(|| Rate::of(self.records.iter().filter_map(|r| r.success)));
        self.target_selection = all(&|r| r.target_selection.is_some())
            .then(|| Mean::of(self.records.iter().filter_map(|r| r.target_selection)));
        self.distractor_selection = all(&|r| r.distractor_selection.is_some())
            .then(|| Mean::of(self.records.iter().filter_map(|r| r.distractor_selection)));
    }

    /// Most-selected label of each row; ties go to the smaller label.
    pub fn row_majorities(&self) -> Vec<Option<String>> {
        self.confusion
            .iter()
            .map(|row| {
                row.iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(k, _)| k.clone())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtLeast,
    AtMost,
}

impl Comparison {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Self::AtLeast => value >= threshold,
            Self::AtMost => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        value: f64,
        comparison: Comparison,
        threshold: f64,
    ) -> Self {
        Self {
            name: name.into(),
            value,
            comparison,
            threshold,
            passed: comparison.holds(value, threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub seed_manifest: SeedManifest,
    pub groups: Vec<GroupResult>,
    pub checks: Vec<Check>,
    /// Attention weights were bit-identical before and after every policy
    /// training run.
    pub w_unchanged: bool,
    /// Smallest and largest proposal count seen during evaluation.
    pub proposal_range: [usize; 2],
    /// Only recorded on request, since it breaks byte-identical reruns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn group(&self, name: &str) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.w_unchanged && self.checks.iter().all(|c| c.passed)
    }

    /// Internal consistency: counts, aggregates and verdicts recompute from
    /// the stored records.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let reps = self.spec.repetitions;
        if self.seed_manifest.repetitions.len() != reps {
            return Err(field(
                "seed_manifest.repetitions",
                "length differs from spec.repetitions",
            ));
        }
        for (i, g) in self.groups.iter().enumerate() {
            let at = |f: &str| format!("groups[{i}].{f}");
            if g.records.len() != reps * g.conditions {
                return Err(field(
                    &at("records"),
                    format!(
                        "{} records for {} repetitions × {} conditions",
                        g.records.len(),
                        reps,
                        g.conditions
                    ),
                ));
            }
            if g.records.iter().any(|r| r.repetition >= reps) {
                return Err(field(&at("records"), "repetition index out of range"));
            }
            let mut fresh = g.clone();
            fresh.aggregate();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            let same_rate = match (&g.success, &fresh.success) {
                (Some(a), Some(b)) => {
                    a.hits == b.hits && a.count == b.count && close(a.rate, b.rate)
                }
                (None, None) => true,
                _ => false,
            };
            if !same_rate {
                return Err(field(&at("success"), "does not match the records"));
            }
            for (name, stored, fresh) in [
                (
                    "target_selection",
                    g.target_selection,
                    fresh.target_selection,
                ),
                (
                    "distractor_selection",
                    g.distractor_selection,
                    fresh.distractor_selection,
                ),
            ] {
                let same = match (stored, fresh) {
                    (Some(a), Some(b)) => a.count == b.count && close(a.mean, b.mean),
                    (None, None) => true,
                    _ => false,
                };
                if !same {
                    return Err(field(&at(name), "does not match the records"));
                }
            }
        }
        for (i, c) in self.checks.iter().enumerate() {
            if c.passed != c.comparison.holds(c.value, c.threshold) {
                return Err(field(
                    &format!("checks[{i}].passed"),
                    "contradicts value and threshold",
                ));
            }
        }
        Ok(())
    }
}

impl Artifact for ExperimentReport {
    const KIND: &'static str = "experiment report";

    fn validate(&self) -> Result<()> {
        ExperimentReport::validate(self)
    }
}
