//! Control policies over `[robot state ⊕ ν_hard]`.
//!
//! Policies are learned with the attention held fixed: behavior cloning on
//! demonstrations, then (optionally) cross-entropy search over the network
//! parameters using simulator rollouts.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::attention::AttentionModel;
use crate::error::{Error, Result};
use crate::metaattention::{FeatureBank, ProposerConfig};
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::rng::{derive_seed, seeded_rng};
use crate::simworld::{
    observation_rng, observe, reset, step, success, Action, SimState, SuccessGeometry, TaskSpec,
};
use crate::types::{Demonstration, ObservationVector, RobotState, Scene};

/// Label recorded in the attention log for proposals without one, and for
/// steps where the scene had no proposals.
pub const UNLABELED: &str = "unlabeled";
pub const MISSING: &str = "missing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub hidden: Vec<usize>,
    /// Network outputs are multiplied by this to give velocities.
    pub action_scale: f64,
    /// Feed box corners as offsets from the end-effector instead of
    /// absolute coordinates.
    #[serde(default)]
    pub relative_boxes: bool,
    /// A row whose selected proposal has cosine below this with the row
    /// keeps feeding its previous box, so a missed detection does not
    /// redirect the policy to whatever scored second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_below: Option<f64>,
}

impl Default for PolicyArch {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            action_scale: 0.05,
            relative_boxes: true,
            hold_below: None,
        }
    }
}

impl PolicyArch {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::invalid("arch.hidden widths must be ≥ 1"));
        }
        if !(self.action_scale > 0.0 && self.action_scale.is_finite()) {
            return Err(Error::invalid("arch.action_scale must be > 0"));
        }
        if self.hold_below.is_some_and(|t| !(-1.0..=1.0).contains(&t)) {
            return Err(Error::invalid("arch.hold_below must lie in [-1,1]"));
        }
        Ok(())
    }

    fn sizes(&self, rows: usize) -> Vec<usize> {
        let mut s = vec![4 + 4 * rows];
        s.extend(&self.hidden);
        s.push(2);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Experiments replace this with a seed derived from the master seed.
    #[serde(default)]
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            learning_rate: 3e-3,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("bc.batch_size must be ≥ 1"));
        }
        self.adam().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    /// Initial standard deviation of the parameter distribution.
    pub init_noise: f64,
    /// Added (in quadrature) to the refit standard deviation.
    pub noise_floor: f64,
    pub episodes_per_candidate: usize,
    /// Experiments replace this with a seed derived from the master seed.
    #[serde(default)]
    pub seed: u64,
    /// Weight of the per-step distance penalty.
    pub distance_weight: f64,
    /// Sweep only: weight of the tool-to-object distance.
    pub approach_weight: f64,
    pub success_bonus: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            population: 24,
            elite_fraction: 0.25,
            iterations: 20,
            init_noise: 0.02,
            noise_floor: 0.002,
            episodes_per_candidate: 6,
            seed: 0,
            distance_weight: 1.0,
            approach_weight: 0.25,
            success_bonus: 10.0,
        }
    }
}

impl RlConfig {
    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).min(self.population)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::invalid("rl.elite_fraction must lie in (0, 1]"));
        }
        if self.population == 0 || self.elite_count() == 0 {
            return Err(Error::invalid("rl.population ≥ elite count ≥ 1 violated"));
        }
        if self.episodes_per_candidate == 0 {
            return Err(Error::invalid("rl.episodes_per_candidate must be ≥ 1"));
        }
        let finite = [
            self.init_noise,
            self.noise_floor,
            self.distance_weight,
            self.approach_weight,
            self.success_bonus,
        ];
        if finite.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(
                "rl noise and reward constants must be finite and ≥ 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub arch: PolicyArch,
    /// Attention rows the policy was built for.
    pub rows: usize,
    pub vision: bool,
    #[serde(rename = "layers")]
    pub net: Mlp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc_config: Option<BcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rl_config: Option<RlConfig>,
    /// Per-epoch cloning loss, then per-iteration mean training reward.
    #[serde(default)]
    pub training_log: Vec<f64>,
}

impl Policy {
    pub fn new(arch: &PolicyArch, rows: usize, vision: bool, seed: u64) -> Result<Self> {
        arch.validate()?;
        if rows == 0 {
            return Err(Error::invalid("policy needs at least one attention row"));
        }
        let mut rng = seeded_rng(derive_seed(seed, "policy-init"));
        Ok(Self {
            arch: arch.clone(),
            rows,
            vision,
            net: Mlp::init(&arch.sizes(rows), &mut rng),
            bc_config: None,
            rl_config: None,
            training_log: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.net.validate()?;
        if self.net.sizes() != self.arch.sizes(self.rows) {
            return Err(Error::Schema {
                field: "layers".into(),
                message: "layer widths disagree with arch and rows".into(),
            });
        }
        Ok(())
    }

    /// Network input. Coordinates are centered and doubled, velocities
    /// scaled by the action scale; the ν block is zero without vision.
    pub fn features(&self, robot: &RobotState, nu: Option<&ObservationVector>) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(4 + 4 * self.rows);
        x.extend(robot.position.iter().map(|p| 2.0 * p - 1.0));
        x.extend(robot.velocity.iter().map(|v| v / self.arch.action_scale));
        match nu {
            Some(nu) if self.vision => {
                if nu.rows() != self.rows {
                    return Err(Error::Dimension {
                        what: "observation rows",
                        expected: self.rows,
                        got: nu.rows(),
                    });
                }
                let pos = robot.position;
                if self.arch.relative_boxes {
                    // Corners alternate x, y.
                    x.extend(
                        nu.as_slice()
                            .iter()
                            .enumerate()
                            .map(|(k, c)| 2.0 * (c - pos[k % 2])),
                    );
                } else {
                    x.extend(nu.as_slice().iter().map(|c| 2.0 * c - 1.0));
                }
            }
            _ => x.resize(4 + 4 * self.rows, 0.0),
        }
        Ok(x)
    }

    pub fn act_features(&self, x: &[f64]) -> Action {
        let out = self.net.forward(x);
        Action::new(
            out[0] * self.arch.action_scale,
            out[1] * self.arch.action_scale,
        )
    }

    pub fn act(&self, robot: &RobotState, nu: Option<&ObservationVector>) -> Result<Action> {
        Ok(self.act_features(&self.features(robot, nu)?))
    }

    fn check_attention(&self, attention: &AttentionModel) -> Result<()> {
        if attention.m != self.rows {
            return Err(Error::Dimension {
                what: "attention rows",
                expected: self.rows,
                got: attention.m,
            });
        }
        Ok(())
    }
}

impl Artifact for Policy {
    const KIND: &'static str = "policy";

    fn validate(&self) -> Result<()> {
        Policy::validate(self)
    }
}

/// Turns a stream of scenes into the boxes the policy sees, applying the
/// hold rules: every row holds on an empty scene, and a row holds when its
/// selection scores below `hold_below`.
struct Observer<'a> {
    attention: &'a AttentionModel,
    hold_below: Option<f64>,
    nu: ObservationVector,
    seen: bool,
}

impl<'a> Observer<'a> {
    fn new(attention: &'a AttentionModel, hold_below: Option<f64>) -> Self {
        Self {
            attention,
            hold_below,
            nu: ObservationVector::zeros(attention.m),
            seen: false,
        }
    }

    /// Updates from `scene` and returns the raw argmax indices.
    fn update(&mut self, scene: &Scene) -> Result<Vec<usize>> {
        let (fresh, idx) = self.attention.hard(scene)?;
        match self.hold_below {
            Some(t) if self.seen => {
                let cos = self.attention.selection_cosines(scene, &idx);
                for (row, c) in cos.iter().enumerate() {
                    if *c >= t {
                        self.nu.0[4 * row..4 * row + 4]
                            .copy_from_slice(&fresh.0[4 * row..4 * row + 4]);
                    }
                }
            }
            _ => self.nu = fresh,
        }
        self.seen = true;
        Ok(idx)
    }
}

type Dataset = (Vec<Vec<f64>>, Vec<[f64; 2]>);

/// Cloning dataset: network inputs from `hard_observation` under the fixed
/// attention, and targets in network units.
fn cloning_data(
    policy: &Policy,
    demos: &[Demonstration],
    attention: &AttentionModel,
) -> Result<Dataset> {
    let convention = demos[0].target_convention;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for demo in demos {
        demo.validate()?;
        if demo.target_convention != convention {
            return Err(Error::invalid("demonstrations mix target conventions"));
        }
        let mut observer = Observer::new(attention, policy.arch.hold_below);
        for s in &demo.steps {
            let nu = if policy.vision {
                observer.update(&s.scene)?;
                Some(&observer.nu)
            } else {
                None
            };
            inputs.push(policy.features(&s.state, nu)?);
            let k = policy.arch.action_scale;
            targets.push([s.target[0] / k, s.target[1] / k]);
        }
    }
    Ok((inputs, targets))
}

fn cloning_loss(net: &Mlp, inputs: &[Vec<f64>], targets: &[[f64; 2]]) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(targets)
        .map(|(x, t)| {
            let y = net.forward(x);
            (y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2)
        })
        .sum();
    total / inputs.len() as f64
}

/// Fits a policy to demonstration targets by minibatch Adam on squared
/// error. `W` is only read.
pub fn behavior_clone(
    demos: &[Demonstration],
    attention: &AttentionModel,
    arch: &PolicyArch,
    vision: bool,
    config: &BcConfig,
) -> Result<Policy> {
    if demos.is_empty() {
        return Err(Error::invalid(
            "behavior cloning needs at least one demonstration",
        ));
    }
    config.validate()?;
    attention.validate()?;
    let mut policy = Policy::new(arch, attention.m, vision, config.seed)?;
    policy.bc_config = Some(config.clone());
    let (inputs, targets) = cloning_data(&policy, demos, attention)?;
    let mut opt = Adam::new(config.adam(), policy.net.param_count());
    let mut rng = seeded_rng(derive_seed(config.seed, "policy-batches"));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut grad = policy.net.zeros_like();
            let scale = 2.0 / chunk.len() as f64;
            for &i in chunk {
                let trace = policy.net.forward_trace(&inputs[i]);
                let y = trace.output();
                let d = [
                    scale * (y[0] - targets[i][0]),
                    scale * (y[1] - targets[i][1]),
                ];
                policy.net.backward(&trace, &d, &mut grad);
            }
            opt.step(policy.net.slices_mut(), grad.slices());
        }
        policy
            .training_log
            .push(cloning_loss(&policy.net, &inputs, &targets));
    }
    Ok(policy)
}

/// Label of every proposal, in scene order.
pub fn scene_labels(scene: &Scene) -> Vec<String> {
    scene
        .proposals()
        .iter()
        .map(|p| p.label.clone().unwrap_or_else(|| UNLABELED.into()))
        .collect()
}

/// One closed-loop episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Initial state first, `T + 1` entries.
    pub states: Vec<SimState>,
    pub actions: Vec<Action>,
    pub success: bool,
    /// Proposal index selected by each attention row at each step.
    pub attention_log: Vec<Vec<usize>>,
    /// Labels of the selected proposals.
    pub attended: Vec<Vec<String>>,
    /// Labels of every proposal in each observed scene.
    pub proposed: Vec<Vec<String>>,
}

/// Runs `policy` for the task horizon from condition `condition_seed`,
/// observing through the proposal oracle and hard attention at every step.
/// If a scene comes back empty the previous observation is held.
pub fn rollout(
    policy: &Policy,
    attention: &AttentionModel,
    task: &TaskSpec,
    condition_seed: u64,
    bank: &FeatureBank,
    proposer: &ProposerConfig,
) -> Result<Rollout> {
    policy.check_attention(attention)?;
    let mut rng = observation_rng(condition_seed, "rollout");
    let mut states = vec![reset(task, condition_seed)?];
    let mut actions = Vec::with_capacity(task.horizon);
    let mut attention_log = Vec::with_capacity(task.horizon);
    let mut attended = Vec::with_capacity(task.horizon);
    let mut proposed = Vec::with_capacity(task.horizon);
    let mut observer = Observer::new(attention, policy.arch.hold_below);
    let mut idx = vec![0; attention.m];
    for _ in 0..task.horizon {
        let s = states.last().expect("nonempty");
        let labels = match observe(s, bank, proposer, &mut rng) {
            Ok(scene) => {
                proposed.push(scene_labels(&scene));
                idx = observer.update(&scene)?;
                idx.iter()
                    .map(|&i| {
                        scene.proposals()[i]
                            .label
                            .clone()
                            .unwrap_or_else(|| UNLABELED.into())
                    })
                    .collect()
            }
            Err(Error::EmptyScene) => {
                proposed.push(Vec::new());
                vec![MISSING.to_string(); attention.m]
            }
            Err(e) => return Err(e),
        };
        attention_log.push(idx.clone());
        attended.push(labels);
        let a = policy.act(&s.robot, Some(&observer.nu))?;
        let next = step(task, s, a);
        actions.push(a);
        states.push(next);
    }
    let success = success(task, &states);
    Ok(Rollout {
        states,
        actions,
        success,
        attention_log,
        attended,
        proposed,
    })
}

/// Shaped return of a trajectory: per-step distance penalty plus a
/// terminal bonus on success.
pub fn trajectory_reward(task: &TaskSpec, states: &[SimState], config: &RlConfig) -> f64 {
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let penalty: f64 = states[1..]
        .iter()
        .map(|s| match task.success {
            SuccessGeometry::Pour { target, .. } => {
                dist(s.robot.position, s.objects[target].position)
            }
            SuccessGeometry::Sweep {
                object, dustpan, ..
            } => {
                let obj = s.objects[object].position;
                dist(obj, s.objects[dustpan].position)
                    + config.approach_weight * dist(s.robot.position, obj)
            }
        })
        .sum();
    let bonus = if success(task, states) {
        config.success_bonus
    } else {
        0.0
    };
    bonus - config.distance_weight * penalty
}

/// Environment and perception shared by every rollout of a search.
pub struct RolloutContext<'a> {
    pub task: &'a TaskSpec,
    pub attention: &'a AttentionModel,
    pub bank: &'a FeatureBank,
    pub proposer: &'a ProposerConfig,
}

impl RolloutContext<'_> {
    /// Shaped return and success of one episode. Without vision no scenes
    /// are generated since the policy ignores them.
    pub fn episode(
        &self,
        policy: &Policy,
        condition_seed: u64,
        config: &RlConfig,
    ) -> Result<(f64, bool)> {
        let states = if policy.vision {
            rollout(
                policy,
                self.attention,
                self.task,
                condition_seed,
                self.bank,
                self.proposer,
            )?
            .states
        } else {
            let mut states = vec![reset(self.task, condition_seed)?];
            for _ in 0..self.task.horizon {
                let s = states.last().expect("nonempty");
                let a = policy.act(&s.robot, None)?;
                states.push(step(self.task, s, a));
            }
            states
        };
        Ok((
            trajectory_reward(self.task, &states, config),
            success(self.task, &states),
        ))
    }

    pub fn mean_reward(&self, policy: &Policy, seeds: &[u64], config: &RlConfig) -> Result<f64> {
        let mut total = 0.0;
        for &s in seeds {
            total += self.episode(policy, s, config)?.0;
        }
        Ok(total / seeds.len() as f64)
    }
}

/// Refit of the sampling distribution: mean and per-coordinate standard
/// deviation of the highest-reward `elite_fraction` of `samples`, the
/// latter widened by `noise_floor`.
pub fn cem_update(
    samples: &[Vec<f64>],
    rewards: &[f64],
    elite_fraction: f64,
    noise_floor: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(samples.len(), rewards.len());
    let k = ((elite_fraction * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    let elite = &order[..k];
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for &i in elite {
        mean.iter_mut()
            .zip(&samples[i])
            .for_each(|(m, v)| *m += v / k as f64);
    }
    let mut var = vec![0.0; dim];
    for &i in elite {
        var.iter_mut()
            .zip(&samples[i])
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m).powi(2) / k as f64);
    }
    let std = var
        .iter()
        .map(|v| (v + noise_floor * noise_floor).sqrt())
        .collect();
    (mean, std)
}

/// Cross-entropy search over the parameters of `init` (or of a fresh
/// network when `None`). Each iteration scores every candidate on the same
/// random subset of `train_seeds`; the mean of each refit is scored on all
/// of them and the best such mean is returned. The attention is only read.
pub fn train_rl(
    ctx: &RolloutContext<'_>,
    config: &RlConfig,
    arch: &PolicyArch,
    vision: bool,
    train_seeds: &[u64],
    init: Option<&Policy>,
) -> Result<Policy> {
    config.validate()?;
    ctx.task.validate()?;
    ctx.attention.validate()?;
    if train_seeds.is_empty() {
        return Err(Error::invalid("rl needs at least one training condition"));
    }
    let mut policy = match init {
        Some(p) => {
            p.validate()?;
            if p.vision != vision {
                return Err(Error::invalid(
                    "initial policy vision flag differs from the requested one",
                ));
            }
            p.clone()
        }
        None => Policy::new(arch, ctx.attention.m, vision, config.seed)?,
    };
    policy.check_attention(ctx.attention)?;
    policy.rl_config = Some(config.clone());
    let mut rng = seeded_rng(derive_seed(config.seed, "cem"));
    let mut mean = policy.net.flat();
    let mut std = vec![config.init_noise; mean.len()];
    let mut best = mean.clone();
    let mut best_reward = ctx.mean_reward(&policy, train_seeds, config)?;
    policy.training_log.push(best_reward);
    let mut candidate = policy.clone();
    let mut subset = train_seeds.to_vec();
    let per = config.episodes_per_candidate.min(subset.len());
    for _ in 0..config.iterations {
        subset.shuffle(&mut rng);
        let seeds = &subset[..per];
        let mut samples = Vec::with_capacity(config.population);
        let mut rewards = Vec::with_capacity(config.population);
        for _ in 0..config.population {
            let theta: Vec<f64> = mean
                .iter()
                .zip(&std)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect();
            candidate.net.set_flat(&theta);
            rewards.push(ctx.mean_reward(&candidate, seeds, config)?);
            samples.push(theta);
        }
        (mean, std) = cem_update(
            &samples,
            &rewards,
            config.elite_fraction,
            config.noise_floor,
        );
        candidate.net.set_flat(&mean);
        let r = ctx.mean_reward(&candidate, train_seeds, config)?;
        policy.training_log.push(r);
        if r > best_reward {
            best_reward = r;
            best = mean.clone();
        }
    }
    policy.net.set_flat(&best);
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaattention::make_feature_bank;
    use crate::simworld::{collect_demonstrations, ObjectPlacement};
    use crate::types::{BoundingBox, DemoStep, FeatureVector, ObjectProposal, TargetConvention};

    fn place(class: &str, pos: [f64; 2], jitter: [f64; 2]) -> ObjectPlacement {
        ObjectPlacement {
            class_id: class.into(),
            instance_seed: 0,
            position: pos,
            radius: 0.04,
            jitter,
            fixed: false,
        }
    }

    struct World {
        task: TaskSpec,
        bank: FeatureBank,
        proposer: ProposerConfig,
        attention: AttentionModel,
    }

    fn world() -> World {
        let task = TaskSpec {
            horizon: 40,
            ..TaskSpec::pour(
                place("mug", [0.5, 0.5], [0.2, 0.2]),
                vec![place("cup", [0.2, 0.8], [0.0, 0.0])],
            )
        };
        let bank =
            make_feature_bank(8, &["mug", "cup"], 0.1, 0.1, 0.5, &mut seeded_rng(3)).unwrap();
        let proposer = ProposerConfig {
            clutter_count: 2,
            ..Default::default()
        };
        let crop = bank.class("mug").unwrap().prototype.clone();
        let attention =
            AttentionModel::new(1, 8, 8, Some(&[crop]), 5.0, 1e-8, &mut seeded_rng(4)).unwrap();
        World {
            task,
            bank,
            proposer,
            attention,
        }
    }

    fn demos(w: &World, n: usize) -> Vec<Demonstration> {
        let seeds: Vec<u64> = (0..n as u64).collect();
        collect_demonstrations(
            &w.task,
            n,
            &seeds,
            &w.bank,
            &w.proposer,
            TargetConvention::EeDelta,
            0.0,
        )
        .unwrap()
    }

    fn one(bbox: [f64; 4], feature: Vec<f64>) -> Scene {
        let p = ObjectProposal {
            bbox: BoundingBox::try_from(bbox).unwrap(),
            feature: FeatureVector(feature),
            label: None,
        };
        Scene::new("s", vec![p]).unwrap()
    }

    #[test]
    fn constant_expert_is_cloned() {
        let w = world();
        let scene = one([0.1, 0.1, 0.2, 0.2], vec![1.0; 8]);
        let steps = (0..20)
            .map(|k| DemoStep {
                state: RobotState {
                    position: [0.05 * k as f64 % 1.0, 0.3],
                    velocity: [0.0, 0.0],
                },
                scene: scene.clone(),
                target: [0.02, -0.01],
            })
            .collect();
        let demo = Demonstration {
            episode_id: "c".into(),
            target_convention: TargetConvention::Action,
            steps,
        };
        let config = BcConfig {
            epochs: 400,
            batch_size: 20,
            ..Default::default()
        };
        let p =
            behavior_clone(&[demo], &w.attention, &PolicyArch::default(), true, &config).unwrap();
        for x in [0.0, 0.35, 0.9] {
            let robot = RobotState {
                position: [x, 0.3],
                velocity: [0.0, 0.0],
            };
            let (nu, _) = w.attention.hard(&scene).unwrap();
            let a = p.act(&robot, Some(&nu)).unwrap();
            assert!(
                (a.velocity[0] - 0.02).abs() < 1e-3 && (a.velocity[1] + 0.01).abs() < 1e-3,
                "{a:?}"
            );
        }
    }

    #[test]
    fn zero_epochs_keep_the_initialization() {
        let w = world();
        let config = BcConfig {
            epochs: 0,
            seed: 11,
            ..Default::default()
        };
        let p = behavior_clone(
            &demos(&w, 2),
            &w.attention,
            &PolicyArch::default(),
            true,
            &config,
        )
        .unwrap();
        let fresh = Policy::new(&PolicyArch::default(), 1, true, 11).unwrap();
        assert_eq!(p.net, fresh.net);
        assert!(p.training_log.is_empty());
    }

    #[test]
    fn cloning_loss_decreases() {
        let w = world();
        let config = BcConfig {
            epochs: 60,
            ..Default::default()
        };
        let p = behavior_clone(
            &demos(&w, 3),
            &w.attention,
            &PolicyArch::default(),
            true,
            &config,
        )
        .unwrap();
        let log = &p.training_log;
        assert_eq!(log.len(), 60);
        assert!(log.last().unwrap() < &log[0]);
        for pair in log.windows(2) {
            assert!(pair[1] <= pair[0] * 1.05, "{pair:?}");
        }
    }

    #[test]
    fn cem_update_by_hand() {
        let samples = vec![
            vec![0.0, 2.0],
            vec![2.0, 4.0],
            vec![4.0, 0.0],
            vec![10.0, 10.0],
        ];
        let rewards = [1.0, 3.0, 2.0, -5.0];
        let (mean, std) = cem_update(&samples, &rewards, 1.0, 0.0);
        assert_eq!(mean, vec![4.0, 4.0]);
        assert!((std[0] - 14f64.sqrt()).abs() < 1e-12);
        // elites are samples 1 and 2
        let (mean, std) = cem_update(&samples, &rewards, 0.5, 0.0);
        assert_eq!(mean, vec![3.0, 2.0]);
        assert_eq!(std, vec![1.0, 2.0]);
        let (_, std) = cem_update(&samples, &rewards, 0.5, 0.75);
        assert!((std[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn blind_policy_ignores_the_boxes() {
        let p = Policy::new(&PolicyArch::default(), 2, false, 5).unwrap();
        let robot = RobotState {
            position: [0.3, 0.6],
            velocity: [0.01, 0.0],
        };
        let a = ObservationVector(vec![0.1; 8]);
        let b = ObservationVector(vec![0.7, 0.2, 0.9, 0.4, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(
            p.act(&robot, Some(&a)).unwrap(),
            p.act(&robot, Some(&b)).unwrap()
        );
        assert_eq!(
            p.act(&robot, Some(&a)).unwrap(),
            p.act(&robot, None).unwrap()
        );
    }

    #[test]
    fn hold_rule_keeps_box_on_poor_match() {
        let mut attention = world().attention;
        attention.w = vec![vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let mut f = vec![0.0; 8];
        f[0] = 1.0;
        let good = one([0.1, 0.1, 0.2, 0.2], f.clone());
        f[0] = 0.3;
        f[1] = 1.0;
        let poor = one([0.6, 0.6, 0.8, 0.8], f);
        let mut held = Observer::new(&attention, Some(0.5));
        let mut free = Observer::new(&attention, None);
        for o in [&mut held, &mut free] {
            o.update(&good).unwrap();
            o.update(&poor).unwrap();
        }
        assert_eq!(held.nu.0, vec![0.1, 0.1, 0.2, 0.2]);
        assert_eq!(free.nu.0, vec![0.6, 0.6, 0.8, 0.8]);
        // the first scene is always taken
        let mut first = Observer::new(&attention, Some(0.5));
        first.update(&poor).unwrap();
        assert_eq!(first.nu.0, vec![0.6, 0.6, 0.8, 0.8]);
    }

    #[test]
    fn rollout_is_deterministic_and_logs_every_step() {
        let w = world();
        let p = Policy::new(&PolicyArch::default(), 1, true, 2).unwrap();
        let a = rollout(&p, &w.attention, &w.task, 17, &w.bank, &w.proposer).unwrap();
        let b = rollout(&p, &w.attention, &w.task, 17, &w.bank, &w.proposer).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), w.task.horizon + 1);
        assert_eq!(a.attention_log.len(), w.task.horizon);
        assert!(a.attention_log.iter().all(|row| row.len() == 1));
        let mismatched = Policy::new(&PolicyArch::default(), 2, true, 2).unwrap();
        assert!(rollout(&mismatched, &w.attention, &w.task, 17, &w.bank, &w.proposer).is_err());
    }

    #[test]
    fn search_is_deterministic_and_leaves_attention_alone() {
        let w = world();
        let bits = w.attention.w_bits();
        let ctx = RolloutContext {
            task: &w.task,
            attention: &w.attention,
            bank: &w.bank,
            proposer: &w.proposer,
        };
        let config = RlConfig {
            population: 6,
            iterations: 3,
            episodes_per_candidate: 2,
            seed: 9,
            ..Default::default()
        };
        let seeds = [0, 1, 2, 3];
        let bc = behavior_clone(
            &demos(&w, 2),
            &w.attention,
            &PolicyArch::default(),
            true,
            &BcConfig::default(),
        )
        .unwrap();
        let a = train_rl(
            &ctx,
            &config,
            &PolicyArch::default(),
            true,
            &seeds,
            Some(&bc),
        )
        .unwrap();
        let b = train_rl(
            &ctx,
            &config,
            &PolicyArch::default(),
            true,
            &seeds,
            Some(&bc),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.training_log.len(),
            bc.training_log.len() + 1 + config.iterations
        );
        // the returned mean is never worse than the start on the full set
        let start = ctx.mean_reward(&bc, &seeds, &config).unwrap();
        assert!(ctx.mean_reward(&a, &seeds, &config).unwrap() >= start);
        assert_eq!(w.attention.w_bits(), bits);
    }

    #[test]
    fn cloned_policy_beats_an_untrained_one() {
        let w = world();
        let config = RlConfig::default();
        let ctx = RolloutContext {
            task: &w.task,
            attention: &w.attention,
            bank: &w.bank,
            proposer: &w.proposer,
        };
        let bc = behavior_clone(
            &demos(&w, 6),
            &w.attention,
            &PolicyArch::default(),
            true,
            &BcConfig::default(),
        )
        .unwrap();
        let fresh = Policy::new(&PolicyArch::default(), 1, true, 0).unwrap();
        let eval = [100, 101, 102, 103, 104, 105];
        let r_bc = ctx.mean_reward(&bc, &eval, &config).unwrap();
        let r_fresh = ctx.mean_reward(&fresh, &eval, &config).unwrap();
        assert!(r_bc > r_fresh, "{r_bc} vs {r_fresh}");
    }

    #[test]
    fn arch_validation() {
        let bad = PolicyArch {
            hold_below: Some(1.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(Policy::new(&PolicyArch::default(), 0, true, 0).is_err());
        let zero_width = PolicyArch {
            hidden: vec![0],
            ..Default::default()
        };
        assert!(zero_width.validate().is_err());
    }
}
