//! Deterministic 2D tabletop world.
//!
//! The robot is a velocity-controlled point carrying a circular tool. Two
//! task families exist: `pour` (bring the end-effector over the target
//! object and hold it there) and `sweep` (push an object into a fixed
//! dustpan region). Scripted experts stand in for human demonstrations.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::error::{Error, Result};
use crate::metaattention::{propose, FeatureBank, ProposerConfig, TrueObject};
use crate::rng::{derive_indexed, seeded_rng, SimRng};
use crate::types::{BoundingBox, DemoStep, Demonstration, RobotState, Scene, TargetConvention};

/// Attempts at drawing a non-overlapping jittered layout before giving up.
const PLACEMENT_ATTEMPTS: usize = 200;
/// Allowed interpenetration between footprints at placement.
const OVERLAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pour,
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub class_id: String,
    pub instance_seed: u64,
    /// Nominal center.
    pub position: [f64; 2],
    pub radius: f64,
    /// Half-widths of the uniform per-condition jitter around `position`.
    #[serde(default)]
    pub jitter: [f64; 2],
    /// Fixed objects are never pushed.
    #[serde(default)]
    pub fixed: bool,
}

/// Ground truth used only by experts and success checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessGeometry {
    /// End-effector within `radius` of object `target` for `dwell`
    /// consecutive steps.
    Pour {
        target: usize,
        radius: f64,
        dwell: usize,
    },
    /// Object `object` ends with its center inside the rectangle of
    /// half-extents `half_extent` centered on object `dustpan`.
    Sweep {
        object: usize,
        dustpan: usize,
        half_extent: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_kind: TaskKind,
    pub objects: Vec<ObjectPlacement>,
    pub success: SuccessGeometry,
    pub horizon: usize,
    pub robot_start: [f64; 2],
    pub a_max: f64,
    pub tool_radius: f64,
}

impl TaskSpec {
    /// Reach-and-hold over a single target object, with optional extra
    /// objects. Defaults: `a_max` 0.05, `r_pour` 0.05, dwell 5, `T` 100.
    pub fn pour(target: ObjectPlacement, others: Vec<ObjectPlacement>) -> Self {
        let mut objects = vec![target];
        objects.extend(others);
        Self {
            task_kind: TaskKind::Pour,
            objects,
            success: SuccessGeometry::Pour {
                target: 0,
                radius: 0.05,
                dwell: 5,
            },
            horizon: 100,
            robot_start: [0.5, 0.1],
            a_max: 0.05,
            tool_radius: 0.03,
        }
    }

    /// Push `object` into the region around `dustpan`.
    pub fn sweep(
        object: ObjectPlacement,
        dustpan: ObjectPlacement,
        others: Vec<ObjectPlacement>,
    ) -> Self {
        let mut objects = vec![
            object,
            ObjectPlacement {
                fixed: true,
                ..dustpan
            },
        ];
        objects.extend(others);
        Self {
            task_kind: TaskKind::Sweep,
            objects,
            success: SuccessGeometry::Sweep {
                object: 0,
                dustpan: 1,
                half_extent: [0.08, 0.06],
            },
            horizon: 100,
            robot_start: [0.5, 0.1],
            a_max: 0.05,
            tool_radius: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::invalid("task.horizon must be ≥ 2"));
        }
        if !(self.a_max > 0.0) || !(self.tool_radius > 0.0) {
            return Err(Error::invalid(
                "task.a_max and task.tool_radius must be > 0",
            ));
        }
        if !in_unit(self.robot_start) {
            return Err(Error::invalid("task.robot_start must lie in [0,1]²"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !in_unit(o.position) {
                return Err(Error::invalid(format!(
                    "task.objects[{i}].position must lie in [0,1]²"
                )));
            }
            if !(o.radius > 0.0) {
                return Err(Error::invalid(format!(
                    "task.objects[{i}].radius must be > 0"
                )));
            }
            if o.jitter.iter().any(|j| !(*j >= 0.0)) {
                return Err(Error::invalid(format!(
                    "task.objects[{i}].jitter must be ≥ 0"
                )));
            }
        }
        let n = self.objects.len();
        let ok = match (&self.success, self.task_kind) {
            (
                SuccessGeometry::Pour {
                    target,
                    radius,
                    dwell,
                },
                TaskKind::Pour,
            ) => *target < n && *radius > 0.0 && *dwell >= 1,
            (
                SuccessGeometry::Sweep {
                    object,
                    dustpan,
                    half_extent,
                },
                TaskKind::Sweep,
            ) => {
                *object < n
                    && *dustpan < n
                    && object != dustpan
                    && half_extent.iter().all(|h| *h > 0.0)
            }
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(
                "task.success does not match task_kind or objects",
            ));
        }
        Ok(())
    }

    /// Indices of the objects the task depends on (evaluation only).
    pub fn relevant_objects(&self) -> Vec<usize> {
        match self.success {
            SuccessGeometry::Pour { target, .. } => vec![target],
            SuccessGeometry::Sweep {
                object, dustpan, ..
            } => vec![object, dustpan],
        }
    }
}

impl Artifact for TaskSpec {
    const KIND: &'static str = "task_spec";

    fn validate(&self) -> Result<()> {
        TaskSpec::validate(self)
    }
}

fn in_unit(p: [f64; 2]) -> bool {
    p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub class_id: String,
    pub instance_seed: u64,
    pub position: [f64; 2],
    pub radius: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub robot: RobotState,
    pub objects: Vec<SimObject>,
    pub t: usize,
}

/// Velocity command; each component is clamped to `[-a_max, a_max]` when
/// applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub velocity: [f64; 2],
}

impl Action {
    pub fn new(vx: f64, vy: f64) -> Self {
        Self { velocity: [vx, vy] }
    }

    pub fn clamped(self, a_max: f64) -> Self {
        let c = |v: f64| {
            if v.is_finite() {
                v.clamp(-a_max, a_max)
            } else {
                0.0
            }
        };
        Self::new(c(self.velocity[0]), c(self.velocity[1]))
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn len(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn clamp_unit(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

fn overlap_pair(objects: &[SimObject]) -> Option<(usize, usize)> {
    for i in 0..objects.len() {
        for j in 0..i {
            let d = len(sub(objects[i].position, objects[j].position));
            if d < objects[i].radius + objects[j].radius - OVERLAP_TOLERANCE {
                return Some((j, i));
            }
        }
    }
    None
}

/// Initial state of condition `condition_seed`.
pub fn reset(task: &TaskSpec, condition_seed: u64) -> Result<SimState> {
    task.validate()?;
    let mut rng = seeded_rng(derive_indexed(condition_seed, "placement", 0));
    let jittered = task.objects.iter().any(|o| o.jitter != [0.0, 0.0]);
    let attempts = if jittered { PLACEMENT_ATTEMPTS } else { 1 };
    let mut last = None;
    for _ in 0..attempts {
        let objects: Vec<SimObject> = task
            .objects
            .iter()
            .map(|o| {
                let mut p = o.position;
                for (pk, &j) in p.iter_mut().zip(&o.jitter) {
                    if j > 0.0 {
                        *pk += rng.random_range(-j..=j);
                    }
                }
                SimObject {
                    class_id: o.class_id.clone(),
                    instance_seed: o.instance_seed,
                    position: clamp_unit(p),
                    radius: o.radius,
                    fixed: o.fixed,
                }
            })
            .collect();
        match overlap_pair(&objects) {
            None => {
                return Ok(SimState {
                    robot: RobotState::at(task.robot_start),
                    objects,
                    t: 0,
                })
            }
            Some(pair) => last = Some((objects, pair)),
        }
    }
    let (objects, (a, b)) = last.expect("at least one placement attempt");
    Err(Error::Placement {
        a: objects[a].class_id.clone(),
        b: objects[b].class_id.clone(),
    })
}

/// One control step: move the robot, then (in `sweep`) push any object
/// overlapping the tool out along the center-to-center normal.
pub fn step(task: &TaskSpec, state: &SimState, action: Action) -> SimState {
    let a = action.clamped(task.a_max);
    let before = state.robot.position;
    let mut pos = clamp_unit([before[0] + a.velocity[0], before[1] + a.velocity[1]]);
    let mut objects = state.objects.clone();
    if task.task_kind == TaskKind::Sweep {
        for obj in objects.iter_mut().filter(|o| !o.fixed) {
            let reach = task.tool_radius + obj.radius;
            let mut delta = sub(obj.position, pos);
            let mut dist = len(delta);
            if dist >= reach {
                continue;
            }
            if dist < 1e-12 {
                // Degenerate contact: push along the motion direction.
                delta = if len(a.velocity) > 0.0 {
                    a.velocity
                } else {
                    [1.0, 0.0]
                };
                dist = len(delta);
            }
            let n = [delta[0] / dist, delta[1] / dist];
            obj.position = clamp_unit([pos[0] + n[0] * reach, pos[1] + n[1] * reach]);
            // An object pinned against a wall pushes the tool back instead.
            let back = sub(pos, obj.position);
            let gap = len(back);
            if gap < reach {
                let m = if gap > 1e-12 {
                    [back[0] / gap, back[1] / gap]
                } else {
                    [-n[0], -n[1]]
                };
                pos = clamp_unit([
                    obj.position[0] + m[0] * reach,
                    obj.position[1] + m[1] * reach,
                ]);
            }
        }
    }
    SimState {
        robot: RobotState {
            position: pos,
            velocity: sub(pos, before),
        },
        objects,
        t: state.t + 1,
    }
}

/// Proposal set for the current state: object footprints fed through the
/// proposal oracle.
pub fn observe(
    state: &SimState,
    bank: &FeatureBank,
    proposer: &ProposerConfig,
    rng: &mut SimRng,
) -> Result<Scene> {
    let truth = state
        .objects
        .iter()
        .map(|o| {
            Ok(TrueObject {
                class_id: o.class_id.clone(),
                instance_seed: o.instance_seed,
                bbox: BoundingBox::around(o.position, o.radius)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scene = propose(&truth, bank, proposer, rng)?;
    scene.scene_id = format!("t{}", state.t);
    Ok(scene)
}

fn capped(v: [f64; 2], cap: f64) -> Action {
    let l = len(v);
    if l > cap {
        Action::new(v[0] * cap / l, v[1] * cap / l)
    } else {
        Action::new(v[0], v[1])
    }
}

/// Gain of the pour expert's proportional controller.
const POUR_GAIN: f64 = 0.5;
/// How far past the contact point the sweep expert aims, per step.
const PUSH_DEPTH: f64 = 0.03;
/// Distance from the dustpan center over which pushing slows to a stop.
const PUSH_SLOWDOWN: f64 = 0.06;
/// Extra standoff of the staging point behind the object.
const STAGING_STANDOFF: f64 = 0.05;
/// Once the object is this close to the dustpan center the expert stops.
const STOP_RADIUS: f64 = 0.025;
/// Lateral misalignment at which the expert stops advancing and re-stages.
const ALIGN_WIDTH: f64 = 0.03;

/// Expert controller with access to ground-truth positions.
pub fn scripted_expert(task: &TaskSpec, state: &SimState) -> Action {
    let pos = state.robot.position;
    match task.success {
        SuccessGeometry::Pour { target, .. } => {
            let goal = state.objects[target].position;
            let d = sub(goal, pos);
            capped([POUR_GAIN * d[0], POUR_GAIN * d[1]], task.a_max)
        }
        SuccessGeometry::Sweep {
            object, dustpan, ..
        } => {
            let obj = &state.objects[object];
            let goal = state.objects[dustpan].position;
            let to_goal = sub(goal, obj.position);
            let remaining = len(to_goal);
            if remaining < STOP_RADIUS {
                return Action::default();
            }
            let u = [to_goal[0] / remaining, to_goal[1] / remaining];
            let reach = task.tool_radius + obj.radius;
            let rel = sub(pos, obj.position);
            let along = rel[0] * u[0] + rel[1] * u[1];
            let lateral = len([rel[0] - along * u[0], rel[1] - along * u[1]]);
            // Advance only when lined up behind the object.
            let aligned = (1.0 - lateral / ALIGN_WIDTH).clamp(0.0, 1.0)
                * (-along / ALIGN_WIDTH).clamp(0.0, 1.0);
            let depth = PUSH_DEPTH * ((remaining - STOP_RADIUS) / PUSH_SLOWDOWN).min(1.0);
            let push_point = reach - depth;
            let staging = reach + STAGING_STANDOFF;
            let standoff = aligned * push_point + (1.0 - aligned) * staging;
            let aim = [
                obj.position[0] - standoff * u[0],
                obj.position[1] - standoff * u[1],
            ];
            capped(sub(aim, pos), task.a_max)
        }
    }
}

/// Whether a trajectory of states (initial state first) solved the task.
pub fn success(task: &TaskSpec, trajectory: &[SimState]) -> bool {
    match task.success {
        SuccessGeometry::Pour {
            target,
            radius,
            dwell,
        } => {
            let mut run = 0;
            for s in trajectory {
                if len(sub(s.robot.position, s.objects[target].position)) <= radius {
                    run += 1;
                    if run >= dwell {
                        return true;
                    }
                } else {
                    run = 0;
                }
            }
            false
        }
        SuccessGeometry::Sweep {
            object,
            dustpan,
            half_extent,
        } => trajectory.last().is_some_and(|s| {
            let d = sub(s.objects[object].position, s.objects[dustpan].position);
            d[0].abs() <= half_extent[0] && d[1].abs() <= half_extent[1]
        }),
    }
}

/// Runs `controller` for the task horizon; returns all states including
/// the initial one and the (unclamped) actions issued.
pub fn run_episode(
    task: &TaskSpec,
    initial: SimState,
    mut controller: impl FnMut(&SimState) -> Result<Action>,
) -> Result<(Vec<SimState>, Vec<Action>)> {
    let mut states = Vec::with_capacity(task.horizon + 1);
    let mut actions = Vec::with_capacity(task.horizon);
    states.push(initial);
    for _ in 0..task.horizon {
        let s = states.last().expect("nonempty");
        let a = controller(s)?;
        let next = step(task, s, a);
        actions.push(a);
        states.push(next);
    }
    Ok((states, actions))
}

/// Observation-noise stream of one episode.
pub fn observation_rng(condition_seed: u64, salt: &str) -> SimRng {
    seeded_rng(derive_indexed(condition_seed, salt, 1))
}

/// Expert demonstrations on the first `n_episodes` of `condition_seeds`.
///
/// Each executed action is the expert's plus Gaussian noise of standard
/// deviation `action_noise · ‖a‖` per component, mimicking an imprecise
/// human demonstrator who is still when at rest. Every episode must succeed; failing conditions are
/// reported together.
#[allow(clippy::too_many_arguments)]
pub fn collect_demonstrations(
    task: &TaskSpec,
    n_episodes: usize,
    condition_seeds: &[u64],
    bank: &FeatureBank,
    proposer: &ProposerConfig,
    target_convention: TargetConvention,
    action_noise: f64,
) -> Result<Vec<Demonstration>> {
    if !(action_noise >= 0.0 && action_noise.is_finite()) {
        return Err(Error::invalid("action_noise must be finite and ≥ 0"));
    }
    if n_episodes > condition_seeds.len() {
        return Err(Error::invalid(format!(
            "requested {n_episodes} demonstrations but only {} condition seeds",
            condition_seeds.len()
        )));
    }
    let mut demos = Vec::with_capacity(n_episodes);
    let mut failed = Vec::new();
    for &seed in &condition_seeds[..n_episodes] {
        let initial = reset(task, seed)?;
        let mut noise = seeded_rng(derive_indexed(seed, "expert-noise", 0));
        let (states, actions) = run_episode(task, initial, |s| {
            let a = scripted_expert(task, s);
            let sigma = action_noise * len(a.velocity);
            if sigma == 0.0 {
                return Ok(a);
            }
            let mut draw = || {
                sigma * {
                    let z: f64 = StandardNormal.sample(&mut noise);
                    z
                }
            };
            Ok(Action::new(a.velocity[0] + draw(), a.velocity[1] + draw()))
        })?;
        if !success(task, &states) {
            failed.push(seed);
            continue;
        }
        let mut rng = observation_rng(seed, "demo");
        let mut steps = Vec::with_capacity(task.horizon);
        for (t, a) in actions.iter().enumerate() {
            let scene = observe(&states[t], bank, proposer, &mut rng)?;
            let target = match target_convention {
                TargetConvention::Action => a.clamped(task.a_max).velocity,
                TargetConvention::EeDelta => {
                    sub(states[t + 1].robot.position, states[t].robot.position)
                }
            };
            steps.push(DemoStep {
                state: states[t].robot,
                scene,
                target,
            });
        }
        demos.push(Demonstration {
            episode_id: format!("cond-{seed}"),
            target_convention,
            steps,
        });
    }
    if !failed.is_empty() {
        return Err(Error::ExpertFailure(failed));
    }
    Ok(demos)
}
