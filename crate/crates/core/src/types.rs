//! Domain types shared by the proposal oracle, the attention model, the
//! simulator and the policy learners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized image coordinates, stored as corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let c = [x_min, y_min, x_max, y_max];
        if c.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid(format!(
                "box coordinates must lie in [0,1], got {c:?}"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "box corners must satisfy min < max, got {c:?}"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Square footprint of a disc, clipped to the unit square.
    ///
    /// Discs lying entirely outside the image are rejected by the box
    /// invariants; callers keep centers inside `[0,1]²`.
    pub fn around(center: [f64; 2], radius: f64) -> Result<Self> {
        Self::new(
            (center[0] - radius).max(0.0),
            (center[1] - radius).max(0.0),
            (center[0] + radius).min(1.0),
            (center[1] + radius).min(1.0),
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.coords()
    }
}

/// Semantic descriptor of one proposal. Raw features need not be unit norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature entries must be finite"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        self.dot(other) / (self.norm() * other.norm())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One object hypothesis: where it is and what it looks like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectProposal {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub feature: FeatureVector,
    /// Ground-truth class, kept for evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Deserialize)]
struct RawScene {
    scene_id: String,
    proposals: Vec<ObjectProposal>,
}

/// The proposal set of one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScene")]
pub struct Scene {
    pub scene_id: String,
    proposals: Vec<ObjectProposal>,
}

impl TryFrom<RawScene> for Scene {
    type Error = Error;

    fn try_from(raw: RawScene) -> Result<Self> {
        Scene::new(raw.scene_id, raw.proposals)
    }
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, proposals: Vec<ObjectProposal>) -> Result<Self> {
        let Some(first) = proposals.first() else {
            return Err(Error::EmptyScene);
        };
        let d = first.feature.dim();
        if d == 0 {
            return Err(Error::invalid("feature dimension must be ≥ 1"));
        }
        for (i, p) in proposals.iter().enumerate() {
            if p.feature.dim() != d {
                return Err(Error::Schema {
                    field: format!("proposals[{i}].feature"),
                    message: format!(
                        "dimension {} differs from scene dimension {d}",
                        p.feature.dim()
                    ),
                });
            }
            if p.feature.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema {
                    field: format!("proposals[{i}].feature"),
                    message: "non-finite entry".into(),
                });
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            proposals,
        })
    }

    pub fn proposals(&self) -> &[ObjectProposal] {
        &self.proposals
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.proposals[0].feature.dim()
    }

    /// Copy of the scene with evaluation labels removed.
    pub fn without_labels(&self) -> Scene {
        Scene {
            scene_id: self.scene_id.clone(),
            proposals: self
                .proposals
                .iter()
                .map(|p| ObjectProposal {
                    label: None,
                    ..p.clone()
                })
                .collect(),
        }
    }

    /// Same proposals reordered so that entry `k` is the old entry `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Scene {
        Scene {
            scene_id: self.scene_id.clone(),
            proposals: perm.iter().map(|&i| self.proposals[i].clone()).collect(),
        }
    }
}

/// End-effector state of the desk-scale robot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    #[serde(rename = "pos")]
    pub position: [f64; 2],
    #[serde(rename = "vel")]
    pub velocity: [f64; 2],
}

impl RobotState {
    pub fn at(position: [f64; 2]) -> Self {
        Self {
            position,
            velocity: [0.0; 2],
        }
    }

    /// `[x, y, vx, vy]`, the layout consumed by the networks.
    pub fn as_input(&self) -> [f64; 4] {
        [
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ]
    }
}

/// What a demonstration's motion target means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetConvention {
    /// The logged velocity command.
    Action,
    /// `position(t+1) − position(t)`.
    #[default]
    EeDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub state: RobotState,
    pub scene: Scene,
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub episode_id: String,
    pub target_convention: TargetConvention,
    pub steps: Vec<DemoStep>,
}

impl Demonstration {
    pub fn validate(&self) -> Result<()> {
        if self.steps.len() < 2 {
            return Err(Error::invalid(format!(
                "demonstration `{}` has {} steps, need ≥ 2",
                self.episode_id,
                self.steps.len()
            )));
        }
        let d = self.steps[0].scene.feature_dim();
        for (t, s) in self.steps.iter().enumerate() {
            if s.scene.feature_dim() != d {
                return Err(Error::Schema {
                    field: format!("steps[{t}].scene"),
                    message: "feature dimension differs within the episode".into(),
                });
            }
            if s.target.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema {
                    field: format!("steps[{t}].target"),
                    message: "non-finite target".into(),
                });
            }
        }
        Ok(())
    }
}

/// Concatenated attended boxes, four coordinates per attention row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationVector(pub Vec<f64>);

impl ObservationVector {
    pub fn zeros(rows: usize) -> Self {
        Self(vec![0.0; 4 * rows])
    }

    pub fn rows(&self) -> usize {
        self.0.len() / 4
    }

    pub fn block(&self, row: usize) -> [f64; 4] {
        let b = &self.0[4 * row..4 * row + 4];
        [b[0], b[1], b[2], b[3]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(b: [f64; 4], f: Vec<f64>) -> ObjectProposal {
        ObjectProposal {
            bbox: BoundingBox::try_from(b).unwrap(),
            feature: FeatureVector(f),
            label: None,
        }
    }

    #[test]
    fn box_rejects_bad_corners() {
        assert!(BoundingBox::new(0.5, 0.1, 0.4, 0.2).is_err());
        assert!(BoundingBox::new(0.1, 0.1, 0.1, 0.2).is_err());
        assert!(BoundingBox::new(-0.1, 0.1, 0.4, 0.2).is_err());
        assert!(BoundingBox::new(0.1, 0.1, 0.4, 1.2).is_err());
        assert!(BoundingBox::new(0.1, 0.1, f64::NAN, 0.2).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn footprint_is_clipped() {
        let b = BoundingBox::around([0.01, 0.5], 0.04).unwrap();
        assert_eq!(b.x_min(), 0.0);
        assert!((b.x_max() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_rejected() {
        let err = Scene::new("s", vec![]).unwrap_err();
        assert!(err.to_string().contains("N ≥ 1 violated"));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let err = Scene::new(
            "s",
            vec![
                prop([0.0, 0.0, 0.1, 0.1], vec![1.0, 0.0]),
                prop([0.0, 0.0, 0.1, 0.1], vec![1.0, 0.0, 0.0]),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn labels_stripped() {
        let mut p = prop([0.0, 0.0, 0.1, 0.1], vec![1.0]);
        p.label = Some("mug".into());
        let s = Scene::new("s", vec![p]).unwrap();
        assert!(s.without_labels().proposals()[0].label.is_none());
    }

    #[test]
    fn short_demo_rejected() {
        let scene = Scene::new("s", vec![prop([0.0, 0.0, 0.1, 0.1], vec![1.0])]).unwrap();
        let demo = Demonstration {
            episode_id: "e".into(),
            target_convention: TargetConvention::EeDelta,
            steps: vec![DemoStep {
                state: RobotState::default(),
                scene,
                target: [0.0, 0.0],
            }],
        };
        assert!(demo.validate().is_err());
    }
}
