//! Task-independent object hypotheses.
//!
//! A [`FeatureBank`] holds one unit prototype per semantic class. Object
//! instances are the prototype plus a fixed per-instance offset; each
//! observation adds a fresh nuisance offset. [`propose`] turns a list of
//! ground-truth objects into a [`Scene`] with jittered boxes, occasional
//! misses and clutter proposals, the way a region-proposal network with a
//! pretrained feature extractor would.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::{load_artifact, save_artifact, Artifact};
use crate::error::{Error, Result};
use crate::rng::{derive_indexed, derive_seed, seeded_rng, SimRng};
use crate::types::{dot, norm, BoundingBox, FeatureVector, ObjectProposal, Scene};

/// Rejection-sampling attempts per class before giving up.
const MAX_ATTEMPTS: usize = 20_000;

/// Label attached to clutter proposals.
pub const CLUTTER_LABEL: &str = "clutter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub class_id: String,
    pub prototype: FeatureVector,
    pub instance_noise: f64,
    pub nuisance_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank {
    pub dimension: usize,
    pub classes: Vec<ClassPrototype>,
    /// Lower bound on the pairwise angle between prototypes, in radians.
    pub min_separation: f64,
}

/// A group of classes whose prototypes sit at a common angle `spread`
/// from a shared center direction. A single-member group with spread 0 is
/// an ordinary isolated class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCluster {
    pub members: Vec<String>,
    #[serde(default)]
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClutterFeatureMode {
    /// Uniform on the unit sphere.
    #[default]
    RandomUnit,
    /// A bank prototype rotated by `near_class_angle` in a random direction.
    NearClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub box_jitter: f64,
    pub clutter_count: usize,
    #[serde(default)]
    pub clutter_feature_mode: ClutterFeatureMode,
    pub miss_rate: f64,
    /// Angle between a near-class clutter feature and its source prototype.
    #[serde(default = "default_near_class_angle")]
    pub near_class_angle: f64,
    /// Classes the proposer never reports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppressed_classes: Vec<String>,
}

fn default_near_class_angle() -> f64 {
    0.8
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            box_jitter: 0.0,
            clutter_count: 0,
            clutter_feature_mode: ClutterFeatureMode::RandomUnit,
            miss_rate: 0.0,
            near_class_angle: default_near_class_angle(),
            suppressed_classes: Vec::new(),
        }
    }
}

impl ProposerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.box_jitter.is_finite() || self.box_jitter < 0.0 {
            return Err(Error::invalid("proposer.box_jitter must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return Err(Error::invalid("proposer.miss_rate must lie in [0,1)"));
        }
        if !(0.0..=PI).contains(&self.near_class_angle) {
            return Err(Error::invalid(
                "proposer.near_class_angle must lie in [0,π]",
            ));
        }
        Ok(())
    }
}

/// A ground-truth object handed to the proposer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueObject {
    pub class_id: String,
    pub instance_seed: u64,
    pub bbox: BoundingBox,
}

fn gaussian_vec(d: usize, scale: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..d)
        .map(|_| {
            scale * {
                let z: f64 = StandardNormal.sample(rng);
                z
            }
        })
        .collect::<Vec<f64>>()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    for x in &mut v {
        *x /= n;
    }
    v
}

fn random_unit(d: usize, rng: &mut SimRng) -> Vec<f64> {
    loop {
        let v = gaussian_vec(d, 1.0, rng);
        if norm(&v) > 1e-12 {
            return normalized(v);
        }
    }
}

/// Unit vector orthogonal to every (unit, mutually orthogonal) vector in `basis`.
fn random_orthogonal(basis: &[Vec<f64>], d: usize, rng: &mut SimRng) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(d, 1.0, rng);
        for b in basis {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        if norm(&v) > 1e-6 {
            return normalized(v);
        }
    }
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

/// Prototypes drawn uniformly on the sphere, kept only if they are at least
/// `min_separation` radians from every previously accepted prototype.
pub fn make_feature_bank(
    d: usize,
    class_ids: &[&str],
    instance_noise: f64,
    nuisance_noise: f64,
    min_separation: f64,
    rng: &mut SimRng,
) -> Result<FeatureBank> {
    let clusters: Vec<ClassCluster> = class_ids
        .iter()
        .map(|c| ClassCluster {
            members: vec![(*c).to_string()],
            spread: 0.0,
        })
        .collect();
    make_clustered_bank(
        d,
        &clusters,
        instance_noise,
        nuisance_noise,
        min_separation,
        rng,
    )
}

/// Like [`make_feature_bank`], but classes come in clusters: cluster centers
/// are separated by `min_separation`, and members of a cluster are placed at
/// angle `spread` from their center along mutually orthogonal directions, so
/// two members of one cluster have cosine `cos²(spread)`.
pub fn make_clustered_bank(
    d: usize,
    clusters: &[ClassCluster],
    instance_noise: f64,
    nuisance_noise: f64,
    min_separation: f64,
    rng: &mut SimRng,
) -> Result<FeatureBank> {
    if d < 2 {
        return Err(Error::invalid("feature dimension must be ≥ 2"));
    }
    for v in [instance_noise, nuisance_noise, min_separation] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(
                "noise scales and separation must be finite and ≥ 0",
            ));
        }
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(clusters.len());
    for _ in clusters {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let v = random_unit(d, rng);
            if centers.iter().all(|c| angle(c, &v) >= min_separation) {
                accepted = Some(v);
                break;
            }
        }
        match accepted {
            Some(v) => centers.push(v),
            None => {
                return Err(Error::Separation {
                    classes: clusters.len(),
                    angle: min_separation,
                    dim: d,
                })
            }
        }
    }

    let mut classes = Vec::new();
    for (cluster, center) in clusters.iter().zip(&centers) {
        if cluster.members.len() > 1 && cluster.members.len() >= d {
            return Err(Error::invalid(format!(
                "cluster of {} members needs dimension > {}",
                cluster.members.len(),
                cluster.members.len()
            )));
        }
        let mut basis = vec![center.clone()];
        for id in &cluster.members {
            let proto = if cluster.spread == 0.0 {
                center.clone()
            } else {
                let dir = random_orthogonal(&basis, d, rng);
                let (s, c) = cluster.spread.sin_cos();
                let p: Vec<f64> = center
                    .iter()
                    .zip(&dir)
                    .map(|(a, b)| c * a + s * b)
                    .collect();
                basis.push(dir);
                normalized(p)
            };
            classes.push(ClassPrototype {
                class_id: id.clone(),
                prototype: FeatureVector(proto),
                instance_noise,
                nuisance_noise,
            });
        }
    }

    let mut min_angle = min_separation;
    for i in 0..classes.len() {
        for j in 0..i {
            let a = angle(&classes[i].prototype.0, &classes[j].prototype.0);
            min_angle = min_angle.min(a);
        }
    }
    let bank = FeatureBank {
        dimension: d,
        classes,
        min_separation: min_angle,
    };
    bank.validate()?;
    Ok(bank)
}

impl FeatureBank {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.classes {
            if !seen.insert(c.class_id.as_str()) {
                return Err(Error::invalid(format!("duplicate class `{}`", c.class_id)));
            }
            if c.prototype.dim() != self.dimension {
                return Err(Error::Dimension {
                    what: "prototype",
                    expected: self.dimension,
                    got: c.prototype.dim(),
                });
            }
            if (c.prototype.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "prototype `{}` is not unit norm",
                    c.class_id
                )));
            }
            for v in [c.instance_noise, c.nuisance_noise] {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!(
                        "noise scales of `{}` must be finite and ≥ 0",
                        c.class_id
                    )));
                }
            }
        }
        for i in 0..self.classes.len() {
            for j in 0..i {
                let a = angle(&self.classes[i].prototype.0, &self.classes[j].prototype.0);
                if a < self.min_separation - 1e-12 {
                    return Err(Error::invalid(format!(
                        "prototypes `{}` and `{}` closer than min_separation",
                        self.classes[i].class_id, self.classes[j].class_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn class(&self, class_id: &str) -> Result<&ClassPrototype> {
        self.classes
            .iter()
            .find(|c| c.class_id == class_id)
            .ok_or_else(|| Error::UnknownClass(class_id.to_string()))
    }

    /// Sets the noise scales of every class.
    pub fn with_noise(mut self, instance_noise: f64, nuisance_noise: f64) -> Self {
        for c in &mut self.classes {
            c.instance_noise = instance_noise;
            c.nuisance_noise = nuisance_noise;
        }
        self
    }

    /// Class whose prototype has the largest cosine with `feature`.
    pub fn nearest_class(&self, feature: &FeatureVector) -> Option<&str> {
        self.classes
            .iter()
            .map(|c| (c.class_id.as_str(), c.prototype.cosine(feature)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(id, _)| id)
    }
}

impl Artifact for FeatureBank {
    const KIND: &'static str = "feature_bank";

    fn validate(&self) -> Result<()> {
        FeatureBank::validate(self)
    }
}

/// Stream that fixes the appearance of one object instance.
pub fn instance_rng(class_id: &str, instance_seed: u64) -> SimRng {
    seeded_rng(derive_indexed(
        derive_seed(0, "instance"),
        class_id,
        instance_seed,
    ))
}

/// prototype + instance offset + nuisance offset, renormalized.
///
/// Offsets are isotropic Gaussians with per-coordinate variance `scale²/d`,
/// so `scale` is their expected length.
pub fn sample_instance_feature(
    bank: &FeatureBank,
    class_id: &str,
    instance_rng: &mut SimRng,
    nuisance_rng: &mut SimRng,
) -> Result<FeatureVector> {
    let class = bank.class(class_id)?;
    if class.instance_noise == 0.0 && class.nuisance_noise == 0.0 {
        return Ok(class.prototype.clone());
    }
    let d = bank.dimension;
    let per_coord = 1.0 / (d as f64).sqrt();
    let inst = gaussian_vec(d, class.instance_noise * per_coord, instance_rng);
    let nuis = gaussian_vec(d, class.nuisance_noise * per_coord, nuisance_rng);
    let v: Vec<f64> = class
        .prototype
        .0
        .iter()
        .zip(inst.iter().zip(&nuis))
        .map(|(p, (a, b))| p + a + b)
        .collect();
    Ok(FeatureVector(normalized(v)))
}

fn jitter_box(b: &BoundingBox, sigma: f64, rng: &mut SimRng) -> BoundingBox {
    if sigma == 0.0 {
        return *b;
    }
    let mut c = b.coords();
    for v in &mut c {
        let n: f64 = StandardNormal.sample(rng);
        *v = (*v + sigma * n).clamp(0.0, 1.0);
    }
    valid_box(c[0], c[1], c[2], c[3])
}

/// Sorts and clamps corners, widening degenerate extents to a minimum size.
fn valid_box(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    const MIN_EXTENT: f64 = 1e-6;
    let fix = |a: f64, b: f64| {
        let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
        if hi - lo < MIN_EXTENT {
            let mid = (0.5 * (lo + hi)).clamp(MIN_EXTENT, 1.0 - MIN_EXTENT);
            lo = mid - 0.5 * MIN_EXTENT;
            hi = mid + 0.5 * MIN_EXTENT;
        }
        (lo.max(0.0), hi.min(1.0))
    };
    let (x_min, x_max) = fix(x0, x1);
    let (y_min, y_max) = fix(y0, y1);
    BoundingBox::new(x_min, y_min, x_max, y_max).expect("corner repair yields a valid box")
}

fn clutter_box(rng: &mut SimRng) -> BoundingBox {
    let cx: f64 = rng.random();
    let cy: f64 = rng.random();
    let hw = rng.random_range(0.02..0.08);
    let hh = rng.random_range(0.02..0.08);
    valid_box(
        (cx - hw).max(0.0),
        (cy - hh).max(0.0),
        (cx + hw).min(1.0),
        (cy + hh).min(1.0),
    )
}

fn clutter_feature(bank: &FeatureBank, config: &ProposerConfig, rng: &mut SimRng) -> FeatureVector {
    let d = bank.dimension;
    match config.clutter_feature_mode {
        ClutterFeatureMode::RandomUnit => FeatureVector(random_unit(d, rng)),
        ClutterFeatureMode::NearClass => {
            if bank.classes.is_empty() {
                return FeatureVector(random_unit(d, rng));
            }
            let k = rng.random_range(0..bank.classes.len());
            let proto = &bank.classes[k].prototype.0;
            let dir = random_orthogonal(std::slice::from_ref(proto), d, rng);
            let (s, c) = config.near_class_angle.sin_cos();
            FeatureVector(proto.iter().zip(&dir).map(|(p, q)| c * p + s * q).collect())
        }
    }
}

/// Produces the proposal set for one observation of `true_objects`.
pub fn propose(
    true_objects: &[TrueObject],
    bank: &FeatureBank,
    config: &ProposerConfig,
    rng: &mut SimRng,
) -> Result<Scene> {
    config.validate()?;
    let mut proposals = Vec::with_capacity(true_objects.len() + config.clutter_count);
    for obj in true_objects {
        // Always draw so the stream position does not depend on the outcome.
        let missed = rng.random::<f64>() < config.miss_rate;
        let bbox = jitter_box(&obj.bbox, config.box_jitter, rng);
        let mut inst = instance_rng(&obj.class_id, obj.instance_seed);
        let feature = sample_instance_feature(bank, &obj.class_id, &mut inst, rng)?;
        if !missed && !config.suppressed_classes.contains(&obj.class_id) {
            proposals.push(ObjectProposal {
                bbox,
                feature,
                label: Some(obj.class_id.clone()),
            });
        }
    }
    for _ in 0..config.clutter_count {
        let bbox = clutter_box(rng);
        let feature = clutter_feature(bank, config, rng);
        proposals.push(ObjectProposal {
            bbox,
            feature,
            label: Some(CLUTTER_LABEL.to_string()),
        });
    }
    proposals.shuffle(rng);
    Scene::new("proposals", proposals)
}

/// Reads a scene computed elsewhere (e.g. a real detector). Features are
/// taken as-is; no unit norm is assumed.
pub fn load_external_scene(path: impl AsRef<Path>) -> Result<Scene> {
    load_artifact(path)
}

pub fn save_scene(path: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    save_artifact(path, scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn two_classes_in_plane_are_orthogonal_or_wider() {
        let bank =
            make_feature_bank(2, &["a", "b"], 0.0, 0.0, FRAC_PI_2, &mut seeded_rng(3)).unwrap();
        let a = &bank.classes[0].prototype.0;
        let b = &bank.classes[1].prototype.0;
        assert!(angle(a, b) >= FRAC_PI_2);
        assert!((norm(a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn six_classes_in_32_dims() {
        let ids = ["a", "b", "c", "d", "e", "f"];
        let bank = make_feature_bank(32, &ids, 0.1, 0.1, 0.5, &mut seeded_rng(1)).unwrap();
        let mut pairs = 0;
        for i in 0..6 {
            for j in 0..i {
                assert!(angle(&bank.classes[i].prototype.0, &bank.classes[j].prototype.0) >= 0.5);
                pairs += 1;
            }
        }
        assert_eq!(pairs, 15);
    }

    #[test]
    fn pigeonhole_failure() {
        let err = make_feature_bank(
            2,
            &["a", "b", "c", "d", "e"],
            0.0,
            0.0,
            FRAC_PI_2,
            &mut seeded_rng(0),
        )
        .unwrap_err();
        assert_eq!(
            err.to_string(),
            "cannot separate 5 classes at angle 1.5707963267948966 in dimension 2"
        );
    }

    #[test]
    fn clustered_members_share_a_center() {
        let clusters = vec![
            ClassCluster {
                members: vec!["orange".into(), "lemon".into(), "lime".into()],
                spread: 0.7,
            },
            ClassCluster {
                members: vec!["apple".into()],
                spread: 0.0,
            },
        ];
        let bank = make_clustered_bank(32, &clusters, 0.0, 0.0, 1.2, &mut seeded_rng(5)).unwrap();
        let o = &bank.class("orange").unwrap().prototype;
        let l = &bank.class("lemon").unwrap().prototype;
        assert!((o.cosine(l) - 0.7f64.cos().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_returns_prototype() {
        let bank = make_feature_bank(8, &["a", "b"], 0.0, 0.0, 0.5, &mut seeded_rng(2)).unwrap();
        let f =
            sample_instance_feature(&bank, "a", &mut seeded_rng(9), &mut seeded_rng(10)).unwrap();
        assert_eq!(f, bank.classes[0].prototype);
    }

    #[test]
    fn unknown_class_errors() {
        let bank = make_feature_bank(8, &["a"], 0.0, 0.0, 0.5, &mut seeded_rng(2)).unwrap();
        let err = sample_instance_feature(&bank, "zzz", &mut seeded_rng(0), &mut seeded_rng(0))
            .unwrap_err();
        assert!(matches!(err, Error::UnknownClass(ref c) if c == "zzz"));
    }

    #[test]
    fn repeated_instance_draws_agree_more_than_other_classes() {
        let ids = ["a", "b", "c", "d"];
        let bank = make_feature_bank(32, &ids, 0.12, 0.23, 0.5, &mut seeded_rng(4)).unwrap();
        let mut nuisance = seeded_rng(11);
        for k in 0..1000u64 {
            let f1 = sample_instance_feature(&bank, "a", &mut instance_rng("a", k), &mut nuisance)
                .unwrap();
            let f2 = sample_instance_feature(&bank, "a", &mut instance_rng("a", k), &mut nuisance)
                .unwrap();
            let same = f1.cosine(&f2);
            for other in &bank.classes[1..] {
                assert!(same > f1.cosine(&other.prototype));
            }
        }
    }

    #[test]
    fn noiseless_single_object_passes_through() {
        let bank = make_feature_bank(4, &["mug"], 0.0, 0.0, 0.5, &mut seeded_rng(0)).unwrap();
        let bbox = BoundingBox::new(0.2, 0.3, 0.4, 0.5).unwrap();
        let objs = [TrueObject {
            class_id: "mug".into(),
            instance_seed: 0,
            bbox,
        }];
        let s = propose(&objs, &bank, &ProposerConfig::default(), &mut seeded_rng(1)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.proposals()[0].bbox, bbox);
        assert_eq!(s.proposals()[0].feature, bank.classes[0].prototype);
    }

    #[test]
    fn counts_objects_and_clutter() {
        let bank = make_feature_bank(8, &["a", "b"], 0.1, 0.1, 0.5, &mut seeded_rng(0)).unwrap();
        let objs: Vec<TrueObject> = ["a", "b"]
            .iter()
            .map(|c| TrueObject {
                class_id: c.to_string(),
                instance_seed: 1,
                bbox: BoundingBox::new(0.1, 0.1, 0.2, 0.2).unwrap(),
            })
            .collect();
        let cfg = ProposerConfig {
            clutter_count: 8,
            ..Default::default()
        };
        let s = propose(&objs, &bank, &cfg, &mut seeded_rng(1)).unwrap();
        assert_eq!(s.len(), 10);
        let near = ProposerConfig {
            clutter_feature_mode: ClutterFeatureMode::NearClass,
            ..cfg
        };
        let s = propose(&objs, &bank, &near, &mut seeded_rng(1)).unwrap();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn nothing_to_propose_is_an_error() {
        let bank = make_feature_bank(8, &["a"], 0.1, 0.1, 0.5, &mut seeded_rng(0)).unwrap();
        assert!(propose(&[], &bank, &ProposerConfig::default(), &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn jittered_corners_stay_close_and_valid() {
        let bank = make_feature_bank(4, &["a"], 0.0, 0.0, 0.5, &mut seeded_rng(0)).unwrap();
        let bbox = BoundingBox::new(0.3, 0.3, 0.5, 0.6).unwrap();
        let objs = [TrueObject {
            class_id: "a".into(),
            instance_seed: 0,
            bbox,
        }];
        let cfg = ProposerConfig {
            box_jitter: 0.05,
            ..Default::default()
        };
        let mut rng = seeded_rng(2);
        for _ in 0..1000 {
            let s = propose(&objs, &bank, &cfg, &mut rng).unwrap();
            let got = s.proposals()[0].bbox.coords();
            for (g, t) in got.iter().zip(bbox.coords()) {
                assert!((g - t).abs() <= 6.0 * 0.05);
            }
        }
    }

    #[test]
    fn proposing_is_deterministic() {
        let bank = make_feature_bank(8, &["a", "b"], 0.1, 0.1, 0.5, &mut seeded_rng(0)).unwrap();
        let objs = [TrueObject {
            class_id: "b".into(),
            instance_seed: 3,
            bbox: BoundingBox::new(0.1, 0.1, 0.2, 0.2).unwrap(),
        }];
        let cfg = ProposerConfig {
            box_jitter: 0.01,
            clutter_count: 5,
            clutter_feature_mode: ClutterFeatureMode::NearClass,
            miss_rate: 0.2,
            ..Default::default()
        };
        let a = propose(&objs, &bank, &cfg, &mut seeded_rng(77)).unwrap();
        let b = propose(&objs, &bank, &cfg, &mut seeded_rng(77)).unwrap();
        assert_eq!(a, b);
    }
}
