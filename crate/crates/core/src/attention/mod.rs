//! Task-specific attention over object proposals.
//!
//! Row `j` of the attention matrix `W` scores proposal `i` by
//! `z_ji = w_j · f_i / ‖f_i‖`; a softmax over `i` gives `p(i | w_j)`. The
//! soft observation is the probability-weighted average of proposal boxes
//! and is differentiable in `W`, which lets a small motion-prediction
//! network train `W` from demonstrations. At execution time the box of the
//! highest-scoring proposal is used instead (the hard observation).

mod train;

pub use train::{finetune_attention, train_attention, EpochLog, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::artifact::Artifact;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::SimRng;
use crate::types::{dot, norm, DemoStep, FeatureVector, ObservationVector, RobotState, Scene};

pub const DEFAULT_EPS_NORM: f64 = 1e-8;

/// `f / max(‖f‖₂, eps_norm)`.
pub fn normalize_feature(f: &FeatureVector, eps_norm: f64) -> FeatureVector {
    FeatureVector(normalized_values(f.as_slice(), eps_norm))
}

fn normalized_values(f: &[f64], eps_norm: f64) -> Vec<f64> {
    let scale = norm(f).max(eps_norm);
    f.iter().map(|v| v / scale).collect()
}

/// Softmax with max-subtraction.
pub fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Normalized features and boxes of one scene, laid out for the hot loops.
#[derive(Debug, Clone)]
pub(crate) struct PreparedScene {
    pub(crate) n: usize,
    pub(crate) d: usize,
    /// Row-major `n × d`.
    pub(crate) fhat: Vec<f64>,
    pub(crate) boxes: Vec<[f64; 4]>,
}

impl PreparedScene {
    pub(crate) fn new(scene: &Scene, eps_norm: f64) -> Self {
        let d = scene.feature_dim();
        let mut fhat = Vec::with_capacity(scene.len() * d);
        let mut boxes = Vec::with_capacity(scene.len());
        for p in scene.proposals() {
            fhat.extend(normalized_values(p.feature.as_slice(), eps_norm));
            boxes.push(p.bbox.coords());
        }
        Self {
            n: scene.len(),
            d,
            fhat,
            boxes,
        }
    }

    pub(crate) fn feature(&self, i: usize) -> &[f64] {
        &self.fhat[i * self.d..(i + 1) * self.d]
    }

    pub(crate) fn logits(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(w, self.feature(i))).collect()
    }
}

fn check_rows(w: &[Vec<f64>], d: usize) -> Result<()> {
    if w.is_empty() {
        return Err(Error::invalid("attention matrix has no rows"));
    }
    for row in w {
        if row.len() != d {
            return Err(Error::Dimension {
                what: "attention row vs scene feature",
                expected: row.len(),
                got: d,
            });
        }
    }
    Ok(())
}

/// `M × N` attention distribution; row `j` is a softmax over proposals.
pub fn attention_probs(w: &[Vec<f64>], scene: &Scene, eps_norm: f64) -> Result<Vec<Vec<f64>>> {
    check_rows(w, scene.feature_dim())?;
    let prepared = PreparedScene::new(scene, eps_norm);
    Ok(w.iter()
        .map(|row| stable_softmax(&prepared.logits(row)))
        .collect())
}

/// Block `j` is `Σ_i probs[j][i] · box_i`.
pub fn soft_observation(probs: &[Vec<f64>], scene: &Scene) -> Result<ObservationVector> {
    let mut out = Vec::with_capacity(4 * probs.len());
    for row in probs {
        if row.len() != scene.len() {
            return Err(Error::Dimension {
                what: "probability row vs proposal count",
                expected: scene.len(),
                got: row.len(),
            });
        }
        let mut block = [0.0; 4];
        for (p, prop) in row.iter().zip(scene.proposals()) {
            for (b, c) in block.iter_mut().zip(prop.bbox.coords()) {
                *b += p * c;
            }
        }
        out.extend(block);
    }
    Ok(ObservationVector(out))
}

/// Index of the first maximal entry.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Box of the highest-logit proposal per row (ties go to the lowest index),
/// together with the selected indices.
pub fn hard_observation(
    w: &[Vec<f64>],
    scene: &Scene,
    eps_norm: f64,
) -> Result<(ObservationVector, Vec<usize>)> {
    check_rows(w, scene.feature_dim())?;
    let prepared = PreparedScene::new(scene, eps_norm);
    Ok(hard_from_prepared(w, &prepared))
}

pub(crate) fn hard_from_prepared(
    w: &[Vec<f64>],
    prepared: &PreparedScene,
) -> (ObservationVector, Vec<usize>) {
    let mut out = Vec::with_capacity(4 * w.len());
    let mut picks = Vec::with_capacity(w.len());
    for row in w {
        let i = argmax_first(&prepared.logits(row));
        out.extend(prepared.boxes[i]);
        picks.push(i);
    }
    (ObservationVector(out), picks)
}

/// `Σ_j Σ_i −p log p`, with `0 · log 0 = 0`.
pub fn entropy_loss(probs: &[Vec<f64>]) -> f64 {
    probs.iter().map(|row| row_entropy(row)).sum()
}

fn row_entropy(row: &[f64]) -> f64 {
    row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

/// `c · f / ‖f‖`: an attention row peaked on objects that look like the crop.
pub fn init_from_crop(crop: &FeatureVector, scale: f64, eps_norm: f64) -> Result<Vec<f64>> {
    if crop.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("crop feature must be finite"));
    }
    if crop.norm() == 0.0 || crop.norm() < eps_norm {
        return Err(Error::invalid("crop feature must be nonzero"));
    }
    Ok(normalized_values(crop.as_slice(), eps_norm)
        .into_iter()
        .map(|v| scale * v)
        .collect())
}

/// The attention matrix plus the motion predictor used to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionModel {
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    /// Maps `[ν_soft (4M), robot state (4)]` to a 2-vector.
    pub predictor: Mlp,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub training_log: Vec<EpochLog>,
}

impl AttentionModel {
    /// Fresh model. Rows come from crops when given, otherwise small random
    /// values so that multiple rows do not start identical.
    pub fn new(
        m: usize,
        d: usize,
        h: usize,
        crops: Option<&[FeatureVector]>,
        crop_scale: f64,
        eps_norm: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        if m == 0 || d == 0 || h == 0 {
            return Err(Error::invalid("M, d and H must be ≥ 1"));
        }
        let w = match crops {
            Some(crops) => {
                if crops.len() != m {
                    return Err(Error::Dimension {
                        what: "crop count vs attention rows",
                        expected: m,
                        got: crops.len(),
                    });
                }
                crops
                    .iter()
                    .map(|c| {
                        if c.dim() != d {
                            return Err(Error::Dimension {
                                what: "crop feature",
                                expected: d,
                                got: c.dim(),
                            });
                        }
                        init_from_crop(c, crop_scale, eps_norm)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => {
                let s = 0.5 / (d as f64).sqrt();
                (0..m)
                    .map(|_| {
                        (0..d)
                            .map(|_| {
                                s * {
                                    let z: f64 = StandardNormal.sample(rng);
                                    z
                                }
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        let predictor = Mlp::init(&[4 * m + 4, h, h, 2], rng);
        Ok(Self {
            m,
            d,
            h,
            w,
            predictor,
            train_config: None,
            training_log: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.m {
            return Err(Error::Schema {
                field: "W".into(),
                message: format!("{} rows but M = {}", self.w.len(), self.m),
            });
        }
        check_rows(&self.w, self.d)?;
        if self.w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("W must be finite"));
        }
        self.predictor.validate()?;
        if self.predictor.input_dim() != 4 * self.m + 4 || self.predictor.output_dim() != 2 {
            return Err(Error::Schema {
                field: "predictor".into(),
                message: "input must be 4M+4 wide and output 2".into(),
            });
        }
        Ok(())
    }

    pub fn eps_norm(&self) -> f64 {
        self.train_config
            .as_ref()
            .map_or(DEFAULT_EPS_NORM, |c| c.eps_norm)
    }

    pub fn probs(&self, scene: &Scene) -> Result<Vec<Vec<f64>>> {
        attention_probs(&self.w, scene, self.eps_norm())
    }

    pub fn hard(&self, scene: &Scene) -> Result<(ObservationVector, Vec<usize>)> {
        hard_observation(&self.w, scene, self.eps_norm())
    }

    /// Cosine between each row and the feature of the proposal it selected.
    pub fn selection_cosines(&self, scene: &Scene, picks: &[usize]) -> Vec<f64> {
        self.w
            .iter()
            .zip(picks)
            .map(|(row, &i)| {
                let f = normalize_feature(&scene.proposals()[i].feature, self.eps_norm());
                let n = norm(row);
                if n == 0.0 {
                    0.0
                } else {
                    dot(row, f.as_slice()) / n
                }
            })
            .collect()
    }

    /// Bitwise fingerprint of `W`, used to check that policy learning never
    /// touches the attention.
    pub fn w_bits(&self) -> Vec<u64> {
        self.w.iter().flatten().map(|v| v.to_bits()).collect()
    }
}

impl Artifact for AttentionModel {
    const KIND: &'static str = "attention_model";

    fn validate(&self) -> Result<()> {
        AttentionModel::validate(self)
    }
}

fn predictor_input(nu: &[f64], state: &[f64; 4]) -> Vec<f64> {
    let mut x = Vec::with_capacity(nu.len() + 4);
    x.extend_from_slice(nu);
    x.extend_from_slice(state);
    x
}

/// Forward pass of the motion predictor on `[ν_soft, robot state]`.
pub fn predict_motion(
    model: &AttentionModel,
    nu_soft: &ObservationVector,
    robot: &RobotState,
) -> Result<[f64; 2]> {
    let x = predictor_input(nu_soft.as_slice(), &robot.as_input());
    model.predictor.check_input(&x)?;
    let y = model.predictor.forward(&x);
    Ok([y[0], y[1]])
}

/// A demonstration step with its scene pre-normalized.
#[derive(Debug, Clone)]
pub(crate) struct PreparedStep {
    pub(crate) scene: PreparedScene,
    pub(crate) state: [f64; 4],
    pub(crate) target: [f64; 2],
}

impl PreparedStep {
    pub(crate) fn new(step: &DemoStep, eps_norm: f64) -> Self {
        Self {
            scene: PreparedScene::new(&step.scene, eps_norm),
            state: step.state.as_input(),
            target: step.target,
        }
    }
}

/// Gradient of the training loss, shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub w: Vec<Vec<f64>>,
    pub predictor: Mlp,
}

impl ModelGradient {
    fn zeros(model: &AttentionModel) -> Self {
        Self {
            w: vec![vec![0.0; model.d]; model.m],
            predictor: model.predictor.zeros_like(),
        }
    }

    /// Parameter slices in the order used by the optimizer.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s: Vec<&[f64]> = self.w.iter().map(Vec::as_slice).collect();
        s.extend(self.predictor.slices());
        s
    }
}

pub(crate) fn model_slices_mut(model: &mut AttentionModel) -> Vec<&mut [f64]> {
    let mut s: Vec<&mut [f64]> = model.w.iter_mut().map(Vec::as_mut_slice).collect();
    s.extend(model.predictor.slices_mut());
    s
}

fn check_step(model: &AttentionModel, step: &PreparedStep) -> Result<()> {
    if step.scene.d != model.d {
        return Err(Error::Dimension {
            what: "scene feature vs model",
            expected: model.d,
            got: step.scene.d,
        });
    }
    Ok(())
}

/// Loss terms of one step; when `grad` is given, accumulates
/// `weight · ∂(mse + λ·H)/∂θ` into it.
pub(crate) fn step_loss(
    model: &AttentionModel,
    step: &PreparedStep,
    lambda_ent: f64,
    grad: Option<(&mut ModelGradient, f64)>,
) -> (f64, f64) {
    let sc = &step.scene;
    let probs: Vec<Vec<f64>> = model
        .w
        .iter()
        .map(|row| stable_softmax(&sc.logits(row)))
        .collect();
    let mut nu = Vec::with_capacity(4 * model.m);
    for row in &probs {
        let mut block = [0.0; 4];
        for (p, b) in row.iter().zip(&sc.boxes) {
            for k in 0..4 {
                block[k] += p * b[k];
            }
        }
        nu.extend(block);
    }
    let x = predictor_input(&nu, &step.state);
    let trace = model.predictor.forward_trace(&x);
    let y = trace.output();
    let err = [y[0] - step.target[0], y[1] - step.target[1]];
    let mse = err[0] * err[0] + err[1] * err[1];
    let ent: f64 = probs.iter().map(|r| row_entropy(r)).sum();

    if let Some((grad, weight)) = grad {
        let d_out = [2.0 * err[0] * weight, 2.0 * err[1] * weight];
        let d_x = model
            .predictor
            .backward(&trace, &d_out, &mut grad.predictor);
        for (j, row) in probs.iter().enumerate() {
            let d_nu = &d_x[4 * j..4 * j + 4];
            let h = row_entropy(row);
            // ∂L/∂p_i from the soft observation, then through the softmax.
            let a: Vec<f64> = sc
                .boxes
                .iter()
                .map(|b| (0..4).map(|k| d_nu[k] * b[k]).sum())
                .collect();
            let mean_a: f64 = row.iter().zip(&a).map(|(p, ai)| p * ai).sum();
            let gw = &mut grad.w[j];
            for (i, p) in row.iter().enumerate() {
                let mut dz = p * (a[i] - mean_a);
                if *p > 0.0 {
                    // ∂H/∂z_i = −p_i (ln p_i + H)
                    dz -= lambda_ent * weight * p * (p.ln() + h);
                }
                if dz != 0.0 {
                    for (g, f) in gw.iter_mut().zip(sc.feature(i)) {
                        *g += dz * f;
                    }
                }
            }
        }
    }
    (mse, ent)
}

fn prepare_batch(
    model: &AttentionModel,
    batch: &[DemoStep],
    eps_norm: f64,
) -> Result<Vec<PreparedStep>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be nonempty"));
    }
    let prepared: Vec<PreparedStep> = batch
        .iter()
        .map(|s| PreparedStep::new(s, eps_norm))
        .collect();
    for p in &prepared {
        check_step(model, p)?;
    }
    Ok(prepared)
}

/// `(1/B) Σ ‖predict − target‖² + λ · (1/B) Σ H(p)`.
pub fn total_loss(
    model: &AttentionModel,
    batch: &[DemoStep],
    lambda_ent: f64,
    eps_norm: f64,
) -> Result<f64> {
    let prepared = prepare_batch(model, batch, eps_norm)?;
    let b = prepared.len() as f64;
    let (mse, ent) = prepared
        .iter()
        .map(|s| step_loss(model, s, lambda_ent, None))
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok(mse / b + lambda_ent * ent / b)
}

/// Analytic gradient of [`total_loss`] with respect to `W` and the predictor.
pub fn gradients(
    model: &AttentionModel,
    batch: &[DemoStep],
    lambda_ent: f64,
    eps_norm: f64,
) -> Result<ModelGradient> {
    let prepared = prepare_batch(model, batch, eps_norm)?;
    let refs: Vec<&PreparedStep> = prepared.iter().collect();
    Ok(batch_gradient(model, &refs, lambda_ent).0)
}

/// Mean gradient over `steps`, plus the summed (mse, entropy) terms.
pub(crate) fn batch_gradient(
    model: &AttentionModel,
    steps: &[&PreparedStep],
    lambda_ent: f64,
) -> (ModelGradient, f64, f64) {
    let mut grad = ModelGradient::zeros(model);
    let weight = 1.0 / steps.len() as f64;
    let mut mse = 0.0;
    let mut ent = 0.0;
    for s in steps {
        let (m, e) = step_loss(model, s, lambda_ent, Some((&mut grad, weight)));
        mse += m;
        ent += e;
    }
    (grad, mse, ent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BoundingBox, ObjectProposal};

    fn scene(items: &[([f64; 4], Vec<f64>)]) -> Scene {
        Scene::new(
            "t",
            items
                .iter()
                .map(|(b, f)| ObjectProposal {
                    bbox: BoundingBox::try_from(*b).unwrap(),
                    feature: FeatureVector(f.clone()),
                    label: None,
                })
                .collect(),
        )
        .unwrap()
    }

    const B0: [f64; 4] = [0.0, 0.0, 0.2, 0.2];
    const B1: [f64; 4] = [0.4, 0.4, 0.8, 0.8];

    #[test]
    fn normalize_examples() {
        let f = normalize_feature(&FeatureVector(vec![3.0, 4.0]), 1e-8);
        assert!((f.0[0] - 0.6).abs() < 1e-15 && (f.0[1] - 0.8).abs() < 1e-15);
        let z = normalize_feature(&FeatureVector(vec![0.0, 0.0]), 1e-8);
        assert_eq!(z.0, vec![0.0, 0.0]);
        let u = FeatureVector(vec![0.0, 1.0, 0.0]);
        assert_eq!(normalize_feature(&u, 1e-8), u);
    }

    #[test]
    fn probs_examples() {
        let one = scene(&[(B0, vec![1.0, 0.0])]);
        assert_eq!(
            attention_probs(&[vec![0.3, 0.1]], &one, 1e-8).unwrap(),
            vec![vec![1.0]]
        );

        let four = scene(&[
            (B0, vec![1.0, 0.0]),
            (B1, vec![0.0, 1.0]),
            (B0, vec![1.0, 1.0]),
            (B1, vec![-1.0, 0.0]),
        ]);
        let p = attention_probs(&[vec![0.0, 0.0]], &four, 1e-8).unwrap();
        for v in &p[0] {
            assert!((v - 0.25).abs() < 1e-15);
        }

        let two = scene(&[(B0, vec![1.0, 0.0]), (B1, vec![0.0, 1.0])]);
        let p = attention_probs(&[vec![3f64.ln(), 0.0]], &two, 1e-8).unwrap();
        assert!((p[0][0] - 0.75).abs() < 1e-12 && (p[0][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn probs_dimension_mismatch() {
        let two = scene(&[(B0, vec![1.0, 0.0]), (B1, vec![0.0, 1.0])]);
        assert!(attention_probs(&[vec![1.0, 0.0, 0.0]], &two, 1e-8).is_err());
    }

    #[test]
    fn soft_examples() {
        let two = scene(&[(B0, vec![1.0, 0.0]), (B1, vec![0.0, 1.0])]);
        let mid = soft_observation(&[vec![0.5, 0.5]], &two).unwrap();
        for (a, b) in mid.0.iter().zip([0.2, 0.2, 0.5, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(
            soft_observation(&[vec![1.0, 0.0]], &two).unwrap().0,
            B0.to_vec()
        );
        let q = soft_observation(&[vec![0.75, 0.25]], &two).unwrap();
        for (a, b) in q.0.iter().zip([0.1, 0.1, 0.35, 0.35]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hard_examples() {
        // Unit features along axes make the logits equal to w's entries.
        let e = |k: usize| {
            let mut v = vec![0.0; 3];
            v[k] = 1.0;
            v
        };
        let boxes = [B0, B1, [0.1, 0.5, 0.3, 0.9]];
        let s = scene(&[(boxes[0], e(0)), (boxes[1], e(1)), (boxes[2], e(2))]);
        let (nu, idx) = hard_observation(&[vec![0.1, 2.0, 0.3]], &s, 1e-8).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(nu.0, boxes[1].to_vec());
        let (_, idx) = hard_observation(&[vec![0.7, 0.2, 0.7]], &s, 1e-8).unwrap();
        assert_eq!(idx, vec![0]);
        let one = scene(&[(B1, vec![0.0, 1.0])]);
        let (nu, idx) = hard_observation(&[vec![-5.0, 1.0]], &one, 1e-8).unwrap();
        assert_eq!((nu.0, idx), (B1.to_vec(), vec![0]));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_loss(&[vec![0.25; 4]]) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy_loss(&[vec![0.25; 4]]) - 1.386294).abs() < 1e-6);
        assert_eq!(entropy_loss(&[vec![0.0, 1.0, 0.0]]), 0.0);
        assert!((entropy_loss(&[vec![0.75, 0.25]]) - 0.562335).abs() < 1e-6);
    }

    #[test]
    fn crop_init() {
        let row = init_from_crop(&FeatureVector(vec![0.0, 2.0]), 5.0, 1e-8).unwrap();
        assert_eq!(row, vec![0.0, 5.0]);
        assert!(init_from_crop(&FeatureVector(vec![0.0, 0.0]), 5.0, 1e-8).is_err());

        let s = scene(&[(B0, vec![1.0, 0.0]), (B1, vec![0.0, 1.0])]);
        let zero = init_from_crop(&FeatureVector(vec![0.0, 2.0]), 0.0, 1e-8).unwrap();
        assert_eq!(
            attention_probs(&[zero], &s, 1e-8).unwrap(),
            vec![vec![0.5, 0.5]]
        );
    }

    #[test]
    fn crop_scale_ten_bounds_top_probability() {
        // Crop direction e0; proposals at cosine 1.0 and 0.5 (logit gap 5
        // after scaling by 10) plus orthogonal clutter.
        let c = 0.5f64;
        let s = scene(&[
            (B0, vec![1.0, 0.0, 0.0, 0.0]),
            (B1, vec![c, (1.0 - c * c).sqrt(), 0.0, 0.0]),
            (B0, vec![0.0, 0.0, 1.0, 0.0]),
            (B1, vec![0.0, 0.0, 0.0, 1.0]),
        ]);
        let w = init_from_crop(&FeatureVector(vec![1.0, 0.0, 0.0, 0.0]), 10.0, 1e-8).unwrap();
        let p = attention_probs(&[w], &s, 1e-8).unwrap();
        let bound = 1.0 / (1.0 + 3.0 * (-5.0f64).exp());
        assert!(p[0][0] >= bound, "{} < {bound}", p[0][0]);
    }

    #[test]
    fn zero_predictor_predicts_zero() {
        let mut rng = crate::rng::seeded_rng(0);
        let mut model = AttentionModel::new(1, 2, 8, None, 5.0, 1e-8, &mut rng).unwrap();
        model.predictor = Mlp::zeros(&[8, 8, 8, 2]);
        let y = predict_motion(
            &model,
            &ObservationVector(vec![0.1, 0.2, 0.3, 0.4]),
            &RobotState::at([0.5, 0.5]),
        )
        .unwrap();
        assert_eq!(y, [0.0, 0.0]);
        assert!(predict_motion(
            &model,
            &ObservationVector(vec![0.1; 8]),
            &RobotState::default()
        )
        .is_err());
    }

    #[test]
    fn empty_batch_is_error() {
        let mut rng = crate::rng::seeded_rng(0);
        let model = AttentionModel::new(1, 2, 8, None, 5.0, 1e-8, &mut rng).unwrap();
        assert!(total_loss(&model, &[], 0.1, 1e-8).is_err());
        assert!(gradients(&model, &[], 0.1, 1e-8).is_err());
    }

    fn step(scene: Scene, target: [f64; 2]) -> DemoStep {
        DemoStep {
            state: RobotState::at([0.5, 0.5]),
            scene,
            target,
        }
    }

    #[test]
    fn loss_with_zero_predictor_by_hand() {
        let mut rng = crate::rng::seeded_rng(0);
        let mut model = AttentionModel::new(1, 2, 8, None, 5.0, 1e-8, &mut rng).unwrap();
        model.predictor = Mlp::zeros(&[8, 8, 8, 2]);
        model.w = vec![vec![3f64.ln(), 0.0]];
        let batch = [step(
            scene(&[(B0, vec![1.0, 0.0]), (B1, vec![0.0, 1.0])]),
            [0.3, -0.4],
        )];
        let h = -(0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        let loss = total_loss(&model, &batch, 0.1, 1e-8).unwrap();
        assert!((loss - (0.25 + 0.1 * h)).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn perfect_predictor_on_one_hot_attention_has_zero_loss() {
        let mut rng = crate::rng::seeded_rng(0);
        let mut model = AttentionModel::new(1, 2, 4, None, 5.0, 1e-8, &mut rng).unwrap();
        model.w = vec![vec![1e3, 0.0]];
        // output = first two box coordinates of the attended proposal
        let mut net = Mlp::zeros(&[8, 4, 4, 2]);
        net.layers = vec![net.layers[2].clone()];
        net.layers[0] = crate::nn::Dense {
            inputs: 8,
            outputs: 2,
            weights: vec![
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
            ],
            bias: vec![0.0, 0.0],
        };
        model.predictor = net;
        let s = scene(&[(B1, vec![1.0, 0.0]), (B0, vec![0.0, 1.0])]);
        let loss = total_loss(&model, &[step(s, [0.4, 0.4])], 0.0, 1e-8).unwrap();
        assert!(loss < 1e-24, "{loss}");
    }

    #[test]
    fn no_gradient_path_to_w() {
        let mut rng = crate::rng::seeded_rng(1);
        let mut model = AttentionModel::new(2, 3, 5, None, 5.0, 1e-8, &mut rng).unwrap();
        let first = &mut model.predictor.layers[0];
        for o in 0..first.outputs {
            for i in 0..8 {
                first.weights[o * first.inputs + i] = 0.0;
            }
        }
        let s = scene(&[(B0, vec![1.0, 0.0, 0.5]), (B1, vec![0.0, 1.0, -0.5])]);
        let g = gradients(
            &model,
            &[step(s.clone(), [0.1, 0.2]), step(s, [-0.3, 0.0])],
            0.0,
            1e-8,
        )
        .unwrap();
        assert!(g.w.iter().flatten().all(|v| *v == 0.0));
        assert!(g.predictor.flat().iter().any(|v| *v != 0.0));
    }
}
