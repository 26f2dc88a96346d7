use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_gradient, model_slices_mut, AttentionModel, PreparedStep, DEFAULT_EPS_NORM};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::rng::{derive_seed, seeded_rng};
use crate::types::{Demonstration, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_ent: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Experiments replace this with a seed derived from the master seed.
    #[serde(default)]
    pub seed: u64,
    pub eps_norm: f64,
    /// Predictor hidden width.
    pub hidden: usize,
    /// Magnitude of a crop-initialized attention row.
    pub crop_scale: f64,
    /// When finetuning, train on the new demonstrations concatenated with
    /// the prior ones instead of the new ones alone.
    #[serde(default)]
    pub finetune_with_prior: bool,
    /// Update only `W`; the motion predictor keeps its weights.
    #[serde(default)]
    pub freeze_predictor: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ent: 0.1,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            eps_norm: DEFAULT_EPS_NORM,
            hidden: 80,
            crop_scale: 5.0,
            finetune_with_prior: false,
            freeze_predictor: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.eps_adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ent >= 0.0 && self.lambda_ent.is_finite()) {
            return Err(Error::invalid("train.lambda_ent must be ≥ 0"));
        }
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be ≥ 1"));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::invalid("train.eps_norm must be > 0"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("train.hidden must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of `mse + λ·entropy` over the epoch's steps.
    pub loss: f64,
    pub mse: f64,
    /// Mean attention entropy (summed over rows) over the epoch's steps.
    pub entropy: f64,
}

fn pooled_steps(demos: &[&Demonstration], eps_norm: f64, d: usize) -> Result<Vec<PreparedStep>> {
    if demos.is_empty() {
        return Err(Error::invalid("at least one demonstration is required"));
    }
    let convention = demos[0].target_convention;
    let mut steps = Vec::new();
    for demo in demos {
        demo.validate()?;
        if demo.target_convention != convention {
            return Err(Error::invalid(format!(
                "inconsistent target_convention: `{}` uses {:?}, `{}` uses {:?}",
                demos[0].episode_id, convention, demo.episode_id, demo.target_convention
            )));
        }
        for s in &demo.steps {
            if s.scene.feature_dim() != d {
                return Err(Error::Dimension {
                    what: "demonstration feature",
                    expected: d,
                    got: s.scene.feature_dim(),
                });
            }
            steps.push(PreparedStep::new(s, eps_norm));
        }
    }
    Ok(steps)
}

/// Adam over shuffled minibatches of pooled steps. Deterministic in
/// `config.seed`.
fn run_epochs(model: &mut AttentionModel, steps: &[PreparedStep], config: &TrainConfig) {
    let start_epoch = model.training_log.len();
    let mut rng = seeded_rng(derive_seed(config.seed, "attention-batches") ^ start_epoch as u64);
    let w_count = model.w.iter().map(Vec::len).sum::<usize>();
    let count = if config.freeze_predictor {
        w_count
    } else {
        w_count + model.predictor.param_count()
    };
    let mut opt = Adam::new(config.adam(), count);
    let mut order: Vec<usize> = (0..steps.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut mse = 0.0;
        let mut ent = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &steps[i]));
            let (grad, m, e) = batch_gradient(model, &batch, config.lambda_ent);
            mse += m;
            ent += e;
            if config.freeze_predictor {
                opt.step(
                    model.w.iter_mut().map(Vec::as_mut_slice).collect(),
                    grad.w.iter().map(Vec::as_slice).collect(),
                );
            } else {
                opt.step(model_slices_mut(model), grad.slices());
            }
        }
        let n = steps.len() as f64;
        model.training_log.push(EpochLog {
            epoch: start_epoch + epoch,
            loss: (mse + config.lambda_ent * ent) / n,
            mse: mse / n,
            entropy: ent / n,
        });
    }
}

/// Learns an `m`-row attention (and its motion predictor) from
/// demonstrations. Rows start from `crops` when provided.
pub fn train_attention(
    demos: &[Demonstration],
    config: &TrainConfig,
    crops: Option<&[FeatureVector]>,
    m: usize,
) -> Result<AttentionModel> {
    config.validate()?;
    let refs: Vec<&Demonstration> = demos.iter().collect();
    let d = demos
        .first()
        .and_then(|demo| demo.steps.first())
        .map(|s| s.scene.feature_dim())
        .ok_or_else(|| Error::invalid("at least one nonempty demonstration is required"))?;
    let steps = pooled_steps(&refs, config.eps_norm, d)?;
    let mut rng = seeded_rng(derive_seed(config.seed, "attention-init"));
    let mut model = AttentionModel::new(
        m,
        d,
        config.hidden,
        crops,
        config.crop_scale,
        config.eps_norm,
        &mut rng,
    )?;
    model.train_config = Some(config.clone());
    run_epochs(&mut model, &steps, config);
    Ok(model)
}

/// Continues training `model` on `new_demos` (plus `prior_demos` when
/// `config.finetune_with_prior` is set).
pub fn finetune_attention(
    model: &AttentionModel,
    new_demos: &[Demonstration],
    prior_demos: &[Demonstration],
    config: &TrainConfig,
) -> Result<AttentionModel> {
    config.validate()?;
    model.validate()?;
    let mut refs: Vec<&Demonstration> = new_demos.iter().collect();
    if config.finetune_with_prior {
        refs.extend(prior_demos.iter());
    }
    let steps = pooled_steps(&refs, config.eps_norm, model.d)?;
    let mut out = model.clone();
    if config.epochs > 0 {
        out.train_config = Some(config.clone());
    }
    run_epochs(&mut out, &steps, config);
    Ok(out)
}
