//! Random instances shared by the property and acceptance suites.
#![allow(dead_code)]

use objattn::attention::AttentionModel;
use objattn::metaattention::make_feature_bank;
use objattn::rng::derive_seed;
use objattn::types::{
    BoundingBox, DemoStep, Demonstration, FeatureVector, ObjectProposal, RobotState, Scene,
    TargetConvention,
};
use objattn::{seeded_rng, SimRng};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rng: &mut SimRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn random_box(rng: &mut SimRng) -> BoundingBox {
    let (x0, y0) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
    let (w, h) = (rng.random_range(0.01..0.2), rng.random_range(0.01..0.2));
    BoundingBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

pub fn random_scene(rng: &mut SimRng, n: usize, d: usize) -> Scene {
    let proposals = (0..n)
        .map(|_| ObjectProposal {
            bbox: random_box(rng),
            feature: FeatureVector(gaussian(rng, d, 1.0)),
            label: None,
        })
        .collect();
    Scene::new("random", proposals).unwrap()
}

pub fn random_w(rng: &mut SimRng, m: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..m).map(|_| gaussian(rng, d, scale)).collect()
}

pub fn random_state(rng: &mut SimRng) -> RobotState {
    RobotState {
        position: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
        velocity: [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)],
    }
}

/// A model with random `W` and predictor, for gradient checks.
pub fn random_model(rng: &mut SimRng, m: usize, d: usize, h: usize) -> AttentionModel {
    let mut model = AttentionModel::new(m, d, h, None, 1.0, 1e-8, rng).unwrap();
    model.w = random_w(rng, m, d, 1.0);
    model
}

pub fn random_batch(rng: &mut SimRng, size: usize, n: usize, d: usize) -> Vec<DemoStep> {
    (0..size)
        .map(|_| DemoStep {
            state: random_state(rng),
            scene: random_scene(rng, n, d),
            target: [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)],
        })
        .collect()
}

/// Scenes holding one noisy instance of each of three classes plus
/// featureless clutter; the motion target points from the robot to the
/// first class's box, so only that class is worth attending to.
pub struct PredictiveData {
    pub demos: Vec<Demonstration>,
    pub held_out: Vec<Demonstration>,
}

pub const PREDICTIVE_CLASS: &str = "key";

pub fn predictive_dataset(
    seed: u64,
    train_episodes: usize,
    held_out_episodes: usize,
) -> PredictiveData {
    let d = 16;
    let classes = [PREDICTIVE_CLASS, "decoy", "other"];
    let bank = make_feature_bank(
        d,
        &classes,
        0.0,
        0.0,
        1.2,
        &mut seeded_rng(derive_seed(seed, "bank")),
    )
    .unwrap();
    let mut rng = seeded_rng(derive_seed(seed, "scenes"));
    let episode = |rng: &mut SimRng, id: usize| {
        let steps = (0..20)
            .map(|_| {
                let state = random_state(rng);
                let mut proposals: Vec<ObjectProposal> = classes
                    .iter()
                    .map(|c| {
                        let proto = &bank.class(c).unwrap().prototype;
                        let noise = gaussian(rng, d, 0.1);
                        ObjectProposal {
                            bbox: random_box(rng),
                            feature: FeatureVector(
                                proto
                                    .as_slice()
                                    .iter()
                                    .zip(&noise)
                                    .map(|(p, e)| p + e)
                                    .collect(),
                            ),
                            label: Some(c.to_string()),
                        }
                    })
                    .collect();
                for _ in 0..rng.random_range(0..4) {
                    proposals.push(ObjectProposal {
                        bbox: random_box(rng),
                        feature: FeatureVector(gaussian(rng, d, 1.0)),
                        label: Some("clutter".into()),
                    });
                }
                let key = proposals[0].bbox.coords();
                let center = [(key[0] + key[2]) / 2.0, (key[1] + key[3]) / 2.0];
                let target = [
                    0.1 * (center[0] - state.position[0]),
                    0.1 * (center[1] - state.position[1]),
                ];
                DemoStep {
                    state,
                    scene: Scene::new("predictive", proposals).unwrap(),
                    target,
                }
            })
            .collect();
        Demonstration {
            episode_id: format!("predictive-{id}"),
            target_convention: TargetConvention::Action,
            steps,
        }
    };
    let demos = (0..train_episodes).map(|i| episode(&mut rng, i)).collect();
    let held_out = (0..held_out_episodes)
        .map(|i| episode(&mut rng, train_episodes + i))
        .collect();
    PredictiveData { demos, held_out }
}

/// Mean probability mass the model puts on proposals labeled `class`.
pub fn mass_on(model: &AttentionModel, demos: &[Demonstration], class: &str) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for s in demos.iter().flat_map(|d| &d.steps) {
        let probs = model.probs(&s.scene).unwrap();
        for (p, prop) in probs[0].iter().zip(s.scene.proposals()) {
            if prop.label.as_deref() == Some(class) {
                total += p;
            }
        }
        count += 1;
    }
    total / count as f64
}
