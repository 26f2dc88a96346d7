//! Browser playground: one sweep scene, a two-row attention, and three
//! operations (new scene, crop a row from a clicked box, train on expert
//! demonstrations). State crosses the boundary as JSON strings.

use std::path::Path;

use objattn::artifact::from_json_str;
use objattn::attention::{finetune_attention, init_from_crop, AttentionModel, TrainConfig};
use objattn::experiments::ExperimentSpec;
use objattn::metaattention::FeatureBank;
use objattn::simworld::{
    collect_demonstrations, observation_rng, observe, reset, SimState, TaskSpec,
};
use objattn::types::{Demonstration, Scene};
use objattn::{seeded_rng, Error, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const SPEC: &str = include_str!("../../../specs/sweep.json");
const ROWS: usize = 2;
const DEMOS: usize = 6;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Playground {
    spec: ExperimentSpec,
    bank: FeatureBank,
    eval_task: TaskSpec,
    demos: Vec<Demonstration>,
    attention: AttentionModel,
    condition: u64,
    state: SimState,
    scene: Scene,
    epochs_trained: usize,
}

impl Playground {
    fn build(seed: u64) -> Result<Self> {
        let mut spec: ExperimentSpec = from_json_str(SPEC, Path::new("."))?;
        spec.seed = seed;
        let seeds = spec.repetition_seeds(0);
        let bank = spec.bank.build(seeds["bank"])?;
        let demos = collect_demonstrations(
            &spec.task,
            DEMOS,
            &spec.train_seeds.seeds(),
            &bank,
            &spec.proposer,
            spec.demos.target_convention,
            spec.demos.action_noise,
        )?;
        let mut eval_task = spec.task.clone();
        eval_task
            .objects
            .extend(spec.eval_distractors.iter().cloned());
        let t = &spec.attention.train;
        let mut rng = seeded_rng(seeds["attention"]);
        let attention = AttentionModel::new(
            ROWS,
            bank.dimension,
            32,
            None,
            t.crop_scale,
            t.eps_norm,
            &mut rng,
        )?;
        let condition = spec.eval_seeds.start;
        let state = reset(&eval_task, condition)?;
        let scene = observe(
            &state,
            &bank,
            &spec.proposer,
            &mut observation_rng(condition, "playground"),
        )?;
        Ok(Self {
            spec,
            bank,
            eval_task,
            demos,
            attention,
            condition,
            state,
            scene,
            epochs_trained: 0,
        })
    }

    fn observe_condition(&mut self) -> Result<()> {
        self.state = reset(&self.eval_task, self.condition)?;
        let mut rng = observation_rng(self.condition, "playground");
        self.scene = observe(&self.state, &self.bank, &self.spec.proposer, &mut rng)?;
        Ok(())
    }

    fn view(&self) -> Result<Value> {
        let probs = self.attention.probs(&self.scene)?;
        let (_, picks) = self.attention.hard(&self.scene)?;
        let proposals: Vec<Value> = self
            .scene
            .proposals()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                json!({
                    "box": p.bbox.coords(),
                    "label": p.label,
                    "probs": probs.iter().map(|row| row[i]).collect::<Vec<f64>>(),
                })
            })
            .collect();
        let objects: Vec<Value> = self
            .state
            .objects
            .iter()
            .map(|o| json!({"class": o.class_id, "position": o.position, "radius": o.radius}))
            .collect();
        let loss = self.attention.training_log.last().map(|l| l.loss);
        Ok(json!({
            "condition": self.condition,
            "robot": self.state.robot.position,
            "objects": objects,
            "proposals": proposals,
            "picks": picks,
            "epochs": self.epochs_trained,
            "loss": loss,
        }))
    }
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> std::result::Result<Playground, JsError> {
        Self::build(seed).map_err(js)
    }

    /// Current scene, attention distribution and selections, as JSON.
    pub fn view_json(&self) -> std::result::Result<String, JsError> {
        Ok(self.view().map_err(js)?.to_string())
    }

    /// Moves to the next evaluation condition.
    pub fn next_scene(&mut self) -> std::result::Result<(), JsError> {
        self.condition += 1;
        self.observe_condition().map_err(js)
    }

    /// Points `row` at the proposal `index`, as if given a crop of it.
    pub fn crop(&mut self, row: usize, index: usize) -> std::result::Result<(), JsError> {
        let prop = self
            .scene
            .proposals()
            .get(index)
            .ok_or_else(|| JsError::new("no such proposal"))?;
        let row_w = self
            .attention
            .w
            .get_mut(row)
            .ok_or_else(|| JsError::new("no such row"))?;
        let t = &self.spec.attention.train;
        *row_w = init_from_crop(&prop.feature, t.crop_scale, t.eps_norm).map_err(js)?;
        Ok(())
    }

    /// Continues training on the expert demonstrations; returns the last
    /// epoch's loss.
    pub fn train(&mut self, epochs: usize) -> std::result::Result<f64, JsError> {
        let config = TrainConfig {
            epochs,
            hidden: self.attention.h,
            ..self.spec.attention.train.clone()
        };
        self.attention =
            finetune_attention(&self.attention, &self.demos, &[], &config).map_err(js)?;
        self.epochs_trained += epochs;
        Ok(self
            .attention
            .training_log
            .last()
            .map_or(f64::NAN, |l| l.loss))
    }
}
