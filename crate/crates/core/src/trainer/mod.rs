//! Self-contained differentiable text classifier / token tagger.
//!
//! Training runs in `f32`; the same model code instantiated at `f64` backs the
//! finite-difference gradient checks.

mod model;
mod optim;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{ArtifactStore, CaptureSettings, CheckpointMeta, StoreHeader};
use crate::dataset::{Dataset, Example, PAD};
use crate::evalmetrics::{Annotation, PredictionSet};
use crate::util::seeded_rng;
use crate::{Error, Result};

pub use model::{
    argmax, softmax, Dense, GradCapture, LayerRef, Mode, Model, ModelConfig, ParamGrads, Real,
    Task,
};
pub use optim::Optimizer;

/// Builds a model with the documented scaled-uniform initializer.
pub fn init_model(cfg: &ModelConfig) -> Result<Model<f32>> {
    Model::init(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Constant optimizer step size; also the per-checkpoint weight in TracIn.
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    pub checkpoint_every: usize,
    pub prediction_log_every: usize,
    /// Stop logging predictions after this many epochs.
    #[serde(default)]
    pub prediction_log_until_epoch: Option<f64>,
    /// Epoch at which early-training scores (EL2N) are read.
    #[serde(default)]
    pub score_at_epoch: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub capture: CaptureSettings,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.prediction_log_every == 0 {
            return Err(Error::Config(
                "batch_size, checkpoint_every and prediction_log_every must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        self.epochs * self.steps_per_epoch(n)
    }

    /// Checkpoints written over a full run: `floor(total_steps / checkpoint_every)`.
    pub fn expected_checkpoints(&self, n: usize) -> usize {
        self.total_steps(n) / self.checkpoint_every
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub steps: usize,
    /// Mean train-mode loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub checkpoints: usize,
}

/// Per-row training targets of an example for the model's task.
fn targets(model: &Model<f32>, d: &Dataset, ex: &Example) -> Result<Vec<usize>> {
    match model.config.task {
        Task::SequenceClassification => Ok(vec![ex.label]),
        Task::TokenTagging => {
            let slots = ex.slots.as_ref().ok_or_else(|| {
                Error::invalid(format!("example {} has no slot labels for tagging", ex.id))
            })?;
            slots
                .iter()
                .map(|s| {
                    d.slot_names
                        .binary_search(s)
                        .map_err(|_| Error::invalid(format!("unknown slot label {s:?}")))
                })
                .collect()
        }
    }
}

fn check_compatible(model: &Model<f32>, d: &Dataset) -> Result<()> {
    let k = match model.config.task {
        Task::SequenceClassification => d.num_classes,
        Task::TokenTagging => d.slot_names.len(),
    };
    if model.config.num_classes != k {
        return Err(Error::Config(format!(
            "model has {} outputs but the dataset needs {k}",
            model.config.num_classes
        )));
    }
    if model.config.vocab_size < d.vocab_size {
        return Err(Error::Config(format!(
            "model vocabulary {} is smaller than the dataset's {}",
            model.config.vocab_size, d.vocab_size
        )));
    }
    Ok(())
}

/// Mini-batch training with deterministic per-epoch shuffling.
///
/// When a store is given, every `checkpoint_every` optimizer steps all
/// training examples are captured in eval mode against the current weights,
/// and every `prediction_log_every` steps the eval-mode predictions are
/// appended to the prediction trace. The store is closed on return.
pub fn train(
    mut model: Model<f32>,
    d: &Dataset,
    s: &TrainSchedule,
    mut store: Option<&mut ArtifactStore>,
) -> Result<TrainOutcome> {
    s.validate()?;
    check_compatible(&model, d)?;
    let all_targets: Vec<Vec<usize>> = d
        .examples
        .iter()
        .map(|e| targets(&model, d, e))
        .collect::<Result<_>>()?;
    let n = d.len();
    let spe = s.steps_per_epoch(n);

    if let Some(store) = store.as_deref_mut() {
        let layer_dim = model.layer(s.capture.layer).len();
        store.initialize(StoreHeader {
            seed: s.seed,
            schedule: s.clone(),
            model: model.config.clone(),
            labels: d.labels(),
            token_lengths: d.examples.iter().map(|e| e.tokens.len()).collect(),
            layer_dim,
            expected_checkpoints: s.expected_checkpoints(n),
        })?;
    }

    let mut optimizer = optim::OptimizerState::new(s.optimizer, &model);
    let mut grads = ParamGrads::zeros_like(&model);
    let mut dropout_rng = seeded_rng(s.seed, 0xd209);
    let mut step = 0usize;
    let mut checkpoints = 0usize;
    let mut epoch_losses = Vec::with_capacity(s.epochs);
    let lr = s.learning_rate as f32;
    let log_until = s.prediction_log_until_epoch.map(|e| (e * spe as f64).floor() as usize);

    for epoch in 0..s.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut seeded_rng(s.seed, 0x1000 + epoch as u64));
        }
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(s.batch_size) {
            step += 1;
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let loss = model.accumulate_loss_grad(
                    &d.examples[i].tokens,
                    &all_targets[i],
                    scale,
                    Mode::Train(&mut dropout_rng),
                    &mut grads,
                )?;
                batch_loss += f64::from(loss);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            epoch_loss += batch_loss;
            optimizer.step(&mut model, &grads, lr);
            if !model.all_finite() {
                return Err(Error::NonFiniteLoss { step });
            }

            if let Some(store) = store.as_deref_mut() {
                if step % s.checkpoint_every == 0 {
                    let captures = capture_all(&model, d, s.capture.layer)?;
                    store.append_checkpoint(
                        &captures,
                        CheckpointMeta {
                            step,
                            epoch: step as f64 / spe as f64,
                            learning_rate: s.learning_rate,
                        },
                    )?;
                    checkpoints += 1;
                }
                if step % s.prediction_log_every == 0 && log_until.is_none_or(|u| step <= u) {
                    let preds = predict_all(&model, d)?;
                    store.append_predictions(step, &preds)?;
                }
            }
        }
        epoch_losses.push(epoch_loss / n.max(1) as f64);
    }
    if let Some(store) = store {
        store.close()?;
    }
    Ok(TrainOutcome {
        model,
        steps: step,
        epoch_losses,
        checkpoints,
    })
}

/// Eval-mode captures for every example, in id order.
pub fn capture_all(model: &Model<f32>, d: &Dataset, layer: LayerRef) -> Result<Vec<GradCapture<f32>>> {
    d.examples
        .par_iter()
        .map(|e| model.capture_gradients(e, layer))
        .collect()
}

fn predict_all(model: &Model<f32>, d: &Dataset) -> Result<Vec<u32>> {
    d.examples
        .par_iter()
        .map(|e| model.predict(&e.tokens).map(|p| p[0] as u32))
        .collect()
}

/// Trains a model on PAD-only inputs, so it can only learn the label prior.
pub fn train_null_model(cfg: &ModelConfig, labels: &[usize], s: &TrainSchedule) -> Result<Model<f32>> {
    if labels.is_empty() {
        return Err(Error::invalid("null model needs at least one label"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        log::warn!("null model trained on a single class; it will predict that class");
    }
    let mut cfg = cfg.clone();
    cfg.task = Task::SequenceClassification;
    let examples = labels
        .iter()
        .enumerate()
        .map(|(id, &label)| Example {
            id,
            tokens: vec![PAD],
            label,
            domain: None,
            intent: None,
            slots: None,
        })
        .collect();
    let d = Dataset::new(
        examples,
        cfg.num_classes,
        cfg.vocab_size,
        (0..cfg.num_classes).map(|c| c.to_string()).collect(),
        crate::dataset::Provenance::inline("null inputs"),
    )?;
    let model = Model::init(&cfg)?;
    Ok(train(model, &d, s, None)?.model)
}

/// Eval-mode predictions for every example (per token for tagging models).
pub fn evaluate(m: &Model<f32>, d: &Dataset) -> Result<PredictionSet> {
    let preds: Vec<Vec<usize>> = d
        .examples
        .par_iter()
        .map(|e| m.predict(&e.tokens))
        .collect::<Result<_>>()?;
    let mut set = PredictionSet::default();
    for (e, p) in d.examples.iter().zip(preds) {
        let (gold, predicted) = match m.config.task {
            Task::SequenceClassification => (
                Annotation {
                    class: Some(e.label),
                    ..Default::default()
                },
                Annotation {
                    class: Some(p[0]),
                    ..Default::default()
                },
            ),
            Task::TokenTagging => (
                Annotation {
                    slots: e.slots.clone(),
                    ..Default::default()
                },
                Annotation {
                    slots: Some(p.iter().map(|&i| d.slot_names[i].clone()).collect()),
                    ..Default::default()
                },
            ),
        };
        set.push(e.id, gold, predicted);
    }
    Ok(set)
}
