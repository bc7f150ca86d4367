//! Reconstruction loss, Adam training loop, checkpoints and gradient
//! verification.

mod adam;
mod checkpoint;
mod verify;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use verify::{small_gradient_setup, verify_gradients, GradientReport, GradientSample};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SomoError};
use crate::layers::ForwardCtx;
use crate::model::{History, MotionModel};
use crate::motion::MultiPersonScene;
use crate::numerics::{ParamGrads, Tape, Tensor, Var};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Predicted frames per training example, `T`.
    pub horizon: usize,
    pub seed: u64,
    /// Rescale the averaged gradient to at most this global norm.
    pub grad_clip: Option<f64>,
    /// Fraction of scenes, taken from the end, held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 3e-4,
            horizon: 25,
            seed: 0,
            grad_clip: None,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.horizon == 0 {
            return Err(SomoError::Config(
                "epochs, batch_size and horizon must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SomoError::Config(format!(
                "learning_rate {} must be a non-negative number",
                self.learning_rate
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(SomoError::Config(format!("grad_clip {c} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(SomoError::Config(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// One training example: an observed history and the true displacements
/// that follow it.
#[derive(Debug, Clone)]
pub struct Sample {
    pub history: History,
    /// Per person, `T×D` displacements in millimeters.
    pub future: Vec<Tensor>,
}

impl Sample {
    /// Observes the first `observed` frames of `scene` and targets the
    /// next `horizon` displacements.
    pub fn from_scene(scene: &MultiPersonScene, observed: usize, horizon: usize) -> Result<Self> {
        let need = observed + horizon;
        if scene.num_frames() < need {
            return Err(SomoError::Input(format!(
                "scene has {} frames, training needs {observed} observed + {horizon} future",
                scene.num_frames()
            )));
        }
        let history = History::from_scene(&scene.slice_frames(0, observed)?, observed)?;
        let d = 3 * scene.num_joints();
        let future = scene
            .persons()
            .iter()
            .map(|p| {
                let f = p.frames().data();
                let data = (observed - 1..need - 1)
                    .flat_map(|i| (0..d).map(move |k| f[(i + 1) * d + k] - f[i * d + k]))
                    .collect();
                Tensor::new(vec![horizon, d], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sample { history, future })
    }

    pub fn horizon(&self) -> usize {
        self.future[0].shape()[0]
    }
}

/// Mean squared per-joint displacement error in millimeters², for `T×J×3`
/// (or `T×3J`) tensors.
pub fn loss_rec(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() || !pred.len().is_multiple_of(3) {
        return Err(SomoError::dim("loss_rec", pred.shape(), truth.shape()));
    }
    let sum: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / (pred.len() / 3) as f64)
}

/// Records the rollout for `sample` and its loss averaged over persons.
pub fn sample_loss(tape: &mut Tape, model: &MotionModel, sample: &Sample, ctx: &mut ForwardCtx) -> Result<Var> {
    let horizon = sample.horizon();
    let rollout = model.rollout(tape, &sample.history, horizon, ctx)?;
    let mut total: Option<Var> = None;
    for (pred, truth) in rollout.deltas.iter().zip(&sample.future) {
        let t = tape.constant(truth.clone());
        let diff = tape.sub(*pred, t)?;
        let sq = tape.sum_squares(diff);
        total = Some(match total {
            Some(acc) => tape.add(acc, sq)?,
            None => sq,
        });
    }
    let count = (sample.future.len() * sample.future[0].len() / 3) as f64;
    Ok(tape.scale(total.expect("non-empty sample"), 1.0 / count))
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(model: &MotionModel, sample: &Sample, ctx: &mut ForwardCtx) -> Result<(f64, ParamGrads)> {
    let mut tape = Tape::with_params(&model.params);
    let loss = sample_loss(&mut tape, model, sample, ctx)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?.into_param_grads(&model.params);
    Ok((value, grads))
}

/// Evaluation-mode loss averaged over samples.
pub fn evaluate_loss(model: &MotionModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(SomoError::Input("no samples to evaluate".into()));
    }
    let losses = samples
        .par_iter()
        .map(|s| {
            let mut tape = Tape::with_params(&model.params);
            let loss = sample_loss(&mut tape, model, s, &mut ForwardCtx::eval())?;
            Ok(tape.value(loss).data()[0])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Deterministic split by scene index: the last `val_fraction` of the
/// scenes (rounded down) form the validation set.
pub fn split_indices(count: usize, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let val = (count as f64 * val_fraction).floor() as usize;
    let train = count - val;
    ((0..train).collect(), (train..count).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Model, optimizer and RNG state of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MotionModel,
    pub config: TrainConfig,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: MotionModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(&model.params);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            model,
            config,
            adam,
            epoch: 0,
            rng,
        })
    }

    /// One optimizer step on `batch`; returns the batch loss before the
    /// update. `label` names the batch in error messages.
    pub fn step(&mut self, batch: &[&Sample], label: &str) -> Result<f64> {
        if batch.is_empty() {
            return Err(SomoError::Input("empty batch".into()));
        }
        let dropout = self.model.config.dropout;
        let seeds: Vec<u64> = batch.iter().map(|_| self.rng.gen()).collect();
        let model = &self.model;
        let results = batch
            .par_iter()
            .zip(&seeds)
            .map(|(s, &seed)| {
                let mut ctx = ForwardCtx::train(dropout, ChaCha8Rng::seed_from_u64(seed));
                sample_gradients(model, s, &mut ctx)
            })
            .collect::<Result<Vec<_>>>()?;
        let weight = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut grads = ParamGrads::zeros_like(&self.model.params);
        for (l, g) in &results {
            loss += l * weight;
            grads.accumulate(g, weight);
        }
        if !loss.is_finite() || !grads.is_finite() {
            return Err(SomoError::Numerical(format!(
                "non-finite loss {loss} or gradient in {label}"
            )));
        }
        if let Some(max) = self.config.grad_clip {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }
        self.adam.update(&mut self.model.params, &grads, self.config.learning_rate)?;
        Ok(loss)
    }

    /// Runs the remaining epochs. `on_epoch` sees the trainer after each
    /// epoch (for checkpointing and logging).
    pub fn train(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<Vec<EpochRecord>> {
        if train.is_empty() {
            return Err(SomoError::Input("training set is empty".into()));
        }
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let epoch = self.epoch + 1;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            let mut batches = 0;
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
                let label = format!("epoch {epoch} batch {b} (samples {chunk:?})");
                total += self.step(&batch, &label)?;
                batches += 1;
            }
            let val_loss = if val.is_empty() { None } else { Some(evaluate_loss(&self.model, val)?) };
            self.epoch = epoch;
            let record = EpochRecord {
                epoch,
                train_loss: total / batches as f64,
                val_loss,
            };
            log::info!(
                "epoch {epoch}: train loss {:.6} val loss {}",
                record.train_loss,
                val_loss.map_or("-".to_string(), |v| format!("{v:.6}"))
            );
            on_epoch(self, &record)?;
            log.push(record);
        }
        Ok(log)
    }
}

/// Loss log as CSV with header `epoch,train_loss,val_loss`.
pub fn loss_log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in records {
        let val = r.val_loss.map_or(String::new(), |v| format!("{v:?}"));
        out.push_str(&format!("{},{:?},{}\n", r.epoch, r.train_loss, val));
    }
    out
}
