use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

use super::{GradientAccumulator, ModelState, OptimizerKind, OptimizerState, Scratch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Reshuffle sample order every epoch (seeded; order is reproducible).
    pub shuffle: bool,
    pub shuffle_seed: u64,
    /// Abort when the running epoch loss exceeds this (or goes non-finite).
    pub divergence_limit: f64,
    /// Label used in divergence diagnostics.
    pub context: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            shuffle: true,
            shuffle_seed: 0,
            divergence_limit: 1e12,
            context: "training".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch-mean MSE over the full training set after the last epoch.
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Batch-mean MSE of `model` over a whole set.
pub fn evaluate_loss(model: &ModelState, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::Dimension("empty evaluation set".into()));
    }
    let mut scratch = Scratch::new(&model.spec);
    let mut sq = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        model.forward_with(&mut scratch, x)?;
        let out = model.output(&scratch);
        if y.len() != out.len() {
            return Err(Error::Dimension(format!(
                "target width {} vs output width {}",
                y.len(),
                out.len()
            )));
        }
        for (o, t) in out.iter().zip(y.iter()) {
            sq += (o - t) * (o - t);
        }
    }
    Ok(sq / (inputs.len() * model.spec.output_dim()) as f64)
}

/// Mini-batch training. Returns a new model (the input is untouched) and
/// a report. Fully deterministic given the model, data order, and config;
/// `epochs == 0` returns the model unchanged.
pub fn train(
    model: &ModelState,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} inputs vs {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::Dimension("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }

    let mut trained = model.clone();
    if cfg.epochs == 0 {
        let final_loss = evaluate_loss(&trained, inputs, targets)?;
        return Ok((trained, TrainReport { final_loss, epochs_run: 0 }));
    }

    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, trained.param_count())?;
    let mut acc = GradientAccumulator::new(&trained);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = rng_from_seed(cfg.shuffle_seed);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
        }
        let mut epoch_sq = 0.0;
        let mut epoch_n = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            for &i in chunk {
                acc.add_sample(&trained, &inputs[i], &targets[i])?;
            }
            let (grads, batch_loss) = acc.finish(&trained);
            epoch_sq += batch_loss * chunk.len() as f64;
            epoch_n += chunk.len();
            opt.step(&mut trained.params.values, &grads, &trained.trainable_mask)?;
        }
        let epoch_loss = epoch_sq / epoch_n as f64;
        if !epoch_loss.is_finite() || epoch_loss > cfg.divergence_limit {
            return Err(Error::Divergence {
                context: cfg.context.clone(),
                epoch,
                loss: epoch_loss,
            });
        }
    }

    let final_loss = evaluate_loss(&trained, inputs, targets)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            context: cfg.context.clone(),
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    Ok((
        trained,
        TrainReport { final_loss, epochs_run: cfg.epochs },
    ))
}
