use crate::data::Sample;
use crate::error::{ensure, Result};
use crate::numerics::RngStream;
use crate::scalar::Scalar;

use super::adamw::{adamw_step, AdamWConfig, OptimizerState};
use super::forward::{backward, forward};
use super::params::{FrozenBase, TrainableParams};

#[derive(Clone, Debug, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub optimizer: AdamWConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Runs AdamW from a fresh optimizer state over shuffled mini-batches of `data`.
pub fn train_local<T: Scalar>(
    base: &FrozenBase<T>,
    params: &mut TrainableParams<T>,
    mask: &[bool],
    data: &[Sample],
    cfg: &LocalTrainConfig,
    rng: &mut RngStream,
) -> Result<TrainStats> {
    ensure!(cfg.batch_size >= 1, Parameter, "batch_size must be >= 1");
    let mut state = OptimizerState::new(&base.cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stats = TrainStats {
        steps: 0,
        first_loss: f64::NAN,
        last_loss: f64::NAN,
    };
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            if stats.steps >= limit {
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let pass = forward(base, params, mask, &batch, Some(&mut *rng))?;
            let grads = backward(base, params, &pass.cache)?;
            adamw_step(params, &grads, &mut state, &cfg.optimizer)?;
            let loss = pass.loss.as_f64();
            if stats.steps == 0 {
                stats.first_loss = loss;
            }
            stats.last_loss = loss;
            stats.steps += 1;
        }
    }
    Ok(stats)
}
