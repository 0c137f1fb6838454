//! Stochastic optimization of the bound with a two-phase schedule.
//!
//! Phase 1 moves only the variational parameters (μ_u, L_u) with
//! hyperparameters, inducing inputs and likelihood globals held fixed;
//! phase 2 releases everything.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihoods::Likelihood;
use crate::model::{Block, ChainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adagrad,
    Rmsprop,
    /// Plain gradient ascent with a fixed step.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Total iteration budget, both phases included.
    pub iterations: usize,
    /// Leading iterations that update only μ_u and L_u.
    pub fixed_iterations: usize,
    pub seed: u64,
    /// Width of the moving-average ELBO window used for progress reports.
    pub window: usize,
    pub train_hypers: bool,
    pub train_inducing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            optimizer: Optimizer::Rmsprop,
            learning_rate: 1e-3,
            iterations: 2000,
            fixed_iterations: 100,
            seed: 0,
            window: 50,
            train_hypers: true,
            train_inducing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", 0.0, "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", self.learning_rate, "must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window", 0.0, "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Minibatch estimate of the bound before this iteration's step.
    pub elbo: f64,
    pub phase: u8,
    /// Mean of the last `window` estimates.
    pub smoothed: f64,
}

const RMS_DECAY: f64 = 0.9;
const EPS: f64 = 1e-8;

/// Which packed coordinates move in a given phase.
pub fn trainable_mask<L: Likelihood + Sync>(model: &ChainedModel<L>, phase: u8, config: &TrainConfig) -> Vec<bool> {
    let layout = model.layout();
    let mut mask = vec![false; layout.len];
    for (block, range) in &layout.blocks {
        let on = match *block {
            Block::QMu(b) | Block::QChol(b) => !model.latents[b].constant,
            Block::Kernel(b) => phase == 2 && config.train_hypers && !model.latents[b].constant,
            Block::PriorMean(_) | Block::Globals => phase == 2,
            Block::Inducing => phase == 2 && config.train_inducing,
        };
        mask[range.clone()].fill(on);
    }
    mask
}

/// Maximizes the bound in place and returns the per-iteration trace.
///
/// Deterministic for a fixed `config.seed`. A non-finite bound or gradient
/// aborts with [`Error::Divergence`] carrying the packed parameters at the
/// offending iteration.
pub fn fit<L: Likelihood + Sync + Clone>(
    model: &mut ChainedModel<L>,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    model.validate()?;
    data.validate_for(&model.likelihood)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("cannot fit to an empty dataset".into()));
    }
    let batch_size = config.batch_size.min(n);
    let full: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut theta = model.pack();
    let mut accum = vec![0.0; theta.len()];
    let masks = [trainable_mask(model, 1, config), trainable_mask(model, 2, config)];
    let mut trace: Vec<TraceRow> = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let phase: u8 = if it < config.fixed_iterations { 1 } else { 2 };
        let batch = if batch_size == n {
            full.clone()
        } else {
            let mut b = rand::seq::index::sample(&mut rng, n, batch_size).into_vec();
            b.sort_unstable();
            b
        };
        let stream = (it as u64).wrapping_mul(n as u64);
        let (value, grad) = model
            .elbo_grads_with_stream(data, &batch, stream)
            .map_err(|e| match e {
                Error::Domain { .. } | Error::Data(_) | Error::Dimension(_) => e,
                _ => Error::Divergence {
                    iteration: it,
                    snapshot: theta.clone(),
                },
            })?;
        let g = model.pack_grad(&grad);
        if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                snapshot: theta,
            });
        }

        let start = (it + 1).saturating_sub(config.window);
        let smoothed = (trace[start..].iter().map(|r| r.elbo).sum::<f64>() + value) / (it + 1 - start) as f64;
        trace.push(TraceRow {
            iteration: it,
            elbo: value,
            phase,
            smoothed,
        });
        if (it + 1) % 100 == 0 {
            log::info!("iteration {:>6}  phase {phase}  elbo {value:.4}  smoothed {smoothed:.4}", it + 1);
        }

        let mask = &masks[phase as usize - 1];
        let rate = config.learning_rate;
        for k in 0..theta.len() {
            if !mask[k] {
                continue;
            }
            let step = match config.optimizer {
                Optimizer::Sgd => rate * g[k],
                Optimizer::Adagrad => {
                    accum[k] += g[k] * g[k];
                    rate * g[k] / (accum[k].sqrt() + EPS)
                }
                Optimizer::Rmsprop => {
                    accum[k] = RMS_DECAY * accum[k] + (1.0 - RMS_DECAY) * g[k] * g[k];
                    rate * g[k] / (accum[k].sqrt() + EPS)
                }
            };
            theta[k] += step;
        }
        if model.unpack(&theta).is_err() {
            return Err(Error::Divergence {
                iteration: it,
                snapshot: theta,
            });
        }
    }
    Ok(trace)
}
