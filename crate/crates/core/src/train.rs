//! The training loop: batched mean loss, one Adam step per batch.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Bound, ParamGrads, Tape, Tensor, Var};
use crate::config::TrainConfig;
use crate::data::WindowedSample;
use crate::error::{Error, Result};
use crate::fusion::{argmax, cross_entropy};
use crate::model::{forward_with_adjacency, window_adjacency, ModelParameters};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample mean of `CE + α·pool` over the epoch.
    pub total_loss: f64,
    pub ce_loss: f64,
    pub pool_loss: f64,
    /// Fraction of training windows classified correctly before each update.
    pub train_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub adam_steps: u64,
}

impl TrainHistory {
    /// Equality of everything except wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.adam_steps == other.adam_steps
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.total_loss.to_bits() == b.total_loss.to_bits()
                    && a.ce_loss.to_bits() == b.ce_loss.to_bits()
                    && a.pool_loss.to_bits() == b.pool_loss.to_bits()
                    && a.train_accuracy.to_bits() == b.train_accuracy.to_bits()
            })
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = crate::error::csv_writer(path.as_ref())?;
        w.write_record(["epoch", "total_loss", "ce_loss", "pool_loss", "train_accuracy", "wall_time_s"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.total_loss.to_string(),
                r.ce_loss.to_string(),
                r.pool_loss.to_string(),
                r.train_accuracy.to_string(),
                r.wall_time_s.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Loss terms and gradients of one window.
#[derive(Clone, Debug)]
pub struct SampleGrad {
    pub ce: f64,
    pub pool: f64,
    pub correct: bool,
    pub grads: ParamGrads,
}

/// Tape handles of one window's loss terms.
#[derive(Clone, Copy, Debug)]
pub struct SampleLoss {
    /// `CE + α·pool`.
    pub total: Var,
    pub ce: Var,
    pub pool: Option<Var>,
    pub logits: Var,
}

/// Records `CE + α·pool` for one window on `tape`.
pub fn sample_loss(
    tape: &mut Tape,
    bound: &Bound,
    params: &ModelParameters,
    window: &WindowedSample,
    adjacency: &Tensor,
) -> Result<SampleLoss> {
    let out = forward_with_adjacency(tape, bound, params, window, adjacency)?;
    let ce = cross_entropy(tape, out.logits, window.label)?;
    let total = match out.pool_loss {
        Some(p) => {
            let weighted = tape.scale(p, params.config.alpha_pool);
            tape.add(ce, weighted)?
        }
        None => ce,
    };
    Ok(SampleLoss {
        total,
        ce,
        pool: out.pool_loss,
        logits: out.logits,
    })
}

/// Loss terms and parameter gradients of one window.
pub fn sample_gradient(
    params: &ModelParameters,
    window: &WindowedSample,
    adjacency: &Tensor,
) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let loss = sample_loss(&mut tape, &bound, params, window, adjacency)?;
    let grads = tape.backward(loss.total)?;
    Ok(SampleGrad {
        ce: tape.value(loss.ce).item(),
        pool: loss.pool.map_or(0.0, |p| tape.value(p).item()),
        correct: argmax(tape.value(loss.logits).data()) == window.label,
        grads: params.store.collect_grads(&bound, &grads),
    })
}

/// Number of classes implied by the labels; every class `1..=K` must occur.
pub fn class_count(windows: &[WindowedSample]) -> Result<usize> {
    let k = windows
        .iter()
        .map(|w| w.label)
        .max()
        .ok_or_else(|| Error::EmptyInput("no training windows".into()))?;
    let mut seen = vec![false; k];
    for w in windows {
        seen[w.label - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::EmptyInput(format!("no training window of class {}", missing + 1)));
    }
    Ok(k)
}

/// Initializes a model from `config.seed` and trains it on `windows`.
pub fn train(
    config: &TrainConfig,
    windows: &[WindowedSample],
) -> Result<(ModelParameters, TrainHistory)> {
    let classes = class_count(windows)?;
    let mut params = ModelParameters::init(config, windows[0].num_vars(), classes)?;
    let history = train_model(&mut params, windows)?;
    Ok((params, history))
}

/// Trains `params` in place with its own config.
pub fn train_model(params: &mut ModelParameters, windows: &[WindowedSample]) -> Result<TrainHistory> {
    let config = params.config.clone();
    config.validate()?;
    if windows.is_empty() {
        return Err(Error::EmptyInput("no training windows".into()));
    }
    let adjacency: Vec<Tensor> = windows
        .iter()
        .map(|w| window_adjacency(params, w))
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut adam = AdamState::new(&params.store);
    let mut shuffle_rng = rng::stream(config.seed, "shuffle", 0);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = TrainHistory::default();
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut ce_sum, mut pool_sum, mut correct) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(config.batch).enumerate() {
            let model = &*params;
            let run = |&i: &usize| sample_gradient(model, &windows[i], &adjacency[i]);
            let samples: Vec<SampleGrad> = if config.threads > 1 {
                pool.install(|| batch.par_iter().map(run).collect::<Result<_>>())?
            } else {
                batch.iter().map(run).collect::<Result<_>>()?
            };
            let m = batch.len() as f64;
            let batch_ce = samples.iter().map(|s| s.ce).sum::<f64>() / m;
            let batch_pool = samples.iter().map(|s| s.pool).sum::<f64>() / m;
            let batch_total = batch_ce + config.alpha_pool * batch_pool;
            if !batch_total.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, batch {}: total {batch_total}, cross entropy {batch_ce}, pool {batch_pool}",
                    b + 1
                )));
            }
            let mut grads = samples[0].grads.clone();
            for s in &samples[1..] {
                grads.accumulate(&s.grads);
            }
            grads.scale(1.0 / m);
            adam_step(&mut params.store, &grads, &mut adam, config.lr)?;
            ce_sum += samples.iter().map(|s| s.ce).sum::<f64>();
            pool_sum += samples.iter().map(|s| s.pool).sum::<f64>();
            correct += samples.iter().filter(|s| s.correct).count();
        }
        let n = windows.len() as f64;
        let record = EpochRecord {
            epoch,
            total_loss: (ce_sum + config.alpha_pool * pool_sum) / n,
            ce_loss: ce_sum / n,
            pool_loss: pool_sum / n,
            train_accuracy: correct as f64 / n,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (ce {:.5}, pool {:.5}), train accuracy {:.3}",
            record.total_loss,
            record.ce_loss,
            record.pool_loss,
            record.train_accuracy
        );
        history.epochs.push(record);
    }
    history.adam_steps = adam.step_count;
    Ok(history)
}
