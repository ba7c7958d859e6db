//! Mini-batch training with Adam and patience-based early stopping.

mod adam;
mod config;
mod early;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use config::{TrainConfig, LR_GRID, TRAIN_KEYS};
pub use early::{Decision, EarlyStopping};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{vstack, Tape};
use crate::datasim::{stream_seed, SessionRecord};
use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::metrics::gauc_at_k;
use crate::model::RankModel;
use crate::objectives::LossWeights;
use crate::params::{collect_grads, Parameters};
use crate::report::ranked_lists;

/// Independent RNG streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE: u64 = 1;
    pub const DROPOUT: u64 = 2;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-session training losses over the epoch.
    pub loss: f64,
    pub item_loss: f64,
    pub list_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub improved: bool,
}

impl EpochLog {
    pub fn line(&self, metric: &str) -> String {
        let mut s = format!(
            "epoch={} loss={} item_loss={}",
            self.epoch, self.loss, self.item_loss
        );
        if let Some(l) = self.list_loss {
            let _ = write!(s, " list_loss={l}");
        }
        match self.val_metric {
            Some(v) => {
                let _ = write!(s, " val_{metric}={v}");
            }
            None => {
                let _ = write!(s, " val_{metric}=undefined");
            }
        }
        if self.improved {
            s.push_str(" best");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters from the best validation epoch.
    pub model: M,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub metric_name: String,
}

impl<M> TrainOutcome<M> {
    /// One line per epoch; byte-identical across reruns with equal inputs.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            let _ = writeln!(s, "{}", e.line(&self.metric_name));
        }
        let best = self
            .best_metric
            .map_or_else(|| "undefined".into(), |v| v.to_string());
        let _ = writeln!(
            s,
            "best_epoch={} best_{}={}",
            self.best_epoch, self.metric_name, best
        );
        s
    }
}

/// gAUC@`k` of `model` on `sessions`, in eval mode.
pub fn validation_gauc<M: RankModel>(
    model: &M,
    sessions: &[SessionRecord],
    k: usize,
) -> Result<Option<f64>> {
    let preds = model.predict_many(sessions)?;
    let scores: Vec<Vec<f64>> = preds.into_iter().map(|p| p.item_probs).collect();
    Ok(gauc_at_k(&ranked_lists(sessions, &scores)?, k)?.value)
}

/// Mean-over-sessions loss of one batch; returns `(total, item, list)`
/// values after applying one Adam step.
fn train_batch<M: RankModel>(
    model: &mut M,
    batch: &[&SessionRecord],
    weights: LossWeights,
    dropout_rate: f64,
    dropout_rng: &mut ChaCha8Rng,
    adam: &mut AdamState,
    lr: f64,
) -> Result<(f64, f64, Option<f64>)> {
    let tape = Tape::new();
    let (leaves, vars) = model.params().bind(&tape);
    let mut dropout = Dropout::train(dropout_rate, dropout_rng);
    let mut totals = Vec::with_capacity(batch.len());
    let (mut item, mut list) = (0.0, None::<f64>);
    for s in batch {
        let l = model.session_loss(&vars, s, weights, &mut dropout)?;
        totals.push(l.total);
        item += l.item.scalar();
        if let Some(v) = l.list {
            *list.get_or_insert(0.0) += v.scalar();
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let loss = vstack(&totals)?.sum().scale(scale);
    let value = loss.scalar();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {value}")));
    }
    let mut grads = tape.backward(loss)?;
    let grads = collect_grads(&mut grads, &leaves);
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of tensor {bad}")));
    }
    let mut slots: Vec<_> = model
        .params_mut()
        .named_mut()
        .into_iter()
        .map(|(_, m)| m)
        .collect();
    adam_step(&mut slots, &grads, adam, lr)?;
    Ok((value, item * scale, list.map(|l| l * scale)))
}

/// Trains `model` on shuffled mini-batches, evaluating validation gAUC at
/// the largest configured cutoff after each epoch, and returns the model
/// from the best epoch.
pub fn train<M: RankModel>(
    mut model: M,
    config: &TrainConfig,
    train_set: &[SessionRecord],
    val_set: &[SessionRecord],
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let weights = LossWeights::new(config.alpha)?;
    let k = config.stop_k();
    let metric_name = format!("gauc@{k}");
    let mut shuffle_rng = stream_rng(config.seed, streams::SHUFFLE);
    let mut dropout_rng = stream_rng(config.seed, streams::DROPOUT);
    let mut adam = AdamState::new(model.params().named().iter().map(|(_, m)| m.shape()));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss, mut item, mut list) = (0.0, 0.0, None::<f64>);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SessionRecord> = idx.iter().map(|&i| &train_set[i]).collect();
            let (l, it, li) = train_batch(
                &mut model,
                &batch,
                weights,
                config.dropout,
                &mut dropout_rng,
                &mut adam,
                config.learning_rate,
            )
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, batch: bi },
                other => other,
            })?;
            let w = batch.len() as f64;
            loss += l * w;
            item += it * w;
            if let Some(li) = li {
                *list.get_or_insert(0.0) += li * w;
            }
        }
        let n = train_set.len() as f64;
        let val_metric = if val_set.is_empty() {
            None
        } else {
            validation_gauc(&model, val_set, k)?
        };
        let decision = stopper.observe(epoch, val_metric.unwrap_or(f64::NAN));
        let improved = decision == Decision::Improved;
        if improved {
            best = model.clone();
        }
        let log = EpochLog {
            epoch,
            loss: loss / n,
            item_loss: item / n,
            list_loss: list.map(|l| l / n),
            val_metric,
            improved,
        };
        log::info!("{}", log.line(&metric_name));
        epochs.push(log);
        if decision == Decision::Stop {
            break;
        }
    }
    // no finite validation value at all: keep the final parameters
    let (model, best_epoch) = if stopper.best().is_some() {
        (best, stopper.best_epoch())
    } else {
        (model, epochs.len())
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_metric: stopper.best(),
        epochs,
        metric_name,
    })
}
