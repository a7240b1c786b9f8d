//! Teacher-forced loss, gradients, optimization and checkpoints.

mod checkpoint;
mod optim;
mod pack;

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use optim::{adamw_step, AdamW, LrSchedule, OptimizerState};
pub use pack::{token_batch_pack, TokenBatcher};

use crate::error::{Error, Result};
use crate::model::{forward, Dropout, ParamVars, Seq2Seq};
use crate::noising::NoisedPair;
use crate::tensor::{Scalar, Tape, Var};

/// Per-parameter gradients keyed by path.
pub type GradMap<T> = BTreeMap<String, Vec<T>>;

/// Shifts targets right behind the start symbol.
pub fn decoder_inputs(target: &[u32], start_id: u32) -> Vec<u32> {
    std::iter::once(start_id)
        .chain(target[..target.len().saturating_sub(1)].iter().copied())
        .collect()
}

/// Mean cross-entropy over every non-pad target token in `batch`, with
/// the decoder fed `[start, target[:-1]]`. Returns the loss and the count
/// of scored tokens.
pub fn teacher_forced_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Seq2Seq<T>,
    vars: &ParamVars,
    batch: &[NoisedPair],
    dropout: &mut Dropout,
) -> Result<(Var, usize)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if batch.iter().any(|p| p.target_ids.is_empty()) {
        return Err(Error::InvalidArgument("example with an empty target".into()));
    }
    let pad = model.config.pad_id;
    let inputs: Vec<Vec<u32>> = batch.iter().map(|p| p.input_ids.clone()).collect();
    let dec: Vec<Vec<u32>> = batch.iter().map(|p| decoder_inputs(&p.target_ids, pad)).collect();
    let len = dec.iter().map(Vec::len).max().unwrap_or(0);
    let mut targets = Vec::with_capacity(batch.len() * len);
    for p in batch {
        targets.extend_from_slice(&p.target_ids);
        targets.extend(std::iter::repeat_n(pad, len - p.target_ids.len()));
    }
    let logits = forward(tape, &model.config, vars, &inputs, &dec, dropout)?;
    let flat = tape.reshape(logits, &[batch.len() * len, model.config.vocab_size])?;
    let tokens = targets.iter().filter(|&&t| t != pad).count();
    Ok((tape.cross_entropy(flat, &targets, pad)?, tokens))
}

/// Loss, scored-token count and parameter gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchGradients<T> {
    pub loss: f64,
    pub tokens: usize,
    pub grads: GradMap<T>,
}

/// Gradients of the teacher-forced loss on a single micro-batch.
pub fn batch_gradients<T: Scalar>(
    model: &Seq2Seq<T>,
    batch: &[NoisedPair],
    dropout_rate: f64,
    rng: &mut dyn RngCore,
) -> Result<BatchGradients<T>> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&model.params, &mut tape, true);
    let mut dropout = Dropout::train(dropout_rate, rng);
    let (loss, tokens) = teacher_forced_loss(&mut tape, model, &vars, batch, &mut dropout)?;
    let loss_value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
    let mut grads = tape.backward(loss)?;
    let mut out = BTreeMap::new();
    for (path, var) in vars.iter() {
        let g = grads
            .take(*var)
            .unwrap_or_else(|| vec![T::zero(); tape.value(*var).numel()]);
        out.insert(path.clone(), g);
    }
    Ok(BatchGradients {
        loss: loss_value,
        tokens,
        grads: out,
    })
}

/// Dropout RNG for micro-batch `micro` of optimizer step `step`.
pub fn micro_batch_rng(seed: u64, step: u64, micro: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(micro as u64);
    rng
}

/// Gradients of the mean loss over all micro-batches, each weighted by its
/// share of scored tokens, so the result matches one large batch.
/// Micro-batches run in parallel and combine in a fixed order.
pub fn accumulate_gradients<T: Scalar>(
    model: &Seq2Seq<T>,
    micro_batches: &[Vec<NoisedPair>],
    dropout_rate: f64,
    seed: u64,
    step: u64,
) -> Result<BatchGradients<T>> {
    if micro_batches.is_empty() {
        return Err(Error::InvalidArgument("no micro-batches".into()));
    }
    let parts: Vec<BatchGradients<T>> = micro_batches
        .par_iter()
        .enumerate()
        .map(|(i, mb)| batch_gradients(model, mb, dropout_rate, &mut micro_batch_rng(seed, step, i)))
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(|p| p.tokens).sum();
    let mut iter = parts.into_iter();
    let first = iter.next().expect("at least one micro-batch");
    let w0 = T::of(first.tokens as f64 / total as f64);
    let mut loss = first.loss * first.tokens as f64 / total as f64;
    let mut grads = first.grads;
    for g in grads.values_mut() {
        g.iter_mut().for_each(|x| *x = *x * w0);
    }
    for part in iter {
        let w = T::of(part.tokens as f64 / total as f64);
        loss += part.loss * part.tokens as f64 / total as f64;
        for (path, g) in part.grads {
            let acc = grads.get_mut(&path).expect("same parameter set");
            acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b * w);
        }
    }
    Ok(BatchGradients {
        loss,
        tokens: total,
        grads,
    })
}

/// One training-log record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLine {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tokens_seen: u64,
}

impl LogLine {
    pub const HEADER: &'static str = "step,loss,lr,tokens_seen";
}

impl std::fmt::Display for LogLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{:.6},{:.6e},{}", self.step, self.loss, self.lr, self.tokens_seen)
    }
}

/// Index of the best score; the earliest wins a tie.
pub fn select_best(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints to select from".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            return Err(Error::NonFinite(format!("validation score of checkpoint {i}")));
        }
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// A model with its optimizer, learning-rate schedule and progress counters.
pub struct Trainer<T> {
    pub model: Seq2Seq<T>,
    pub optimizer: OptimizerState<T>,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub tokens_seen: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Seq2Seq<T>, optimizer: AdamW, schedule: LrSchedule, seed: u64) -> Self {
        let optimizer = OptimizerState::new(optimizer, &model.params);
        Trainer {
            model,
            optimizer,
            schedule,
            seed,
            tokens_seen: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Computes gradients over `micro_batches` and applies one update.
    pub fn train_step(&mut self, micro_batches: &[Vec<NoisedPair>]) -> Result<LogLine> {
        let step = self.optimizer.step + 1;
        let lr = self.schedule.lr(step);
        let dropout = self.model.config.dropout;
        let g = accumulate_gradients(&self.model, micro_batches, dropout, self.seed, step)?;
        if !g.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        adamw_step(&mut self.model.params, &g.grads, &mut self.optimizer, lr)?;
        self.tokens_seen += micro_batches
            .iter()
            .flatten()
            .map(|p| (p.input_ids.len() + p.target_ids.len()) as u64)
            .sum::<u64>();
        Ok(LogLine {
            step,
            loss: g.loss,
            lr,
            tokens_seen: self.tokens_seen,
        })
    }
}

/// Splits a batch into at most `parts` contiguous micro-batches.
pub fn split_micro_batches(batch: &[NoisedPair], parts: usize) -> Vec<Vec<NoisedPair>> {
    let parts = parts.clamp(1, batch.len().max(1));
    let size = batch.len().div_ceil(parts).max(1);
    batch.chunks(size).map(<[NoisedPair]>::to_vec).collect()
}
