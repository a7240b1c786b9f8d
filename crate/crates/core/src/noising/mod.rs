//! Self-supervised denoising examples.
//!
//! Span corruption replaces `num_noise` tokens, grouped in `num_spans`
//! separated spans, with sentinels; i.i.d. denoising corrupts each token
//! independently so every span has length one. Both produce targets of the
//! form `S0 span0 S1 span1 … Sk </s>` where `Sk` is a closing sentinel.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

pub const DEFAULT_NOISE_DENSITY: f64 = 0.15;
pub const DEFAULT_MEAN_SPAN: f64 = 3.0;
pub const DEFAULT_IID_PROB: f64 = 0.15;
pub const DEFAULT_MIX: f64 = 0.5;

/// `(num_noise, num_spans)` for a sequence of `n` tokens.
pub fn noise_counts(n: usize, noise_density: f64, mean_span: f64) -> Result<(usize, usize)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "span corruption needs at least 2 tokens, got {n}"
        )));
    }
    if !(noise_density > 0.0 && noise_density < 1.0) || !(mean_span >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "noise density {noise_density} and mean span {mean_span} out of range"
        )));
    }
    let num_noise = ((noise_density * n as f64).round() as usize).clamp(1, n - 1);
    let num_spans = ((num_noise as f64 / mean_span).round() as usize).clamp(1, num_noise);
    Ok((num_noise, num_spans))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePlan {
    pub n: usize,
    /// Realized fraction of noise tokens.
    pub noise_density: f64,
    /// Realized mean span length.
    pub mean_span: f64,
    /// Sorted `(start, length)` pairs with at least one clean token between spans.
    pub spans: Vec<(usize, usize)>,
}

impl NoisePlan {
    pub fn new(n: usize, spans: Vec<(usize, usize)>) -> Result<Self> {
        let mut end = None;
        for &(start, len) in &spans {
            let gap_ok = end.is_none_or(|e| start > e);
            if len == 0 || !gap_ok || start + len > n {
                return Err(Error::InvalidArgument(format!(
                    "spans {spans:?} are not sorted, separated and inside 0..{n}"
                )));
            }
            end = Some(start + len);
        }
        let noise: usize = spans.iter().map(|s| s.1).sum();
        Ok(NoisePlan {
            n,
            noise_density: noise as f64 / n.max(1) as f64,
            mean_span: if spans.is_empty() {
                0.0
            } else {
                noise as f64 / spans.len() as f64
            },
            spans,
        })
    }

    pub fn noise_len(&self) -> usize {
        self.spans.iter().map(|s| s.1).sum()
    }

    pub fn num_spans(&self) -> usize {
        self.spans.len()
    }
}

/// Uniform composition of `total` into `parts` positive integers.
fn random_composition<R: Rng + ?Sized>(total: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(parts >= 1 && total >= parts);
    let mut cuts: Vec<usize> = sample(rng, total - 1, parts - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.push(total);
    let mut prev = 0;
    cuts.into_iter()
        .map(|c| {
            let part = c - prev;
            prev = c;
            part
        })
        .collect()
}

/// Samples span lengths and clean gaps as uniform compositions and lays
/// them out as `gap0 span1 gap1 … spanK gapK`, with `gap0 >= 0` and every
/// other gap `>= 1`.
pub fn plan_spans<R: Rng + ?Sized>(n: usize, num_noise: usize, num_spans: usize, rng: &mut R) -> Result<NoisePlan> {
    if num_spans == 0 || num_spans > num_noise || num_noise >= n || n - num_noise < num_spans {
        return Err(Error::InvalidArgument(format!(
            "cannot place {num_spans} spans of {num_noise} noise tokens in {n} tokens"
        )));
    }
    let lengths = random_composition(num_noise, num_spans, rng);
    let mut gaps = random_composition(n - num_noise + 1, num_spans + 1, rng);
    gaps[0] -= 1;
    let mut spans = Vec::with_capacity(num_spans);
    let mut pos = gaps[0];
    for (len, gap) in lengths.into_iter().zip(&gaps[1..]) {
        spans.push((pos, len));
        pos += len + gap;
    }
    debug_assert_eq!(pos, n);
    NoisePlan::new(n, spans)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoisedPair {
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
}

/// Replaces each planned span with the next sentinel.
pub fn span_corrupt(ids: &[u32], plan: &NoisePlan, vocab: &Vocabulary) -> Result<NoisedPair> {
    if plan.n != ids.len() {
        return Err(Error::InvalidArgument(format!(
            "plan covers {} tokens, sequence has {}",
            plan.n,
            ids.len()
        )));
    }
    let mut input = Vec::with_capacity(ids.len());
    let mut target = Vec::with_capacity(plan.noise_len() + plan.num_spans() + 2);
    let mut pos = 0;
    for (k, &(start, len)) in plan.spans.iter().enumerate() {
        let sentinel = vocab.sentinel_id(k)?;
        input.extend_from_slice(&ids[pos..start]);
        input.push(sentinel);
        target.push(sentinel);
        target.extend_from_slice(&ids[start..start + len]);
        pos = start + len;
    }
    input.extend_from_slice(&ids[pos..]);
    target.push(vocab.sentinel_id(plan.num_spans())?);
    target.push(vocab.eos_id());
    Ok(NoisedPair {
        input_ids: input,
        target_ids: target,
    })
}

/// Corrupts each token independently with probability `p`; every corrupted
/// token gets its own sentinel. Once all but one sentinel are in use (one
/// is kept for closing the target), remaining tokens stay clean.
pub fn iid_denoise<R: Rng + ?Sized>(ids: &[u32], p: f64, rng: &mut R, vocab: &Vocabulary) -> NoisedPair {
    let p = p.clamp(0.0, 1.0);
    let budget = vocab.sentinel_count().saturating_sub(1);
    let mut input = Vec::with_capacity(ids.len());
    let mut target = Vec::new();
    let mut k = 0;
    for &id in ids {
        if rng.gen_bool(p) && k < budget {
            let s = vocab.size() as u32 - 1 - k as u32;
            input.push(s);
            target.push(s);
            target.push(id);
            k += 1;
        } else {
            input.push(id);
        }
    }
    if let Ok(closing) = vocab.sentinel_id(k) {
        target.push(closing);
    }
    target.push(vocab.eos_id());
    NoisedPair {
        input_ids: input,
        target_ids: target,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    SpanCorruption,
    IidDenoising,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub noise_density: f64,
    pub mean_span: f64,
    pub iid_prob: f64,
    /// Probability of choosing span corruption over i.i.d. denoising.
    pub mix: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            noise_density: DEFAULT_NOISE_DENSITY,
            mean_span: DEFAULT_MEAN_SPAN,
            iid_prob: DEFAULT_IID_PROB,
            mix: DEFAULT_MIX,
        }
    }
}

pub fn span_corruption_example<R: Rng + ?Sized>(
    ids: &[u32],
    config: &NoiseConfig,
    rng: &mut R,
    vocab: &Vocabulary,
) -> Result<NoisedPair> {
    let (num_noise, num_spans) = noise_counts(ids.len(), config.noise_density, config.mean_span)?;
    let plan = plan_spans(ids.len(), num_noise, num_spans, rng)?;
    span_corrupt(ids, &plan, vocab)
}

/// Draws the objective (span corruption with probability `mix`) and builds
/// the example.
pub fn mixture_sample<R: Rng + ?Sized>(
    ids: &[u32],
    config: &NoiseConfig,
    rng: &mut R,
    vocab: &Vocabulary,
) -> Result<(Objective, NoisedPair)> {
    if !(0.0..=1.0).contains(&config.mix) {
        return Err(Error::InvalidArgument(format!(
            "mixture ratio {} outside [0, 1]",
            config.mix
        )));
    }
    if rng.gen_bool(config.mix) {
        Ok((
            Objective::SpanCorruption,
            span_corruption_example(ids, config, rng, vocab)?,
        ))
    } else {
        Ok((Objective::IidDenoising, iid_denoise(ids, config.iid_prob, rng, vocab)))
    }
}

/// Per-example generator derived from a root seed and the example index.
pub fn example_rng(root_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(index);
    rng
}

/// Turns token sequences into denoising examples with EOS-terminated
/// inputs. Sequences shorter than two tokens are skipped and counted.
pub struct PretrainExamples<'v, I> {
    source: I,
    vocab: &'v Vocabulary,
    config: NoiseConfig,
    seed: u64,
    index: u64,
    skipped: u64,
}

impl<'v, I: Iterator<Item = Vec<u32>>> PretrainExamples<'v, I> {
    pub fn new(source: I, vocab: &'v Vocabulary, config: NoiseConfig, seed: u64) -> Self {
        PretrainExamples {
            source,
            vocab,
            config,
            seed,
            index: 0,
            skipped: 0,
        }
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

impl<I: Iterator<Item = Vec<u32>>> Iterator for PretrainExamples<'_, I> {
    type Item = Result<(Objective, NoisedPair)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let ids = self.source.next()?;
            let index = self.index;
            self.index += 1;
            if ids.len() < 2 {
                self.skipped += 1;
                continue;
            }
            let mut rng = example_rng(self.seed, index);
            let eos = self.vocab.eos_id();
            return Some(
                mixture_sample(&ids, &self.config, &mut rng, self.vocab).map(|(objective, mut pair)| {
                    pair.input_ids.push(eos);
                    (objective, pair)
                }),
            );
        }
    }
}

#[cfg(test)]
mod tests;
