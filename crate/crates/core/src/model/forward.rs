use std::sync::Arc;

use rand::{Rng, RngCore};

use super::params::{ParamVars, ParameterStore};
use super::position::bucket_grid;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Additive score for masked attention entries; large enough that the
/// softmax weight underflows to exactly zero.
const MASK_VALUE: f64 = -1e9;

/// Inverted dropout; a no-op without an RNG or at rate zero.
pub struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut dyn RngCore>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'a mut dyn RngCore) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let rng = match self.rng.as_mut() {
            Some(rng) if self.rate > 0.0 => rng,
            _ => return Ok(x),
        };
        let keep = T::of(1.0 / (1.0 - self.rate));
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, mask)
    }
}

/// Encoder output for a padded batch.
#[derive(Clone, Copy, Debug)]
pub struct Encoded<'m> {
    /// `[batch·len × d_model]`.
    pub hidden: Var,
    pub batch: usize,
    pub len: usize,
    /// True where the encoder input is `pad_id`, `[batch·len]`.
    pub key_padding: &'m [bool],
}

struct Padded {
    ids: Vec<usize>,
    padding: Vec<bool>,
    batch: usize,
    len: usize,
}

fn pad_batch(config: &ModelConfig, seqs: &[Vec<u32>]) -> Result<Padded> {
    let batch = seqs.len();
    let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    if batch == 0 || len == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut ids = Vec::with_capacity(batch * len);
    let mut padding = Vec::with_capacity(batch * len);
    for s in seqs {
        for &t in s {
            if t as usize >= config.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: t,
                    size: config.vocab_size,
                });
            }
            ids.push(t as usize);
            padding.push(t == config.pad_id);
        }
        for _ in s.len()..len {
            ids.push(config.pad_id as usize);
            padding.push(true);
        }
    }
    Ok(Padded {
        ids,
        padding,
        batch,
        len,
    })
}

/// Relative position bias `[heads × q_len × k_len]` from a bucket table.
fn position_bias<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    table: Var,
    len: usize,
    bidirectional: bool,
) -> Result<Var> {
    let grid = bucket_grid(len, len, bidirectional, config.rel_buckets, config.rel_max_distance);
    let rows = tape.embedding(table, &grid)?;
    let rows = tape.reshape(rows, &[len, len, config.n_heads])?;
    tape.permute(rows, &[2, 0, 1])
}

/// Splits `[batch·len × inner]` into `[batch·heads × len × d_kv]`.
fn split_heads<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    x: Var,
    batch: usize,
    len: usize,
    transpose: bool,
) -> Result<Var> {
    let (h, dkv) = (config.n_heads, config.d_kv);
    let x = tape.reshape(x, &[batch, len, h, dkv])?;
    if transpose {
        let x = tape.permute(x, &[0, 2, 3, 1])?;
        tape.reshape(x, &[batch * h, dkv, len])
    } else {
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        tape.reshape(x, &[batch * h, len, dkv])
    }
}

struct AttentionInput {
    q_len: usize,
    k_len: usize,
    batch: usize,
}

#[allow(clippy::too_many_arguments)]
fn attention<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    prefix: &str,
    query: Var,
    memory: Var,
    dims: AttentionInput,
    bias: Option<Var>,
    mask: Option<Var>,
    dropout: &mut Dropout,
) -> Result<Var> {
    let AttentionInput { q_len, k_len, batch } = dims;
    let h = config.n_heads;
    let q = tape.matmul(query, vars.get(&format!("{prefix}.q"))?)?;
    let k = tape.matmul(memory, vars.get(&format!("{prefix}.k"))?)?;
    let v = tape.matmul(memory, vars.get(&format!("{prefix}.v"))?)?;
    let q = split_heads(tape, config, q, batch, q_len, false)?;
    let k = split_heads(tape, config, k, batch, k_len, true)?;
    let v = split_heads(tape, config, v, batch, k_len, false)?;
    let scores = tape.bmm(q, k)?;
    let mut scores = tape.reshape(scores, &[batch, h, q_len, k_len])?;
    if let Some(bias) = bias {
        scores = tape.add_broadcast(scores, bias)?;
    }
    if let Some(mask) = mask {
        scores = tape.add_broadcast(scores, mask)?;
    }
    let weights = tape.softmax(scores)?;
    let weights = dropout.apply(tape, weights)?;
    let weights = tape.reshape(weights, &[batch * h, q_len, k_len])?;
    let ctx = tape.bmm(weights, v)?;
    let ctx = tape.reshape(ctx, &[batch, h, q_len, config.d_kv])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[batch * q_len, config.inner_dim()])?;
    tape.matmul(ctx, vars.get(&format!("{prefix}.o"))?)
}

fn feed_forward<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    prefix: &str,
    x: Var,
    dropout: &mut Dropout,
) -> Result<Var> {
    let wi0 = tape.matmul(x, vars.get(&format!("{prefix}.wi_0"))?)?;
    let hidden = if config.gated_ffn {
        let act = tape.gelu(wi0);
        let lin = tape.matmul(x, vars.get(&format!("{prefix}.wi_1"))?)?;
        tape.mul(act, lin)?
    } else {
        tape.relu(wi0)
    };
    let hidden = dropout.apply(tape, hidden)?;
    tape.matmul(hidden, vars.get(&format!("{prefix}.wo"))?)
}

/// Normalizes, applies `sublayer`, drops out and adds the residual.
fn residual<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    norm: &str,
    x: Var,
    dropout: &mut Dropout,
    sublayer: impl FnOnce(&mut Tape<T>, Var, &mut Dropout) -> Result<Var>,
) -> Result<Var> {
    let normed = tape.rms_norm(x, vars.get(norm)?)?;
    let out = sublayer(tape, normed, dropout)?;
    let out = dropout.apply(tape, out)?;
    tape.add(x, out)
}

/// Key mask `[batch × 1 × 1 × k_len]`-style expanded to `[batch × heads × q_len × k_len]`.
fn key_mask<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    padding: &[bool],
    batch: usize,
    q_len: usize,
    k_len: usize,
) -> Result<Option<Var>> {
    if !padding.iter().any(|&p| p) {
        return Ok(None);
    }
    let h = config.n_heads;
    let mut data = Vec::with_capacity(batch * h * q_len * k_len);
    for b in 0..batch {
        let row: Vec<T> = padding[b * k_len..(b + 1) * k_len]
            .iter()
            .map(|&p| if p { T::of(MASK_VALUE) } else { T::zero() })
            .collect();
        for _ in 0..h * q_len {
            data.extend_from_slice(&row);
        }
    }
    Ok(Some(tape.constant(Tensor::new(vec![batch, h, q_len, k_len], data)?)))
}

/// Runs the encoder stack over a batch of token sequences, right-padded
/// with `pad_id` to the longest one.
pub fn encode<'m, T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    inputs: &[Vec<u32>],
    padding_out: &'m mut Vec<bool>,
    dropout: &mut Dropout,
) -> Result<Encoded<'m>> {
    let padded = pad_batch(config, inputs)?;
    let (batch, len) = (padded.batch, padded.len);
    let emb = tape.embedding(vars.get("shared.embedding")?, &padded.ids)?;
    let mut x = dropout.apply(tape, emb)?;
    let bias = position_bias(tape, config, vars.get("encoder.block.0.attn.relative_bias")?, len, true)?;
    let mask = key_mask(tape, config, &padded.padding, batch, len, len)?;
    for i in 0..config.enc_layers {
        let p = format!("encoder.block.{i}");
        x = residual(tape, vars, &format!("{p}.attn_norm"), x, dropout, |tape, h, dropout| {
            let dims = AttentionInput {
                q_len: len,
                k_len: len,
                batch,
            };
            attention(
                tape,
                config,
                vars,
                &format!("{p}.attn"),
                h,
                h,
                dims,
                Some(bias),
                mask,
                dropout,
            )
        })?;
        x = residual(tape, vars, &format!("{p}.ffn_norm"), x, dropout, |tape, h, dropout| {
            feed_forward(tape, config, vars, &format!("{p}.ffn"), h, dropout)
        })?;
    }
    let x = tape.rms_norm(x, vars.get("encoder.final_norm")?)?;
    let hidden = dropout.apply(tape, x)?;
    *padding_out = padded.padding;
    Ok(Encoded {
        hidden,
        batch,
        len,
        key_padding: padding_out.as_slice(),
    })
}

/// Runs the decoder over `decoder_inputs` (already shifted right) and
/// returns logits `[batch × target_len × vocab]`.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    encoded: &Encoded,
    decoder_inputs: &[Vec<u32>],
    dropout: &mut Dropout,
) -> Result<Var> {
    let padded = pad_batch(config, decoder_inputs)?;
    let (batch, len) = (padded.batch, padded.len);
    if batch != encoded.batch {
        return Err(Error::Shape(format!(
            "decoder batch {batch} does not match encoder batch {}",
            encoded.batch
        )));
    }
    let emb = tape.embedding(vars.get("shared.embedding")?, &padded.ids)?;
    let emb = dropout.apply(tape, emb)?;
    decode_embedded(tape, config, vars, encoded, emb, batch, len, dropout)
}

/// Decoder over already embedded inputs `[batch·len × d_model]`, returning
/// logits `[batch × len × vocab]`.
#[allow(clippy::too_many_arguments)]
pub fn decode_embedded<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    encoded: &Encoded,
    embedded: Var,
    batch: usize,
    len: usize,
    dropout: &mut Dropout,
) -> Result<Var> {
    if tape.shape(embedded) != [batch * len, config.d_model] {
        return Err(Error::Shape(format!(
            "decoder embeddings {:?}, expected [{}, {}]",
            tape.shape(embedded),
            batch * len,
            config.d_model
        )));
    }
    let table = vars.get("shared.embedding")?;
    let mut x = embedded;

    let bias = position_bias(
        tape,
        config,
        vars.get("decoder.block.0.self_attn.relative_bias")?,
        len,
        false,
    )?;
    let causal: Vec<T> = (0..len * len)
        .map(|i| {
            if i % len > i / len {
                T::of(MASK_VALUE)
            } else {
                T::zero()
            }
        })
        .collect();
    let causal = tape.constant(Tensor::new(vec![len, len], causal)?);
    let self_bias = tape.add_broadcast(bias, causal)?;
    let cross_mask = key_mask(tape, config, encoded.key_padding, batch, len, encoded.len)?;

    for i in 0..config.dec_layers {
        let p = format!("decoder.block.{i}");
        x = residual(
            tape,
            vars,
            &format!("{p}.self_attn_norm"),
            x,
            dropout,
            |tape, h, dropout| {
                let dims = AttentionInput {
                    q_len: len,
                    k_len: len,
                    batch,
                };
                attention(
                    tape,
                    config,
                    vars,
                    &format!("{p}.self_attn"),
                    h,
                    h,
                    dims,
                    Some(self_bias),
                    None,
                    dropout,
                )
            },
        )?;
        x = residual(
            tape,
            vars,
            &format!("{p}.cross_attn_norm"),
            x,
            dropout,
            |tape, h, dropout| {
                let dims = AttentionInput {
                    q_len: len,
                    k_len: encoded.len,
                    batch,
                };
                attention(
                    tape,
                    config,
                    vars,
                    &format!("{p}.cross_attn"),
                    h,
                    encoded.hidden,
                    dims,
                    None,
                    cross_mask,
                    dropout,
                )
            },
        )?;
        x = residual(tape, vars, &format!("{p}.ffn_norm"), x, dropout, |tape, h, dropout| {
            feed_forward(tape, config, vars, &format!("{p}.ffn"), h, dropout)
        })?;
    }
    let x = tape.rms_norm(x, vars.get("decoder.final_norm")?)?;
    let x = dropout.apply(tape, x)?;
    let x = tape.scale(x, T::of((config.d_model as f64).powf(-0.5)));
    let head = tape.permute(table, &[1, 0])?;
    let logits = tape.matmul(x, head)?;
    tape.reshape(logits, &[batch, len, config.vocab_size])
}

/// Encoder followed by decoder, returning logits `[batch × target_len × vocab]`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    inputs: &[Vec<u32>],
    decoder_inputs: &[Vec<u32>],
    dropout: &mut Dropout,
) -> Result<Var> {
    let mut padding = Vec::new();
    let encoded = encode(tape, config, vars, inputs, &mut padding, dropout)?;
    decode(tape, config, vars, &encoded, decoder_inputs, dropout)
}

/// A configured model with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2Seq<T> {
    pub config: ModelConfig,
    pub params: ParameterStore<T>,
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let params = ParameterStore::init(&config, rng)?;
        Ok(Seq2Seq { config, params })
    }

    /// Inference-mode logits `[batch × target_len × vocab]`.
    pub fn logits(&self, inputs: &[Vec<u32>], decoder_inputs: &[Vec<u32>]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&self.params, &mut tape, false);
        let out = forward(
            &mut tape,
            &self.config,
            &vars,
            inputs,
            decoder_inputs,
            &mut Dropout::off(),
        )?;
        Ok(tape.value(out).clone())
    }

    /// Inference-mode encoder states `[batch·len × d_model]` and the padding mask.
    pub fn encoder_states(&self, inputs: &[Vec<u32>]) -> Result<EncoderCache<T>> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&self.params, &mut tape, false);
        let mut padding = Vec::new();
        let enc = encode(
            &mut tape,
            &self.config,
            &vars,
            inputs,
            &mut padding,
            &mut Dropout::off(),
        )?;
        let (batch, len) = (enc.batch, enc.len);
        let hidden = Arc::new(tape.value(enc.hidden).clone());
        Ok(EncoderCache {
            hidden,
            batch,
            len,
            padding,
        })
    }

    /// Logits for the last position of each decoder prefix, `[batch × vocab]`
    /// flattened, reusing cached encoder states.
    pub fn next_token_logits(&self, cache: &EncoderCache<T>, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<T>>> {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&self.params, &mut tape, false);
        let hidden = tape.shared_leaf(Arc::clone(&cache.hidden), false);
        let enc = Encoded {
            hidden,
            batch: cache.batch,
            len: cache.len,
            key_padding: &cache.padding,
        };
        if prefixes.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument(
                "decoder prefix must start with the start token".into(),
            ));
        }
        let logits = decode(&mut tape, &self.config, &vars, &enc, prefixes, &mut Dropout::off())?;
        let value = tape.value(logits);
        let (len, vocab) = (value.shape()[1], value.shape()[2]);
        Ok(prefixes
            .iter()
            .enumerate()
            .map(|(b, p)| {
                let row = (b * len + p.len() - 1) * vocab;
                value.data()[row..row + vocab].to_vec()
            })
            .collect())
    }
}

/// Detached encoder output reused across decoding steps.
#[derive(Clone, Debug)]
pub struct EncoderCache<T> {
    hidden: Arc<Tensor<T>>,
    batch: usize,
    len: usize,
    padding: Vec<bool>,
}

impl<T> EncoderCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}
