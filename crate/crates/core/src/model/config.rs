use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub d_kv: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub rel_buckets: usize,
    pub rel_max_distance: usize,
    pub dropout: f64,
    pub gated_ffn: bool,
    /// Padding id; also the decoder start symbol.
    #[serde(default)]
    pub pad_id: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Small,
    Large,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset {other:?} (expected tiny, small or large)"
            ))),
        }
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        match preset {
            Preset::Tiny => Self::tiny(vocab_size),
            Preset::Small => Self::small(vocab_size),
            Preset::Large => Self::large(vocab_size),
        }
    }

    /// 8+8 layers, about 60M parameters with a 32k vocabulary.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 512,
            d_ff: 1024,
            n_heads: 6,
            d_kv: 64,
            enc_layers: 8,
            dec_layers: 8,
            rel_buckets: 32,
            rel_max_distance: 128,
            dropout: 0.1,
            gated_ffn: true,
            pad_id: 0,
        }
    }

    /// 24+24 layers, about 750M parameters with a 32k vocabulary.
    pub fn large(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 1024,
            d_ff: 2816,
            n_heads: 16,
            enc_layers: 24,
            dec_layers: 24,
            ..Self::small(vocab_size)
        }
    }

    /// Desk-scale model for smoke tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 32,
            d_ff: 64,
            n_heads: 4,
            d_kv: 8,
            enc_layers: 2,
            dec_layers: 2,
            rel_buckets: 16,
            rel_max_distance: 64,
            ..Self::small(vocab_size)
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.n_heads * self.d_kv
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("d_kv", self.d_kv),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("rel_buckets", self.rel_buckets),
            ("rel_max_distance", self.rel_max_distance),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model config: {name} must be positive")));
        }
        if self.rel_buckets < 4 {
            return Err(Error::InvalidArgument(
                "model config: rel_buckets must be at least 4".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "model config: dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.pad_id as usize >= self.vocab_size {
            return Err(Error::InvalidArgument(
                "model config: pad_id outside the vocabulary".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form parameter count of `config`.
pub fn count_parameters(config: &ModelConfig) -> u64 {
    let d = config.d_model as u64;
    let inner = config.inner_dim() as u64;
    let attention = 4 * d * inner;
    let ffn = if config.gated_ffn { 3 } else { 2 } * d * config.d_ff as u64;
    let bias_table = (config.rel_buckets * config.n_heads) as u64;
    let encoder_block = attention + ffn + 2 * d;
    let decoder_block = 2 * attention + ffn + 3 * d;
    let embedding = config.vocab_size as u64 * d;
    embedding
        + config.enc_layers as u64 * encoder_block
        + config.dec_layers as u64 * decoder_block
        + 2 * d
        + 2 * bias_table
}

/// Training tokens per parameter: `steps · batch_tokens / params`.
pub fn training_budget_ratio(steps: u64, batch_tokens: u64, params: f64) -> Result<f64> {
    if !(params > 0.0) || !params.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "parameter count must be positive, got {params}"
        )));
    }
    if steps == 0 || batch_tokens == 0 {
        return Err(Error::InvalidArgument("steps and batch tokens must be positive".into()));
    }
    Ok(steps as f64 * batch_tokens as f64 / params)
}

/// A pretraining run whose token budget is reported alongside its ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetRun {
    pub name: &'static str,
    pub steps: u64,
    pub batch_tokens: u64,
    pub params: f64,
    pub reported_ratio: f64,
}

pub const REFERENCE_RUNS: [BudgetRun; 5] = [
    BudgetRun {
        name: "large, 1 epoch",
        steps: 1_000_000,
        batch_tokens: 4096,
        params: 7.5e8,
        reported_ratio: 5.5,
    },
    BudgetRun {
        name: "large, 3 epochs",
        steps: 1_830_000,
        batch_tokens: 8192,
        params: 7.5e8,
        reported_ratio: 20.0,
    },
    BudgetRun {
        name: "large, 5 epochs",
        steps: 3_050_000,
        batch_tokens: 8192,
        params: 7.5e8,
        reported_ratio: 33.0,
    },
    BudgetRun {
        name: "small, 1 epoch",
        steps: 1_000_000,
        batch_tokens: 4096,
        params: 6.0e7,
        reported_ratio: 68.0,
    },
    BudgetRun {
        name: "small, 5 epochs",
        steps: 763_000,
        batch_tokens: 32_768,
        params: 6.0e7,
        reported_ratio: 414.0,
    },
];
