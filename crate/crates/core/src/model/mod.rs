//! T5-style encoder-decoder transformer.
//!
//! Pre-norm residual blocks with RMS normalization, a single embedding
//! shared by encoder input, decoder input and output projection, learned
//! relative position bias owned by the first block of each stack, and a
//! gated-GELU (or ReLU) feed-forward without biases.

mod config;
mod forward;
mod params;
pub mod position;

pub use config::{count_parameters, training_budget_ratio, BudgetRun, ModelConfig, Preset, REFERENCE_RUNS};
pub use forward::{decode, decode_embedded, encode, forward, Dropout, Encoded, EncoderCache, Seq2Seq};
pub use params::{ParamVars, ParameterStore};
pub use position::relative_bucket;
