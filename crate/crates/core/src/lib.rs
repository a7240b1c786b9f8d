//! Desk-scale text-to-text transformer toolkit.
//!
//! The crate covers the whole pipeline of a T5-style encoder-decoder:
//!
//! ```text
//! raw text ─► corpus (dedup, stats) ─► tokenizer (BPE + sentinels)
//!          ─► noising (span corruption / i.i.d. denoising)
//!          ─► model (encoder-decoder, relative position bias)
//!          ─► training (AdamW, token-budget batches, checkpoints)
//! task data ─► tasks (text-to-text formatting) ─► eval (greedy decoding, metrics)
//! ```
//!
//! All numeric code runs on the small reverse-mode engine in [`tensor`],
//! generic over `f32` (training) and `f64` (gradient checking).

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod model;
pub mod noising;
pub mod tasks;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
