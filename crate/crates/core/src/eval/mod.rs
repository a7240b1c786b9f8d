//! Greedy decoding, output matching and task metrics.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

pub use metrics::{
    accuracy, entity_counts, entity_f1, lcs_len, lemma_accuracy, macro_f1, majority_baseline, majority_label,
    parse_entity_list, rouge_l, EntityCounts,
};

use crate::error::{Error, Result};
use crate::model::{EncoderCache, Seq2Seq};
use crate::tasks::{render_csv, Metric, TaskKind};
use crate::tensor::Scalar;
use crate::tokenizer::Vocabulary;

/// Anything that scores the next token given an encoder input and a
/// decoder prefix.
pub trait StepScorer: Sync {
    type Context: Send + Sync;

    fn start_id(&self) -> u32;
    fn eos_id(&self) -> u32;
    fn prepare(&self, inputs: &[Vec<u32>]) -> Result<Self::Context>;
    /// One score vector per prefix; all prefixes have equal length.
    fn next_scores(&self, ctx: &Self::Context, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>;
}

impl<T: Scalar> StepScorer for Seq2Seq<T> {
    type Context = EncoderCache<T>;

    fn start_id(&self) -> u32 {
        self.config.pad_id
    }

    fn eos_id(&self) -> u32 {
        crate::tokenizer::EOS_ID
    }

    fn prepare(&self, inputs: &[Vec<u32>]) -> Result<Self::Context> {
        self.encoder_states(inputs)
    }

    fn next_scores(&self, ctx: &Self::Context, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .next_token_logits(ctx, prefixes)?
            .into_iter()
            .map(|row| row.into_iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
            .collect())
    }
}

/// First index of the maximum; NaN scores never win.
fn argmax(scores: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || scores[best].is_nan() && !s.is_nan() {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding of a batch: start from the start symbol, append the
/// argmax token (lowest id on ties) until EOS or `max_len` tokens. The
/// result omits the start symbol and the EOS.
pub fn greedy_decode_batch<S: StepScorer>(scorer: &S, inputs: &[Vec<u32>], max_len: usize) -> Result<Vec<Vec<u32>>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let ctx = scorer.prepare(inputs)?;
    let eos = scorer.eos_id();
    let mut prefixes = vec![vec![scorer.start_id()]; inputs.len()];
    let mut done = vec![false; inputs.len()];
    let mut out = vec![Vec::new(); inputs.len()];
    for _ in 0..max_len {
        let scores = scorer.next_scores(&ctx, &prefixes)?;
        for (i, row) in scores.iter().enumerate() {
            let next = if done[i] { scorer.start_id() } else { argmax(row) };
            if !done[i] {
                if next == eos {
                    done[i] = true;
                } else {
                    out[i].push(next);
                }
            }
            prefixes[i].push(next);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

pub fn greedy_decode<S: StepScorer>(scorer: &S, input: &[u32], max_len: usize) -> Result<Vec<u32>> {
    Ok(greedy_decode_batch(scorer, &[input.to_vec()], max_len)?.remove(0))
}

/// Decodes many inputs in parallel chunks of `batch_size`.
pub fn greedy_decode_all<S: StepScorer>(
    scorer: &S,
    inputs: &[Vec<u32>],
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<Vec<u32>>> {
    let chunks: Vec<Vec<Vec<u32>>> = inputs
        .par_chunks(batch_size.max(1))
        .map(|c| greedy_decode_batch(scorer, c, max_len))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Encodes `texts`, decodes greedily and returns the raw generated text.
pub fn generate<S: StepScorer>(
    scorer: &S,
    vocab: &Vocabulary,
    texts: &[String],
    max_len: usize,
    batch_size: usize,
) -> Result<Vec<String>> {
    let inputs: Vec<Vec<u32>> = texts.iter().map(|t| vocab.encode(t, true)).collect();
    greedy_decode_all(scorer, &inputs, max_len, batch_size)?
        .iter()
        .map(|ids| vocab.decode(ids, false))
        .collect()
}

/// Removes sentinel, pad and EOS markers and surrounding whitespace.
pub fn clean_generation(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let special = ["<pad>", "</s>"]
            .into_iter()
            .find(|s| tail.starts_with(s))
            .map(str::len)
            .or_else(|| {
                let body = tail.strip_prefix("<extra_id_")?;
                let digits = body.bytes().take_while(u8::is_ascii_digit).count();
                (digits > 0 && body[digits..].starts_with('>')).then_some("<extra_id_".len() + digits + 1)
            });
        match special {
            Some(len) => rest = &tail[len..],
            None => {
                out.push('<');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The label exactly equal to the cleaned generation, if any.
pub fn postfilter_and_match<'a>(generated: &str, labels: &[&'a str]) -> Option<&'a str> {
    let cleaned = clean_generation(generated);
    labels.iter().copied().find(|l| *l == cleaned)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub task: TaskKind,
    pub metric: &'static str,
    pub value: f64,
    /// Fraction of generations matching no label (classification only).
    pub invalid_rate: Option<f64>,
    pub extra: BTreeMap<String, f64>,
    /// `(generated, gold)` per example.
    pub predictions: Vec<(String, String)>,
}

impl EvalReport {
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task={}", self.task);
        let _ = writeln!(s, "metric={}", self.metric);
        let _ = writeln!(s, "value={:.6}", self.value);
        if let Some(r) = self.invalid_rate {
            let _ = writeln!(s, "invalid_rate={r:.6}");
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        let _ = writeln!(s, "examples={}", self.predictions.len());
        s
    }

    /// Human-readable summary with percentages.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>10}", "task", self.task);
        let _ = writeln!(s, "{:<16} {:>9.2}%", self.metric, 100.0 * self.value);
        if let Some(r) = self.invalid_rate {
            let _ = writeln!(s, "{:<16} {:>9.2}%", "invalid", 100.0 * r);
        }
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k:<16} {:>9.2}%", 100.0 * v);
        }
        let _ = writeln!(s, "{:<16} {:>10}", "examples", self.predictions.len());
        s
    }

    pub fn predictions_csv(&self) -> Result<Vec<u8>> {
        render_csv(self.predictions.iter().map(|(g, t)| (g.as_str(), t.as_str())))
    }
}

/// Scores raw generations against gold targets with the task's metric.
pub fn evaluate_generations(task: TaskKind, generated: &[String], golds: &[String]) -> Result<EvalReport> {
    if generated.len() != golds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} generations for {} references",
            generated.len(),
            golds.len()
        )));
    }
    let cleaned: Vec<String> = generated.iter().map(|g| clean_generation(g)).collect();
    let gold_refs: Vec<&str> = golds.iter().map(String::as_str).collect();
    let mut extra = BTreeMap::new();
    let mut invalid_rate = None;
    let metric = task.metric();
    let value = match metric {
        Metric::Accuracy | Metric::MacroF1 => {
            let labels = task.labels().expect("classification task has labels");
            let matched: Vec<Option<&str>> = cleaned.iter().map(|c| postfilter_and_match(c, labels)).collect();
            let invalid = matched.iter().filter(|m| m.is_none()).count();
            invalid_rate = Some(invalid as f64 / matched.len().max(1) as f64);
            if metric == Metric::Accuracy {
                accuracy(&matched, &gold_refs)?
            } else {
                macro_f1(&matched, &gold_refs)?
            }
        }
        Metric::EntityF1 => entity_f1(&cleaned, golds)?,
        Metric::LemmaAccuracy => {
            let (word, sentence) = lemma_accuracy(&cleaned, golds)?;
            extra.insert("sentence_accuracy".to_string(), sentence);
            word
        }
        Metric::RougeL => {
            if golds.is_empty() {
                return Err(Error::InvalidArgument("no examples to score".into()));
            }
            cleaned.iter().zip(golds).map(|(c, g)| rouge_l(c, g)).sum::<f64>() / golds.len() as f64
        }
    };
    Ok(EvalReport {
        task,
        metric: metric.name(),
        value,
        invalid_rate,
        extra,
        predictions: cleaned.into_iter().zip(golds.iter().cloned()).collect(),
    })
}

#[cfg(test)]
mod tests;
