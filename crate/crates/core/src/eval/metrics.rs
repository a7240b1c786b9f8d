use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::tasks::EMPTY_ENTITY;

/// Length of the longest common subsequence of two token slices.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over lowercased whitespace tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = candidate.to_lowercase();
    let r = reference.to_lowercase();
    let ct: Vec<&str> = c.split_whitespace().collect();
    let rt: Vec<&str> = r.split_whitespace().collect();
    let l = lcs_len(&ct, &rt);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / ct.len() as f64;
    let rec = l as f64 / rt.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Splits a generated entity list on commas; `brez` and blanks mean none.
pub fn parse_entity_list(text: &str) -> Vec<String> {
    let t = text.trim();
    if t.is_empty() || t == EMPTY_ENTITY {
        return Vec::new();
    }
    t.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EntityCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl EntityCounts {
    /// Micro F1; zero when nothing was predicted or expected anywhere.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Multiset entity matching per example, summed over examples.
pub fn entity_counts<S: AsRef<str>>(predictions: &[S], golds: &[S]) -> Result<EntityCounts> {
    check_lengths(predictions.len(), golds.len())?;
    let mut total = EntityCounts::default();
    for (p, g) in predictions.iter().zip(golds) {
        let pred = parse_entity_list(p.as_ref());
        let gold = parse_entity_list(g.as_ref());
        let mut remaining: HashMap<&str, usize> = HashMap::new();
        for e in &gold {
            *remaining.entry(e).or_default() += 1;
        }
        let mut tp = 0;
        for e in &pred {
            if let Some(n) = remaining.get_mut(e.as_str()).filter(|n| **n > 0) {
                *n -= 1;
                tp += 1;
            }
        }
        total.tp += tp;
        total.fp += pred.len() - tp;
        total.fn_ += gold.len() - tp;
    }
    Ok(total)
}

pub fn entity_f1<S: AsRef<str>>(predictions: &[S], golds: &[S]) -> Result<f64> {
    Ok(entity_counts(predictions, golds)?.f1())
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{a} predictions for {b} references")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("no examples to score".into()));
    }
    Ok(())
}

/// Fraction of predictions equal to the gold label; `None` (an invalid
/// generation) never matches.
pub fn accuracy(predictions: &[Option<&str>], golds: &[&str]) -> Result<f64> {
    check_lengths(predictions.len(), golds.len())?;
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_deref() == Some(**g))
        .count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Unweighted mean of per-class F1 over the classes present in `golds`.
pub fn macro_f1(predictions: &[Option<&str>], golds: &[&str]) -> Result<f64> {
    check_lengths(predictions.len(), golds.len())?;
    let mut classes: BTreeMap<&str, EntityCounts> = golds.iter().map(|g| (*g, EntityCounts::default())).collect();
    for (p, g) in predictions.iter().zip(golds) {
        if p.as_deref() == Some(*g) {
            classes.get_mut(g).expect("gold class").tp += 1;
        } else {
            classes.get_mut(g).expect("gold class").fn_ += 1;
            if let Some(c) = p.and_then(|p| classes.get_mut(p)) {
                c.fp += 1;
            }
        }
    }
    Ok(classes.values().map(EntityCounts::f1).sum::<f64>() / classes.len() as f64)
}

fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// Word and sentence accuracy of lemmatized sentences, ignoring tokens
/// without any letter or digit. Tokens align by position; a length
/// difference counts each surplus token as an error.
pub fn lemma_accuracy<S: AsRef<str>>(predictions: &[S], golds: &[S]) -> Result<(f64, f64)> {
    check_lengths(predictions.len(), golds.len())?;
    let (mut words, mut correct, mut sentences) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        let pt: Vec<&str> = p.as_ref().split_whitespace().filter(|t| !is_punctuation(t)).collect();
        let gt: Vec<&str> = g.as_ref().split_whitespace().filter(|t| !is_punctuation(t)).collect();
        let n = pt.len().max(gt.len());
        let hits = pt.iter().zip(&gt).filter(|(a, b)| a == b).count();
        words += n;
        correct += hits;
        if hits == n {
            sentences += 1;
        }
    }
    let word_acc = if words == 0 { 1.0 } else { correct as f64 / words as f64 };
    Ok((word_acc, sentences as f64 / golds.len() as f64))
}

/// Most frequent label; ties go to the lexicographically smallest.
pub fn majority_label<'a>(labels: &[&'a str]) -> Result<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (label, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((label, n));
        }
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::InvalidArgument("no training labels".into()))
}

/// Scores a constant predictor of the training majority on `test`.
pub fn majority_baseline(train: &[&str], test: &[&str], macro_averaged: bool) -> Result<f64> {
    let label = majority_label(train)?;
    let preds = vec![Some(label); test.len()];
    if macro_averaged {
        macro_f1(&preds, test)
    } else {
        accuracy(&preds, test)
    }
}
