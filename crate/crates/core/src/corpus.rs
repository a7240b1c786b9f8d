//! Corpus ingestion, paragraph-level near-duplicate removal and size
//! statistics.
//!
//! A paragraph is dropped when more than `threshold` of its distinct word
//! n-gram shingles were already seen in earlier *kept* paragraphs. Admission
//! is decided in stream order, so the first occurrence always survives.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hasher;

use fnv::FnvHasher;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// Identifies the shingle hash in stats headers; bump when it changes.
pub const HASH_VERSION: &str = "fnv1a64-v1";
pub const DEFAULT_SHINGLE_ORDER: usize = 10;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paragraph {
    pub doc_id: String,
    pub text: String,
    pub word_count: usize,
}

impl Paragraph {
    /// `None` for whitespace-only text.
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return None;
        }
        let word_count = text.split_whitespace().count();
        Some(Paragraph {
            doc_id: doc_id.into(),
            text,
            word_count,
        })
    }
}

/// Splits a document into paragraphs at blank lines.
pub fn read_paragraphs(text: &str, doc_id: &str) -> Vec<Paragraph> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, out: &mut Vec<Paragraph>| {
        if let Some(p) = Paragraph::new(format!("{doc_id}:{}", out.len()), current.join("\n")) {
            out.push(p);
        }
        current.clear();
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut out);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut out);
    out
}

pub fn write_paragraphs(paragraphs: &[Paragraph]) -> String {
    let mut out = String::new();
    for (i, p) in paragraphs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&p.text);
        out.push('\n');
    }
    out
}

/// FNV-1a over the words joined by single spaces.
pub fn shingle_hash(words: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            h.write(b" ");
        }
        h.write(w.as_bytes());
    }
    h.finish()
}

/// Hashes of every run of `n` consecutive words; a paragraph shorter than
/// `n` words yields the single hash of all its words.
pub fn shingle_set(p: &Paragraph, n: usize) -> HashSet<u64> {
    let words: Vec<&str> = p.text.split_whitespace().collect();
    let n = n.max(1);
    if words.len() < n {
        return HashSet::from([shingle_hash(&words)]);
    }
    words.windows(n).map(shingle_hash).collect()
}

#[derive(Clone, Debug)]
pub struct ShingleIndex {
    seen: HashSet<u64>,
    n: usize,
}

impl ShingleIndex {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("shingle order must be at least 1".into()));
        }
        Ok(ShingleIndex {
            seen: HashSet::new(),
            n,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    /// Fraction of `shingles` already present.
    pub fn overlap(&self, shingles: &HashSet<u64>) -> f64 {
        if shingles.is_empty() {
            return 0.0;
        }
        let hits = shingles.iter().filter(|h| self.seen.contains(h)).count();
        hits as f64 / shingles.len() as f64
    }

    pub fn insert_all(&mut self, shingles: HashSet<u64>) {
        self.seen.extend(shingles);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DedupConfig {
    pub shingle_order: usize,
    pub threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            shingle_order: DEFAULT_SHINGLE_ORDER,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub paragraphs: u64,
    pub words: u64,
    /// Present only when a vocabulary was supplied.
    pub tokens: Option<u64>,
}

impl CorpusStats {
    fn add(&mut self, p: &Paragraph, vocab: Option<&Vocabulary>) {
        self.paragraphs += 1;
        self.words += p.word_count as u64;
        if let Some(v) = vocab {
            *self.tokens.get_or_insert(0) += v.encode(&p.text, false).len() as u64;
        }
    }
}

/// Word counts by whitespace split; token counts via `vocab` when given.
pub fn corpus_stats<'a, I>(paragraphs: I, vocab: Option<&Vocabulary>) -> CorpusStats
where
    I: IntoIterator<Item = &'a Paragraph>,
{
    let mut stats = CorpusStats {
        tokens: vocab.map(|_| 0),
        ..Default::default()
    };
    for p in paragraphs {
        stats.add(p, vocab);
    }
    stats
}

#[derive(Clone, Debug, PartialEq)]
pub struct DedupStats {
    pub config: DedupConfig,
    pub before: CorpusStats,
    pub after: CorpusStats,
}

impl DedupStats {
    pub fn kept(&self) -> u64 {
        self.after.paragraphs
    }

    pub fn dropped(&self) -> u64 {
        self.before.paragraphs - self.after.paragraphs
    }

    /// `key=value` lines; token counts are blank without a vocabulary.
    pub fn to_key_values(&self) -> String {
        let tokens = |t: Option<u64>| t.map(|t| t.to_string()).unwrap_or_default();
        let mut out = String::new();
        let _ = writeln!(out, "hash={HASH_VERSION}");
        let _ = writeln!(out, "shingle_order={}", self.config.shingle_order);
        let _ = writeln!(out, "threshold={}", self.config.threshold);
        let _ = writeln!(out, "paragraphs_before={}", self.before.paragraphs);
        let _ = writeln!(out, "paragraphs_kept={}", self.kept());
        let _ = writeln!(out, "paragraphs_dropped={}", self.dropped());
        let _ = writeln!(out, "words_before={}", self.before.words);
        let _ = writeln!(out, "words_after={}", self.after.words);
        let _ = writeln!(out, "tokens_before={}", tokens(self.before.tokens));
        let _ = writeln!(out, "tokens_after={}", tokens(self.after.tokens));
        out
    }

    pub fn render_table(&self) -> String {
        let tokens = |t: Option<u64>| t.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>14} {:>14}", "", "Tokens", "Words");
        let _ = writeln!(
            out,
            "{:<28} {:>14} {:>14}",
            "Total",
            tokens(self.before.tokens),
            self.before.words
        );
        let _ = writeln!(
            out,
            "{:<28} {:>14} {:>14}",
            "Total after deduplication",
            tokens(self.after.tokens),
            self.after.words
        );
        out
    }
}

/// Streaming deduplicator: feed paragraphs in order with [`Deduplicator::admit`].
pub struct Deduplicator<'v> {
    config: DedupConfig,
    index: ShingleIndex,
    vocab: Option<&'v Vocabulary>,
    before: CorpusStats,
    after: CorpusStats,
}

impl<'v> Deduplicator<'v> {
    pub fn new(config: DedupConfig, vocab: Option<&'v Vocabulary>) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} outside [0, 1]",
                config.threshold
            )));
        }
        let empty = CorpusStats {
            tokens: vocab.map(|_| 0),
            ..Default::default()
        };
        Ok(Deduplicator {
            config,
            index: ShingleIndex::new(config.shingle_order)?,
            vocab,
            before: empty,
            after: empty,
        })
    }

    /// Decides one paragraph given its precomputed shingles; kept paragraphs
    /// extend the index.
    pub fn admit_with_shingles(&mut self, p: &Paragraph, shingles: HashSet<u64>) -> bool {
        self.before.add(p, self.vocab);
        let keep = self.index.overlap(&shingles) <= self.config.threshold;
        if keep {
            self.after.add(p, self.vocab);
            self.index.insert_all(shingles);
        }
        keep
    }

    pub fn admit(&mut self, p: &Paragraph) -> bool {
        let shingles = shingle_set(p, self.config.shingle_order);
        self.admit_with_shingles(p, shingles)
    }

    pub fn stats(&self) -> DedupStats {
        DedupStats {
            config: self.config,
            before: self.before,
            after: self.after,
        }
    }
}

/// Deduplicates a whole batch. Shingles are computed in parallel; admission
/// stays sequential in input order.
pub fn deduplicate(
    paragraphs: Vec<Paragraph>,
    config: DedupConfig,
    vocab: Option<&Vocabulary>,
) -> Result<(Vec<Paragraph>, DedupStats)> {
    let mut dedup = Deduplicator::new(config, vocab)?;
    let shingles: Vec<HashSet<u64>> = paragraphs
        .par_iter()
        .map(|p| shingle_set(p, config.shingle_order))
        .collect();
    let kept = paragraphs
        .into_iter()
        .zip(shingles)
        .filter_map(|(p, s)| dedup.admit_with_shingles(&p, s).then_some(p))
        .collect();
    Ok((kept, dedup.stats()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn para(text: &str) -> Paragraph {
        Paragraph::new("doc", text).unwrap()
    }

    fn words(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn shingle_counts() {
        let p = para("a b c");
        let expected: HashSet<u64> = [shingle_hash(&["a", "b"]), shingle_hash(&["b", "c"])].into();
        assert_eq!(shingle_set(&p, 2), expected);
        assert_eq!(shingle_set(&para("a"), 10), HashSet::from([shingle_hash(&["a"])]));
        assert_eq!(shingle_set(&para("x y  z"), 2), shingle_set(&para("x y z"), 2));
        assert!(ShingleIndex::new(0).is_err());
    }

    #[test]
    fn paragraphs_split_on_blank_lines() {
        let ps = read_paragraphs("one two\nthree\n\n  \nfour\n\n\n", "d");
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].text, "one two\nthree");
        assert_eq!(ps[0].word_count, 3);
        assert_eq!(ps[1].doc_id, "d:1");
        assert_eq!(read_paragraphs(&write_paragraphs(&ps), "d"), ps);
    }

    #[test]
    fn exact_duplicates_are_dropped_and_disjoint_kept() {
        let a = para(&words("a", 20).join(" "));
        let b = para(&words("b", 20).join(" "));
        let (kept, stats) = deduplicate(vec![a.clone(), b.clone(), a.clone()], DedupConfig::default(), None).unwrap();
        assert_eq!(kept, vec![a, b]);
        assert_eq!((stats.kept(), stats.dropped()), (2, 1));
        assert_eq!(stats.before.words, 60);
        assert_eq!(stats.after.words, 40);
        assert_eq!(stats.after.tokens, None);
    }

    /// Counts shared 10-grams by direct string comparison.
    fn brute_overlap(seen: &[String], candidate: &[String], n: usize) -> f64 {
        let seen_grams: Vec<String> = seen.windows(n).map(|w| w.join(" ")).collect();
        let mut cand: Vec<String> = candidate.windows(n).map(|w| w.join(" ")).collect();
        cand.sort();
        cand.dedup();
        let hits = cand.iter().filter(|g| seen_grams.contains(g)).count();
        hits as f64 / cand.len() as f64
    }

    #[test]
    fn forty_percent_overlap_survives() {
        let a = words("a", 30);
        // 13 copied words give 4 shared 10-grams out of 19 - 9 = 10
        let mut b: Vec<String> = a[5..18].to_vec();
        b.extend(words("fresh", 6));
        assert_eq!(brute_overlap(&a, &b, 10), 0.4);

        let (pa, pb) = (para(&a.join(" ")), para(&b.join(" ")));
        let (kept, _) = deduplicate(vec![pa, pb.clone()], DedupConfig::default(), None).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[1], pb);

        // 60% overlap is dropped
        let mut c: Vec<String> = a[5..20].to_vec();
        c.extend(words("new", 4));
        assert_eq!(brute_overlap(&a, &c, 10), 0.6);
        let (kept, _) = deduplicate(
            vec![para(&a.join(" ")), para(&c.join(" "))],
            DedupConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn stats_examples() {
        assert_eq!(corpus_stats([&para("a b c")], None).words, 3);
        assert_eq!(corpus_stats(std::iter::empty(), None), CorpusStats::default());

        let sentence = "to je ena in edina poved ki se ponavlja v nedogled";
        let input: Vec<Paragraph> = (0..1000).map(|_| para(sentence)).collect();
        let before = corpus_stats(&input, None);
        let (kept, stats) = deduplicate(input, DedupConfig::default(), None).unwrap();
        let after = corpus_stats(&kept, None);
        assert_eq!(after.words * 1000, before.words);
        assert_eq!(stats.after, after);
        assert!(stats.to_key_values().contains("words_after=11\n"));
        assert!(stats.to_key_values().contains("tokens_after=\n"));
    }
}
