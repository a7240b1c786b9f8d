use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use super::{pretokenize, Vocabulary, SPECIAL_COUNT, WORD_MARKER};
use crate::error::{Error, Result};

type Pair = (u32, u32);

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: String,
    right: String,
    pair: Pair,
}

impl Ord for Candidate {
    // max-heap: highest count first, then the lexicographically smallest pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
    words: Vec<(Vec<u32>, u64)>,
    pair_counts: HashMap<Pair, u64>,
    occurrences: HashMap<Pair, BTreeSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn candidate(&self, pair: Pair, count: u64) -> Candidate {
        Candidate {
            count,
            left: self.tokens[pair.0 as usize].clone(),
            right: self.tokens[pair.1 as usize].clone(),
            pair,
        }
    }

    fn next_best(&mut self) -> Option<Pair> {
        while let Some(top) = self.heap.pop() {
            let current = self.pair_counts.get(&top.pair).copied().unwrap_or(0);
            if current == 0 {
                continue;
            }
            if current != top.count {
                let refreshed = self.candidate(top.pair, current);
                self.heap.push(refreshed);
                continue;
            }
            return Some(top.pair);
        }
        None
    }

    /// Applies `pair -> merged` to every word containing it and refreshes
    /// the pair statistics of those words.
    fn apply(&mut self, pair: Pair, merged: u32) {
        let affected = self.occurrences.remove(&pair).unwrap_or_default();
        let mut touched = HashSet::new();
        for wi in affected {
            let (symbols, count) = &mut self.words[wi];
            let count = *count;
            if !symbols.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            for w in symbols.windows(2) {
                if let Some(c) = self.pair_counts.get_mut(&(w[0], w[1])) {
                    *c -= count;
                }
            }
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(symbols[i]);
                    i += 1;
                }
            }
            *symbols = out;
            for w in symbols.windows(2) {
                let p = (w[0], w[1]);
                *self.pair_counts.entry(p).or_default() += count;
                self.occurrences.entry(p).or_default().insert(wi);
                touched.insert(p);
            }
        }
        self.pair_counts.remove(&pair);
        for p in touched {
            let count = self.pair_counts.get(&p).copied().unwrap_or(0);
            if count > 0 {
                let c = self.candidate(p, count);
                self.heap.push(c);
            }
        }
    }
}

/// Learns a BPE vocabulary of exactly `vocab_size` ids.
///
/// Seed symbols are every character of the corpus plus the word marker.
/// Merges are taken greedily by pair frequency, ties going to the
/// lexicographically smallest `(left, right)` pair. If the corpus runs out
/// of pairs first, the remaining ids are filled with `<unused_*>` tokens.
pub fn train_bpe<I, S>(corpus: I, vocab_size: usize, sentinel_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in corpus {
        for chunk in pretokenize(text.as_ref()) {
            *word_counts.entry(chunk).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train a tokenizer on an empty corpus".into(),
        ));
    }
    let mut alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.insert(WORD_MARKER);
    let base = SPECIAL_COUNT + alphabet.len() + sentinel_count;
    if vocab_size < base {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size {vocab_size} is below the {base} ids needed for {} symbols, {SPECIAL_COUNT} specials and {sentinel_count} sentinels",
            alphabet.len()
        )));
    }
    let budget = vocab_size - base;

    let tokens: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let lookup: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    let words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.chars().map(|ch| lookup[&ch.to_string()]).collect(), c))
        .collect();

    let mut trainer = Trainer {
        tokens,
        lookup,
        words,
        pair_counts: HashMap::new(),
        occurrences: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    for (wi, (symbols, count)) in trainer.words.iter().enumerate() {
        for w in symbols.windows(2) {
            *trainer.pair_counts.entry((w[0], w[1])).or_default() += count;
            trainer.occurrences.entry((w[0], w[1])).or_default().insert(wi);
        }
    }
    let initial: Vec<Candidate> = trainer
        .pair_counts
        .iter()
        .map(|(&p, &c)| trainer.candidate(p, c))
        .collect();
    trainer.heap.extend(initial);

    let mut merges = Vec::new();
    let mut added = 0;
    while added < budget {
        let Some(pair) = trainer.next_best() else { break };
        let left = trainer.tokens[pair.0 as usize].clone();
        let right = trainer.tokens[pair.1 as usize].clone();
        let joined = format!("{left}{right}");
        let merged = match trainer.lookup.get(&joined) {
            Some(&id) => id,
            None => {
                let id = trainer.tokens.len() as u32;
                trainer.tokens.push(joined.clone());
                trainer.lookup.insert(joined, id);
                added += 1;
                id
            }
        };
        merges.push((left, right));
        trainer.apply(pair, merged);
    }
    Vocabulary::assemble(trainer.tokens, merges, vocab_size, sentinel_count)
}
