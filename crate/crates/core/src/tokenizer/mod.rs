//! Byte-pair-encoding subword tokenizer with a reserved sentinel block.
//!
//! Id layout of a vocabulary of size `V` with `S` sentinels:
//!
//! ```text
//! 0 <pad> | 1 </s> | 2 <unk> | alphabet | merges | <unused_*> | sentinels
//!                                                              V-S .. V-1
//! ```
//!
//! `sentinel(0)` is `V-1`, `sentinel(1)` is `V-2`, and so on. Spaces are
//! rewritten to [`WORD_MARKER`], which starts the token that follows them,
//! so decoding restores the original spacing exactly.

mod io;
mod train;

use std::collections::HashMap;

pub use train::train_bpe;

use crate::error::{Error, Result};

pub const WORD_MARKER: char = '\u{2581}';
pub const PAD_TOKEN: &str = "<pad>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_SENTINELS: usize = 100;
pub const VOCAB_FORMAT_VERSION: u32 = 1;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
const SPECIAL_COUNT: usize = 3;

pub fn sentinel_token(k: usize) -> String {
    format!("<extra_id_{k}>")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct MergeRule {
    rank: u32,
    result: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    pad_id: u32,
    eos_id: u32,
    unk_id: u32,
    sentinel_count: usize,
    merges: Vec<(String, String)>,
    merge_rules: HashMap<(u32, u32), MergeRule>,
}

impl Vocabulary {
    /// Assembles a vocabulary from its learnable tokens (alphabet followed by
    /// merge results) padded with placeholders up to `vocab_size`.
    pub(crate) fn assemble(
        learned: Vec<String>,
        merges: Vec<(String, String)>,
        vocab_size: usize,
        sentinel_count: usize,
    ) -> Result<Self> {
        let fixed = SPECIAL_COUNT + sentinel_count;
        if learned.len() + fixed > vocab_size {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size {vocab_size} cannot hold {} learned tokens, {SPECIAL_COUNT} specials and {sentinel_count} sentinels",
                learned.len()
            )));
        }
        let mut id_to_token = vec![PAD_TOKEN.to_string(), EOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        id_to_token.extend(learned);
        let mut unused = 0;
        while id_to_token.len() < vocab_size - sentinel_count {
            id_to_token.push(format!("<unused_{unused}>"));
            unused += 1;
        }
        id_to_token.extend((0..sentinel_count).rev().map(sentinel_token));
        Self::from_parts(id_to_token, merges, sentinel_count)
    }

    pub(crate) fn from_parts(
        id_to_token: Vec<String>,
        merges: Vec<(String, String)>,
        sentinel_count: usize,
    ) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
        }
        let v = id_to_token.len();
        if v < SPECIAL_COUNT + sentinel_count
            || id_to_token[PAD_ID as usize] != PAD_TOKEN
            || id_to_token[EOS_ID as usize] != EOS_TOKEN
            || id_to_token[UNK_ID as usize] != UNK_TOKEN
            || (0..sentinel_count).any(|k| id_to_token[v - 1 - k] != sentinel_token(k))
        {
            return Err(Error::InvalidArgument("special or sentinel tokens out of place".into()));
        }
        let mut merge_rules = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                token_to_id
                    .get(t)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("merge refers to unknown token {t:?}")))
            };
            let rule = MergeRule {
                rank: rank as u32,
                result: lookup(&format!("{l}{r}"))?,
            };
            merge_rules.entry((lookup(l)?, lookup(r)?)).or_insert(rule);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
            pad_id: PAD_ID,
            eos_id: EOS_ID,
            unk_id: UNK_ID,
            sentinel_count,
            merges,
            merge_rules,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn sentinel_count(&self) -> usize {
        self.sentinel_count
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Id of sentinel `k`: `V - 1 - k`.
    pub fn sentinel_id(&self, k: usize) -> Result<u32> {
        if k >= self.sentinel_count {
            return Err(Error::SentinelOutOfRange {
                index: k,
                count: self.sentinel_count,
            });
        }
        Ok((self.size() - 1 - k) as u32)
    }

    /// Inverse of [`Vocabulary::sentinel_id`].
    pub fn sentinel_index(&self, id: u32) -> Option<usize> {
        let v = self.size();
        let id = id as usize;
        (id < v && id >= v - self.sentinel_count).then(|| v - 1 - id)
    }

    pub fn is_sentinel(&self, id: u32) -> bool {
        self.sentinel_index(id).is_some()
    }

    pub fn encode(&self, text: &str, append_eos: bool) -> Vec<u32> {
        let mut ids = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(&chunk, &mut ids);
        }
        if append_eos {
            ids.push(self.eos_id);
        }
        ids
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        let mut buf = [0u8; 4];
        let mut symbols: Vec<u32> = chunk
            .chars()
            .map(|c| self.id(c.encode_utf8(&mut buf)).unwrap_or(self.unk_id))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| {
                    self.merge_rules
                        .get(&(w[0], w[1]))
                        .map(|r| (r.rank, w[0], w[1], r.result))
                })
                .min();
            let Some((_, lid, rid, result)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == lid && symbols[i + 1] == rid {
                    merged.push(result);
                    i += 2;
                } else {
                    merged.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = merged;
        }
        out.extend(symbols);
    }

    /// Concatenates token strings, turning word markers back into spaces.
    /// With `strip_specials`, pad, EOS and sentinel tokens are dropped.
    pub fn decode(&self, ids: &[u32], strip_specials: bool) -> Result<String> {
        let mut text = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::TokenOutOfRange { id, size: self.size() })?;
            let special = id == self.pad_id || id == self.eos_id || self.is_sentinel(id);
            if special {
                if !strip_specials {
                    text.push_str(tok);
                }
                continue;
            }
            text.extend(tok.chars().map(|c| if c == WORD_MARKER { ' ' } else { c }));
        }
        Ok(text)
    }
}

/// Splits text into merge domains: every space becomes a word marker that
/// opens a new chunk.
pub(crate) fn pretokenize(text: &str) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c == ' ' {
            if !current.is_empty() {
                chunks.push(std::mem::take(&mut current));
            }
            current.push(WORD_MARKER);
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}
