//! Plain-text vocabulary and merges files.
//!
//! Vocabulary file: a header `version,vocab_size,sentinel_count,pad_id,eos_id,unk_id`
//! followed by one token per line in id order. Merges file: one
//! `left right` pair per line in application order. Backslash, tab, CR, LF
//! and space inside tokens are written as `\\`, `\t`, `\r`, `\n` and `\s`.

use std::path::Path;

use super::{Vocabulary, EOS_ID, PAD_ID, UNK_ID, VOCAB_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::fsutil;

fn escape(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' ' => out.push_str("\\s"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(raw: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('n') => '\n',
            Some('r') => '\r',
            Some('t') => '\t',
            Some('s') => ' ',
            other => {
                return Err(Error::Malformed {
                    line,
                    reason: format!("bad escape \\{}", other.map(String::from).unwrap_or_default()),
                })
            }
        });
    }
    Ok(out)
}

impl Vocabulary {
    pub fn vocab_file_contents(&self) -> String {
        let mut out = format!(
            "{VOCAB_FORMAT_VERSION},{},{},{},{},{}\n",
            self.size(),
            self.sentinel_count,
            self.pad_id,
            self.eos_id,
            self.unk_id
        );
        for tok in &self.id_to_token {
            out.push_str(&escape(tok));
            out.push('\n');
        }
        out
    }

    pub fn merges_file_contents(&self) -> String {
        self.merges
            .iter()
            .map(|(l, r)| format!("{} {}\n", escape(l), escape(r)))
            .collect()
    }

    pub fn save(&self, vocab_path: &Path, merges_path: &Path) -> Result<()> {
        fsutil::write_atomic(vocab_path, self.vocab_file_contents().as_bytes())?;
        fsutil::write_atomic(merges_path, self.merges_file_contents().as_bytes())
    }

    pub fn load(vocab_path: &Path, merges_path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_string(vocab_path)?, &fsutil::read_string(merges_path)?)
    }

    pub fn parse(vocab_text: &str, merges_text: &str) -> Result<Self> {
        let mut lines = vocab_text.lines();
        let header = lines.next().ok_or(Error::Malformed {
            line: 1,
            reason: "missing header".into(),
        })?;
        let fields: Vec<u64> = header
            .split(',')
            .map(|f| f.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Malformed {
                line: 1,
                reason: format!("bad header {header:?}: {e}"),
            })?;
        let [version, size, sentinels, pad, eos, unk] = fields[..] else {
            return Err(Error::Malformed {
                line: 1,
                reason: format!("header needs 6 fields, got {}", fields.len()),
            });
        };
        if version != u64::from(VOCAB_FORMAT_VERSION) {
            return Err(Error::Version {
                found: version as u32,
                expected: VOCAB_FORMAT_VERSION,
            });
        }
        if (pad, eos, unk) != (PAD_ID.into(), EOS_ID.into(), UNK_ID.into()) {
            return Err(Error::Malformed {
                line: 1,
                reason: "unsupported special token ids".into(),
            });
        }
        let tokens = lines
            .enumerate()
            .map(|(i, l)| unescape(l, i + 2))
            .collect::<Result<Vec<_>>>()?;
        if tokens.len() as u64 != size {
            return Err(Error::Malformed {
                line: tokens.len() + 1,
                reason: format!("header declares {size} tokens, file has {}", tokens.len()),
            });
        }
        let merges = merges_text
            .lines()
            .enumerate()
            .map(|(i, l)| match l.split_once(' ') {
                Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((unescape(a, i + 1)?, unescape(b, i + 1)?)),
                _ => Err(Error::Malformed {
                    line: i + 1,
                    reason: format!("bad merge line {l:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(tokens, merges, sentinels as usize)
    }
}
