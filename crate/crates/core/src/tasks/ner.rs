use std::str::FromStr;

use rand::Rng;

use super::{TaskExample, TaskKind};
use crate::error::{Error, Result};

/// Target for a sentence with no entity of the prompted category.
pub const EMPTY_ENTITY: &str = "brez";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityCategory {
    Person,
    Location,
    Organization,
}

impl EntityCategory {
    /// Prompt order, one example per category per sentence.
    pub const ALL: [EntityCategory; 3] = [
        EntityCategory::Organization,
        EntityCategory::Location,
        EntityCategory::Person,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            EntityCategory::Person => "osebe",
            EntityCategory::Location => "lokacije",
            EntityCategory::Organization => "organizacije",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "PER" => Some(EntityCategory::Person),
            "LOC" => Some(EntityCategory::Location),
            "ORG" => Some(EntityCategory::Organization),
            _ => None,
        }
    }
}

/// A BIO label. Entity types other than persons, locations and
/// organizations are read as outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bio {
    Outside,
    Begin(EntityCategory),
    Inside(EntityCategory),
}

impl FromStr for Bio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Bio::Outside);
        }
        let (kind, tag) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidArgument(format!("malformed BIO tag {s:?}")))?;
        let category = EntityCategory::from_tag(tag);
        match (kind, category) {
            (_, None) if kind == "B" || kind == "I" => Ok(Bio::Outside),
            ("B", Some(c)) => Ok(Bio::Begin(c)),
            ("I", Some(c)) => Ok(Bio::Inside(c)),
            _ => Err(Error::InvalidArgument(format!("malformed BIO tag {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NerSentence {
    pub doc_id: String,
    pub sent_id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<Bio>,
}

impl NerSentence {
    pub fn new(doc_id: &str, sent_id: &str, tokens: Vec<String>, labels: Vec<Bio>) -> Result<Self> {
        if tokens.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens but {} labels",
                tokens.len(),
                labels.len()
            )));
        }
        let mut prev = Bio::Outside;
        for (i, &label) in labels.iter().enumerate() {
            if let Bio::Inside(c) = label {
                if !matches!(prev, Bio::Begin(p) | Bio::Inside(p) if p == c) {
                    return Err(Error::InvalidArgument(format!(
                        "I-tag at token {i} ({:?}) does not continue an entity of the same type",
                        tokens[i]
                    )));
                }
            }
            prev = label;
        }
        Ok(NerSentence {
            doc_id: doc_id.to_string(),
            sent_id: sent_id.to_string(),
            tokens,
            labels,
        })
    }

    /// Surface forms of `category` entities in sentence order.
    pub fn entities(&self, category: EntityCategory) -> Vec<String> {
        let mut out: Vec<Vec<&str>> = Vec::new();
        let mut open = false;
        for (tok, label) in self.tokens.iter().zip(&self.labels) {
            match *label {
                Bio::Begin(c) if c == category => {
                    out.push(vec![tok]);
                    open = true;
                }
                Bio::Inside(c) if c == category && open => out.last_mut().expect("open entity").push(tok),
                _ => open = false,
            }
        }
        out.into_iter().map(|words| words.join(" ")).collect()
    }
}

// doc id, sentence id, tokens, labels, first line number
type Pending = (String, String, Vec<String>, Vec<Bio>, usize);

/// Parses tab-separated `doc_id sent_id token tag` lines. Consecutive
/// lines with the same ids form a sentence; blank lines also separate.
pub fn parse_conll(text: &str) -> Result<Vec<NerSentence>> {
    let mut sentences = Vec::new();
    let mut current: Option<Pending> = None;
    let flush = |cur: Option<Pending>, out: &mut Vec<NerSentence>| -> Result<()> {
        if let Some((doc, sent, tokens, labels, line)) = cur {
            let s = NerSentence::new(&doc, &sent, tokens, labels).map_err(|e| Error::Malformed {
                line,
                reason: e.to_string(),
            })?;
            out.push(s);
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(current.take(), &mut sentences)?;
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Malformed {
                line: line_no,
                reason: format!("expected 4 tab-separated columns, found {}", cols.len()),
            });
        }
        let label: Bio = cols[3].trim().parse().map_err(|e: Error| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let same = matches!(&current, Some((d, s, ..)) if d == cols[0] && s == cols[1]);
        if !same {
            flush(current.take(), &mut sentences)?;
            current = Some((
                cols[0].to_string(),
                cols[1].to_string(),
                Vec::new(),
                Vec::new(),
                line_no,
            ));
        }
        let cur = current.as_mut().expect("sentence in progress");
        cur.2.push(cols[2].to_string());
        cur.3.push(label);
    }
    flush(current, &mut sentences)?;
    Ok(sentences)
}

/// Entity-retrieval example: category prefix plus sentence, targeting the
/// comma-separated entities or `brez`.
pub fn format_ner(sentence: &NerSentence, category: EntityCategory) -> TaskExample {
    let entities = sentence.entities(category);
    let target = if entities.is_empty() {
        EMPTY_ENTITY.to_string()
    } else {
        entities.join(", ")
    };
    TaskExample::new(
        TaskKind::Ner,
        format!("{}: {}", category.prefix(), sentence.tokens.join(" ")),
        target,
    )
    .with_meta("category", category.prefix())
}

pub fn format_ner_all(sentence: &NerSentence) -> Vec<TaskExample> {
    EntityCategory::ALL.iter().map(|&c| format_ner(sentence, c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    /// Probability of dropping an example whose target is `brez`.
    pub fn empty_drop_rate(self) -> f64 {
        match self {
            Split::Train => 0.95,
            Split::Validation => 0.5,
            Split::Test => 0.0,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// Drops entity-free examples at the split's rate; all others are kept.
pub fn balance_ner<R: Rng + ?Sized>(examples: Vec<TaskExample>, split: Split, rng: &mut R) -> Vec<TaskExample> {
    let rate = split.empty_drop_rate();
    if rate == 0.0 {
        return examples;
    }
    examples
        .into_iter()
        .filter(|e| e.target_text != EMPTY_ENTITY || rng.gen::<f64>() >= rate)
        .collect()
}
