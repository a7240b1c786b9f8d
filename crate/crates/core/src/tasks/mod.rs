//! Task datasets rendered as input/target string pairs.

mod csvio;
mod ner;
mod superglue;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use csvio::{parse_csv_dataset, read_csv_dataset, render_csv, write_csv_dataset};
pub use ner::{
    balance_ner, format_ner, format_ner_all, parse_conll, Bio, EntityCategory, NerSentence, Split, EMPTY_ENTITY,
};
pub use superglue::{format_superglue, mark_wsc};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    BoolQ,
    Cb,
    Copa,
    Rte,
    Wsc,
    Ner,
    Sa,
    Lem,
    Sta,
    Asn,
    Slots,
}

/// How a task's generations are scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    MacroF1,
    EntityF1,
    /// Word accuracy, with sentence accuracy reported alongside.
    LemmaAccuracy,
    RougeL,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::EntityF1 => "entity_f1",
            Metric::LemmaAccuracy => "word_accuracy",
            Metric::RougeL => "rouge_l",
        }
    }
}

const TRUE_FALSE: &[&str] = &["Pravilno.", "Napačno."];

impl TaskKind {
    pub const ALL: [TaskKind; 11] = [
        TaskKind::BoolQ,
        TaskKind::Cb,
        TaskKind::Copa,
        TaskKind::Rte,
        TaskKind::Wsc,
        TaskKind::Ner,
        TaskKind::Sa,
        TaskKind::Lem,
        TaskKind::Sta,
        TaskKind::Asn,
        TaskKind::Slots,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::BoolQ => "boolq",
            TaskKind::Cb => "cb",
            TaskKind::Copa => "copa",
            TaskKind::Rte => "rte",
            TaskKind::Wsc => "wsc",
            TaskKind::Ner => "ner",
            TaskKind::Sa => "sa",
            TaskKind::Lem => "lem",
            TaskKind::Sta => "sta",
            TaskKind::Asn => "asn",
            TaskKind::Slots => "slots",
        }
    }

    /// Default number of fine-tuning epochs.
    pub fn epochs(self) -> usize {
        match self {
            TaskKind::BoolQ | TaskKind::Sa => 10,
            TaskKind::Cb | TaskKind::Copa | TaskKind::Rte | TaskKind::Lem => 15,
            TaskKind::Wsc | TaskKind::Ner => 20,
            TaskKind::Sta | TaskKind::Asn => 5,
            TaskKind::Slots => 64,
        }
    }

    /// Maximum number of generated tokens.
    pub fn max_output_len(self) -> usize {
        match self {
            TaskKind::BoolQ => 4,
            TaskKind::Cb | TaskKind::Copa | TaskKind::Rte | TaskKind::Wsc => 6,
            TaskKind::Sa => 5,
            TaskKind::Ner => 64,
            TaskKind::Slots => 256,
            TaskKind::Lem | TaskKind::Sta | TaskKind::Asn => 512,
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            TaskKind::BoolQ | TaskKind::Copa | TaskKind::Rte | TaskKind::Wsc => Metric::Accuracy,
            TaskKind::Cb | TaskKind::Sa => Metric::MacroF1,
            TaskKind::Ner => Metric::EntityF1,
            TaskKind::Lem => Metric::LemmaAccuracy,
            TaskKind::Sta | TaskKind::Asn | TaskKind::Slots => Metric::RougeL,
        }
    }

    /// Closed label set for classification tasks.
    pub fn labels(self) -> Option<&'static [&'static str]> {
        match self {
            TaskKind::BoolQ | TaskKind::Wsc => Some(TRUE_FALSE),
            TaskKind::Cb => Some(&["implikacija", "nevtralno", "protislovje"]),
            TaskKind::Rte => Some(&["implikacija", "ni implikacija"]),
            TaskKind::Copa => Some(&["prva", "druga"]),
            TaskKind::Sa => Some(&["pozitivno", "negativno", "nevtralno"]),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        TaskKind::ALL.into_iter().find(|t| t.tag() == lower).ok_or_else(|| {
            let tags: Vec<_> = TaskKind::ALL.iter().map(|t| t.tag()).collect();
            Error::InvalidArgument(format!("unknown task {s:?} (expected one of {})", tags.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskExample {
    pub input_text: String,
    pub target_text: String,
    pub task: TaskKind,
    pub meta: BTreeMap<String, String>,
}

impl TaskExample {
    pub fn new(task: TaskKind, input_text: impl Into<String>, target_text: impl Into<String>) -> Self {
        TaskExample {
            input_text: input_text.into(),
            target_text: target_text.into(),
            task,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }
}

/// Sentiment example; English class names are translated, Slovene ones kept.
pub fn format_sentiment(text: &str, label: &str) -> Result<TaskExample> {
    let target = match label.trim().to_lowercase().as_str() {
        "positive" | "pozitivno" => "pozitivno",
        "negative" | "negativno" => "negativno",
        "neutral" | "nevtralno" => "nevtralno",
        other => return Err(Error::InvalidArgument(format!("unknown sentiment label {other:?}"))),
    };
    Ok(TaskExample::new(TaskKind::Sa, text, target))
}

/// Lemmatization and summarization pairs take the raw text with no template.
pub fn passthrough(task: TaskKind, input: &str, target: &str) -> TaskExample {
    TaskExample::new(task, input, target)
}

/// Merges entries sharing a complex sentence into one, joining the simple
/// sides with single spaces. Groups keep first-appearance order.
pub fn merge_simplification<S: AsRef<str>>(entries: &[(S, S)]) -> Vec<(String, String)> {
    let mut index: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut out: Vec<(String, String)> = Vec::new();
    for (complex, simple) in entries {
        let (c, s) = (complex.as_ref(), simple.as_ref());
        match index.get(c) {
            Some(&i) => {
                out[i].1.push(' ');
                out[i].1.push_str(s);
            }
            None => {
                index.insert(c, out.len());
                out.push((c.to_string(), s.to_string()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
