use serde_json::Value;

use super::{TaskExample, TaskKind};
use crate::error::{Error, Result};

fn text<'a>(record: &'a Value, key: &str) -> Result<&'a str> {
    record
        .get(key)
        .ok_or_else(|| Error::MissingAttribute(key.to_string()))?
        .as_str()
        .ok_or_else(|| Error::InvalidArgument(format!("attribute `{key}` is not a string")))
}

fn field<'a>(record: &'a Value, key: &str) -> Result<&'a Value> {
    record.get(key).ok_or_else(|| Error::MissingAttribute(key.to_string()))
}

fn bool_label(record: &Value) -> Result<&'static str> {
    match field(record, "label")? {
        Value::Bool(true) => Ok("Pravilno."),
        Value::Bool(false) => Ok("Napačno."),
        other => Err(Error::InvalidArgument(format!(
            "expected a boolean label, found {other}"
        ))),
    }
}

fn entailment_label(record: &Value, task: TaskKind) -> Result<&'static str> {
    let label = field(record, "label")?;
    let s = label
        .as_str()
        .ok_or_else(|| Error::InvalidArgument(format!("expected a string label, found {label}")))?;
    match (task, s) {
        (_, "entailment") => Ok("implikacija"),
        (TaskKind::Rte, "not_entailment") => Ok("ni implikacija"),
        (TaskKind::Cb, "neutral") => Ok("nevtralno"),
        (TaskKind::Cb, "contradiction") => Ok("protislovje"),
        _ => Err(Error::InvalidArgument(format!("unknown {task} label {s:?}"))),
    }
}

/// Renders one SuperGLUE JSON record (BoolQ, CB, COPA, RTE or WSC).
pub fn format_superglue(record: &Value, task: TaskKind) -> Result<TaskExample> {
    let (input, target) = match task {
        TaskKind::BoolQ => (
            format!(
                "Sestavek: {} Vprašanje: {}",
                text(record, "passage")?,
                text(record, "question")?
            ),
            bool_label(record)?,
        ),
        TaskKind::Cb | TaskKind::Rte => (
            format!(
                "premisa: {} hipoteza: {}",
                text(record, "premise")?,
                text(record, "hypothesis")?
            ),
            entailment_label(record, task)?,
        ),
        TaskKind::Copa => {
            let relation = match text(record, "question")? {
                "cause" => "vzrok",
                "effect" => "posledica",
                other => return Err(Error::InvalidArgument(format!("unknown COPA question {other:?}"))),
            };
            let target = match field(record, "label")?.as_u64() {
                Some(0) => "prva",
                Some(1) => "druga",
                _ => return Err(Error::InvalidArgument("COPA label must be 0 or 1".into())),
            };
            (
                format!(
                    "Premisa: {} Prva možnost: {} Druga možnost: {} Kaj je {relation}?",
                    text(record, "premise")?,
                    text(record, "choice1")?,
                    text(record, "choice2")?
                ),
                target,
            )
        }
        TaskKind::Wsc => {
            let span = field(record, "target")?;
            let index = |key: &str| -> Result<usize> {
                field(span, key)?
                    .as_u64()
                    .map(|v| v as usize)
                    .ok_or_else(|| Error::InvalidArgument(format!("attribute `{key}` is not an index")))
            };
            let marked = mark_wsc(
                text(record, "text")?,
                (index("span1_index")?, text(span, "span1_text")?),
                (index("span2_index")?, text(span, "span2_text")?),
            )?;
            (format!("WSC: {marked}"), bool_label(record)?)
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not a SuperGLUE task"))),
    };
    Ok(TaskExample::new(task, input, target))
}

/// Wraps the first span in `* … *` and the second in `# … #`. Spans are
/// located by 0-based whitespace word index and must match exactly.
pub fn mark_wsc(text: &str, span1: (usize, &str), span2: (usize, &str)) -> Result<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let locate = |(index, span): (usize, &str), which: &str| -> Result<(usize, usize)> {
        let len = span.split_whitespace().count();
        if len == 0 {
            return Err(Error::InvalidArgument(format!("{which} is empty")));
        }
        let found = words.get(index..index + len).map(|w| w.join(" "));
        if found.as_deref() != Some(span.split_whitespace().collect::<Vec<_>>().join(" ").as_str()) {
            return Err(Error::InvalidArgument(format!(
                "{which} {span:?} not found at word {index} (found {:?})",
                found.unwrap_or_default()
            )));
        }
        Ok((index, index + len))
    };
    let a = locate(span1, "span1")?;
    let b = locate(span2, "span2")?;
    if a.0 < b.1 && b.0 < a.1 {
        return Err(Error::InvalidArgument("WSC spans overlap".into()));
    }
    let mut out: Vec<&str> = Vec::with_capacity(words.len() + 4);
    for (i, w) in words.iter().enumerate() {
        if i == a.0 {
            out.push("*");
        }
        if i == b.0 {
            out.push("#");
        }
        out.push(w);
        if i + 1 == a.1 {
            out.push("*");
        }
        if i + 1 == b.1 {
            out.push("#");
        }
    }
    Ok(out.join(" "))
}
