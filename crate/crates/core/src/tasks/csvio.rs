use std::io::Read;
use std::path::Path;

use super::{TaskExample, TaskKind};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Two-column `input,target` rows with RFC 4180 quoting, no header.
pub fn parse_csv_dataset<R: Read>(reader: R, task: TaskKind) -> Result<Vec<TaskExample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Malformed {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::Malformed {
                line,
                reason: format!("expected 2 columns, found {}", record.len()),
            });
        }
        out.push(TaskExample::new(task, &record[0], &record[1]));
    }
    Ok(out)
}

pub fn read_csv_dataset(path: &Path, task: TaskKind) -> Result<Vec<TaskExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_dataset(std::io::BufReader::new(file), task)
}

/// Always-quoted two-column CSV.
pub fn render_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for (a, b) in rows {
        w.write_record([a, b])?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("CSV buffer: {e}")))
}

pub fn write_csv_dataset(path: &Path, examples: &[TaskExample]) -> Result<()> {
    let bytes = render_csv(examples.iter().map(|e| (e.input_text.as_str(), e.target_text.as_str())))?;
    write_atomic(path, &bytes)
}
