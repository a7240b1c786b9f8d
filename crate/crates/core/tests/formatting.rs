use std::fs;
use std::path::PathBuf;

use tinyt5::tasks::{format_ner_all, format_superglue, parse_conll, render_csv, TaskExample, TaskKind};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/formatting")
        .join(name)
}

fn rendered(examples: &[TaskExample]) -> Vec<u8> {
    render_csv(examples.iter().map(|e| (e.input_text.as_str(), e.target_text.as_str()))).unwrap()
}

fn check_superglue(task: TaskKind) {
    let tag = task.tag();
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture(&format!("{tag}.json"))).unwrap()).unwrap();
    let example = format_superglue(&record, task).unwrap();
    let expected = fs::read(fixture(&format!("{tag}.expected.csv"))).unwrap();
    assert_eq!(
        String::from_utf8(rendered(&[example])).unwrap(),
        String::from_utf8(expected).unwrap(),
        "{tag}"
    );
}

#[test]
fn superglue_formatters_match_golden_rows() {
    for task in [
        TaskKind::BoolQ,
        TaskKind::Cb,
        TaskKind::Copa,
        TaskKind::Rte,
        TaskKind::Wsc,
    ] {
        check_superglue(task);
    }
}

#[test]
fn ner_formatter_matches_golden_rows() {
    let sentences = parse_conll(&fs::read_to_string(fixture("ner.conll")).unwrap()).unwrap();
    assert_eq!(sentences.len(), 1);
    let examples = format_ner_all(&sentences[0]);
    assert_eq!(examples[2].target_text, "brez");
    assert_eq!(rendered(&examples), fs::read(fixture("ner.expected.csv")).unwrap());
}

#[test]
fn wsc_fixture_marks_both_spans() {
    let row = fs::read_to_string(fixture("wsc.expected.csv")).unwrap();
    assert!(row.contains("* skodelico *"));
    assert!(row.contains("# bila #"));
}
