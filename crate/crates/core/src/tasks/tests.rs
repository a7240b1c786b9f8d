use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::*;

const NER_SENTENCE: &str = "Bolj teoretično pa se je problema lotil Radical Science Journal v Londonu .";

fn ner_sentence() -> NerSentence {
    let tags = [
        "O", "O", "O", "O", "O", "O", "O", "B-ORG", "I-ORG", "I-ORG", "O", "B-LOC", "O",
    ];
    NerSentence::new(
        "1130",
        "4167",
        NER_SENTENCE.split(' ').map(String::from).collect(),
        tags.iter().map(|t| t.parse().unwrap()).collect(),
    )
    .unwrap()
}

#[test]
fn ner_retrieval_examples() {
    let s = ner_sentence();
    let org = format_ner(&s, EntityCategory::Organization);
    assert_eq!(org.input_text, format!("organizacije: {NER_SENTENCE}"));
    assert_eq!(org.target_text, "Radical Science Journal");
    assert_eq!(format_ner(&s, EntityCategory::Location).target_text, "Londonu");
    let per = format_ner(&s, EntityCategory::Person);
    assert_eq!(per.input_text, format!("osebe: {NER_SENTENCE}"));
    assert_eq!(per.target_text, "brez");
    assert_eq!(format_ner_all(&s).len(), 3);
}

#[test]
fn ner_lists_entities_in_order() {
    let tokens: Vec<String> = "Ana in Boris Novak ter Ana".split(' ').map(String::from).collect();
    let tags = ["B-PER", "O", "B-PER", "I-PER", "O", "B-PER"];
    let s = NerSentence::new("d", "s", tokens, tags.iter().map(|t| t.parse().unwrap()).collect()).unwrap();
    assert_eq!(
        format_ner(&s, EntityCategory::Person).target_text,
        "Ana, Boris Novak, Ana"
    );
}

#[test]
fn malformed_bio_is_rejected() {
    let tokens = vec!["a".to_string(), "b".to_string()];
    let bad = vec![Bio::Outside, Bio::Inside(EntityCategory::Person)];
    assert!(NerSentence::new("d", "s", tokens.clone(), bad).is_err());
    let mixed = vec![
        Bio::Begin(EntityCategory::Location),
        Bio::Inside(EntityCategory::Person),
    ];
    assert!(NerSentence::new("d", "s", tokens.clone(), mixed).is_err());
    assert!(NerSentence::new("d", "s", tokens, vec![Bio::Outside]).is_err());
    assert!("X-PER".parse::<Bio>().is_err());
    assert_eq!("B-misc".parse::<Bio>().unwrap(), Bio::Outside);
    assert!("b-per".parse::<Bio>().is_err());
}

#[test]
fn conll_parsing_groups_sentences() {
    let text = "1\t1\tAna\tB-PER\n1\t1\tspi\tO\n1\t2\tV\tO\n1\t2\tLjubljani\tB-LOC\n\n2\t1\tx\tO\n";
    let sents = parse_conll(text).unwrap();
    assert_eq!(sents.len(), 3);
    assert_eq!(sents[1].tokens, vec!["V", "Ljubljani"]);
    match parse_conll("1\t1\tAna\tB-PER\n1\t1\tspi\n") {
        Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    match parse_conll("1\t1\tAna\tO\n1\t1\tspi\tI-PER\n") {
        Err(Error::Malformed { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
}

fn ner_examples(empty: usize, full: usize) -> Vec<TaskExample> {
    let mut out = Vec::new();
    for i in 0..empty {
        out.push(TaskExample::new(TaskKind::Ner, format!("osebe: e{i}"), EMPTY_ENTITY));
    }
    for i in 0..full {
        out.push(TaskExample::new(TaskKind::Ner, format!("osebe: f{i}"), "Ana"));
    }
    out
}

#[test]
fn balancing_keeps_about_five_percent_of_empty_train_examples() {
    let kept = balance_ner(ner_examples(1000, 0), Split::Train, &mut ChaCha8Rng::seed_from_u64(1));
    assert!((30..=70).contains(&kept.len()), "{}", kept.len());
    let full = balance_ner(ner_examples(0, 200), Split::Train, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(full.len(), 200);
}

#[test]
fn balancing_leaves_the_test_split_alone() {
    let input = ner_examples(300, 40);
    let mut out = balance_ner(input.clone(), Split::Test, &mut ChaCha8Rng::seed_from_u64(3));
    let mut expected = input;
    out.sort();
    expected.sort();
    assert_eq!(out, expected);
}

#[test]
fn superglue_examples() {
    let boolq = json!({"label": true, "passage": "P.", "question": "q"});
    let e = format_superglue(&boolq, TaskKind::BoolQ).unwrap();
    assert_eq!(e.input_text, "Sestavek: P. Vprašanje: q");
    assert_eq!(e.target_text, "Pravilno.");
    let copa = json!({"premise": "a.", "choice1": "b.", "choice2": "c.", "question": "effect", "label": 1});
    let e = format_superglue(&copa, TaskKind::Copa).unwrap();
    assert_eq!(
        e.input_text,
        "Premisa: a. Prva možnost: b. Druga možnost: c. Kaj je posledica?"
    );
    assert_eq!(e.target_text, "druga");
    let cb = json!({"premise": "p", "hypothesis": "h", "label": "contradiction"});
    assert_eq!(format_superglue(&cb, TaskKind::Cb).unwrap().target_text, "protislovje");
    assert!(format_superglue(&cb, TaskKind::Rte).is_err());
    let missing = json!({"premise": "p", "label": "entailment"});
    let err = format_superglue(&missing, TaskKind::Rte).unwrap_err();
    assert!(err.to_string().contains("hypothesis"), "{err}");
}

#[test]
fn wsc_marking() {
    let text = "Iz steklenice sem v skodelico nalival vodo, dokler ni bila polna.";
    assert_eq!(
        mark_wsc(text, (4, "skodelico"), (9, "bila")).unwrap(),
        "Iz steklenice sem v * skodelico * nalival vodo, dokler ni # bila # polna."
    );
    assert_eq!(
        mark_wsc("Ana je rekla, da ona", (0, "Ana"), (4, "ona")).unwrap(),
        "* Ana * je rekla, da # ona #"
    );
    assert_eq!(mark_wsc("a b c d", (2, "c d"), (0, "a")).unwrap(), "# a # b * c d *");
    assert!(mark_wsc(text, (3, "skodelico"), (9, "bila")).is_err());
    assert!(mark_wsc("a b c", (0, "a b"), (1, "b")).is_err());
}

#[test]
fn simplification_merge() {
    let e = [("c1", "s1"), ("c1", "s2"), ("c1", "s3")];
    assert_eq!(
        merge_simplification(&e),
        vec![("c1".to_string(), "s1 s2 s3".to_string())]
    );
    let unique = [("a", "x"), ("b", "y")];
    assert_eq!(
        merge_simplification(&unique),
        vec![("a".into(), "x".into()), ("b".into(), "y".into())]
    );
    let inter = [("c1", "s1"), ("c2", "t1"), ("c1", "s2")];
    assert_eq!(
        merge_simplification(&inter),
        vec![("c1".into(), "s1 s2".into()), ("c2".into(), "t1".into())]
    );
}

#[test]
fn simplification_merge_matches_brute_force_grouping() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    use rand::Rng;
    for _ in 0..200 {
        let n = rng.gen_range(0..20);
        let entries: Vec<(String, String)> = (0..n)
            .map(|i| (format!("c{}", rng.gen_range(0..5)), format!("s{i}")))
            .collect();
        let merged = merge_simplification(&entries);
        let mut keys: Vec<&String> = Vec::new();
        for (c, _) in &entries {
            if !keys.contains(&c) {
                keys.push(c);
            }
        }
        let expected: Vec<(String, String)> = keys
            .iter()
            .map(|k| {
                let simple: Vec<&str> = entries
                    .iter()
                    .filter(|(c, _)| c == *k)
                    .map(|(_, s)| s.as_str())
                    .collect();
                ((*k).clone(), simple.join(" "))
            })
            .collect();
        assert_eq!(merged, expected);
    }
}

#[test]
fn csv_parsing() {
    let rows = parse_csv_dataset(
        "\"a\",\"b\"\n\"x, y\",\"he said \"\"hi\"\"\"\n".as_bytes(),
        TaskKind::Sa,
    )
    .unwrap();
    assert_eq!(rows[0].input_text, "a");
    assert_eq!(rows[0].target_text, "b");
    assert_eq!(rows[1].input_text, "x, y");
    assert_eq!(rows[1].target_text, "he said \"hi\"");
    match parse_csv_dataset("\"a\",\"b\"\n\"c\"\n".as_bytes(), TaskKind::Sa) {
        Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert_eq!(render_csv([("a", "b")]).unwrap(), b"\"a\",\"b\"\n");
}

proptest! {
    #[test]
    fn csv_round_trip(rows in proptest::collection::vec(("\\PC{1,20}", "[ -~\n\"ščž,]{1,20}"), 1..40)) {
        let examples: Vec<TaskExample> = rows.iter().map(|(a, b)| TaskExample::new(TaskKind::Sta, a.as_str(), b.as_str())).collect();
        let bytes = render_csv(examples.iter().map(|e| (e.input_text.as_str(), e.target_text.as_str()))).unwrap();
        let back = parse_csv_dataset(bytes.as_slice(), TaskKind::Sta).unwrap();
        prop_assert_eq!(back, examples);
    }
}

#[test]
fn table_of_task_parameters() {
    let expect = [
        ("boolq", 10, 4),
        ("cb", 15, 6),
        ("copa", 15, 6),
        ("rte", 15, 6),
        ("wsc", 20, 6),
        ("ner", 20, 64),
        ("sa", 10, 5),
        ("lem", 15, 512),
        ("sta", 5, 512),
        ("asn", 5, 512),
        ("slots", 64, 256),
    ];
    for (tag, epochs, len) in expect {
        let t: TaskKind = tag.parse().unwrap();
        assert_eq!((t.tag(), t.epochs(), t.max_output_len()), (tag, epochs, len));
    }
    assert!("multirc".parse::<TaskKind>().is_err());
}

#[test]
fn formatters_are_injective_on_fields() {
    let a = json!({"premise": "p", "hypothesis": "h1", "label": "entailment"});
    let b = json!({"premise": "p", "hypothesis": "h2", "label": "entailment"});
    assert_ne!(
        format_superglue(&a, TaskKind::Rte).unwrap().input_text,
        format_superglue(&b, TaskKind::Rte).unwrap().input_text
    );
}

#[test]
fn sentiment_labels() {
    assert_eq!(format_sentiment("t", "positive").unwrap().target_text, "pozitivno");
    assert_eq!(format_sentiment("t", "Negative").unwrap().target_text, "negativno");
    assert!(format_sentiment("t", "mixed").is_err());
}
