use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tinyt5::eval::StepScorer;
use tinyt5::tasks::{parse_csv_dataset, TaskKind};
use tinyt5::tokenizer::{train_bpe, Vocabulary};
use tinyt5::training::load_checkpoint;
use tinyt5_cli::commands::evaluate_examples;

fn tinyt5(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tinyt5"))
        .args(args)
        .env("TINYT5_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CORPUS: &str = "Ljubljana je glavno mesto Slovenije in leži ob reki Ljubljanici.\n\n\
Maribor je drugo največje mesto v državi in leži ob reki Dravi.\n\n\
Triglav je najvišja gora v Sloveniji in simbol naroda.\n\n\
Ljubljana je glavno mesto Slovenije in leži ob reki Ljubljanici.\n\n\
Piran je obmorsko mesto z lepim starim mestnim jedrom in cerkvijo.\n";

#[test]
fn budget_prints_reference_ratios() {
    let out = tinyt5(&["budget"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for ratio in ["5.46", "19.99", "33.31", "68.27", "416.70"] {
        assert!(text.contains(ratio), "{ratio} missing from\n{text}");
    }
    let custom = stdout(&tinyt5(&[
        "budget",
        "--steps",
        "10",
        "--batch-tokens",
        "100",
        "--params",
        "1e3",
    ]));
    assert!(custom.lines().last().unwrap().starts_with("custom"));
    assert!(custom.lines().last().unwrap().ends_with("1.00"));
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    assert_eq!(tinyt5(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(tinyt5(&["budget", "--steps", "3"]).status.code(), Some(1));
    assert_eq!(tinyt5(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    assert_eq!(
        tinyt5(&["dedup", "--corpus", p(&missing), "--output", "x"])
            .status
            .code(),
        Some(1)
    );
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"not_a_key\": 1}").unwrap();
    assert_eq!(tinyt5(&["budget", "--config", p(&bad)]).status.code(), Some(1));
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, CORPUS).unwrap();
    let junk = dir.path().join("vocab.txt");
    fs::write(&junk, "not a vocabulary").unwrap();
    let out = tinyt5(&[
        "dedup",
        "--corpus",
        p(&corpus),
        "--vocab",
        p(&junk),
        "--merges",
        p(&junk),
        "--output",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_configuration_keys() {
    let text = stdout(&tinyt5(&["pretrain", "--help"]));
    for key in [
        "noise_density",
        "mean_span",
        "batch_tokens",
        "checkpoint_every",
        "weight_decay",
    ] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"steps": 10, "batch_tokens": 100, "params": 2e3}"#).unwrap();
    let text = stdout(&tinyt5(&["budget", "--config", p(&cfg)]));
    assert!(text.lines().last().unwrap().ends_with("0.50"), "{text}");
    let text = stdout(&tinyt5(&["budget", "--config", p(&cfg), "--params", "1e3"]));
    assert!(text.lines().last().unwrap().ends_with("1.00"), "{text}");
}

#[test]
fn tokenizer_dedup_and_zero_step_pretraining() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus.txt");
    fs::write(&corpus, CORPUS).unwrap();

    let out = tinyt5(&[
        "tokenizer-train",
        "--corpus",
        p(&corpus),
        "--output",
        p(&d.join("tok")),
        "--vocab-size",
        "300",
        "--sentinels",
        "20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (vocab, merges) = (d.join("tok/vocab.txt"), d.join("tok/merges.txt"));
    let v = Vocabulary::load(&vocab, &merges).unwrap();
    assert_eq!(v.sentinel_count(), 20);

    let deduped = d.join("dedup.txt");
    let out = tinyt5(&[
        "dedup",
        "--corpus",
        p(&corpus),
        "--output",
        p(&deduped),
        "--vocab",
        p(&vocab),
        "--merges",
        p(&merges),
    ]);
    assert!(out.status.success());
    let kept = fs::read_to_string(&deduped).unwrap();
    assert_eq!(kept.matches("Ljubljanici").count(), 1);
    let stats = fs::read_to_string(d.join("dedup.txt.stats")).unwrap();
    assert!(stats.contains("paragraphs_before=5\n"), "{stats}");
    assert!(stats.contains("paragraphs_kept=4\n"), "{stats}");

    let run = d.join("run");
    let out = tinyt5(&[
        "pretrain",
        "--corpus",
        p(&deduped),
        "--vocab",
        p(&vocab),
        "--merges",
        p(&merges),
        "--output",
        p(&run),
        "--preset",
        "tiny",
        "--steps",
        "0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = load_checkpoint::<f32>(&run.join("step-00000000.ckpt")).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(ck.model.config.vocab_size, v.size());
    assert_eq!(
        fs::read_to_string(run.join("train.log")).unwrap(),
        "step,loss,lr,tokens_seen\n"
    );

    let out = tinyt5(&[
        "pretrain",
        "--corpus",
        p(&deduped),
        "--vocab",
        p(&vocab),
        "--merges",
        p(&merges),
        "--output",
        p(&run),
        "--checkpoint",
        p(&run.join("step-00000000.ckpt")),
        "--steps",
        "3",
        "--batch-tokens",
        "256",
        "--checkpoint-every",
        "2",
        "--warmup",
        "10",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_checkpoint::<f32>(&run.join("step-00000002.ckpt")).unwrap().step, 2);
    let resumed = load_checkpoint::<f32>(&run.join("step-00000003.ckpt")).unwrap();
    assert_eq!(resumed.optimizer.unwrap().step, 3);
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().nth(3).unwrap().starts_with("3,"));

    // fine-tune and evaluate the pretrained model end to end
    let data = d.join("copa.csv");
    fs::write(
        &data,
        "\"Premisa: Mesto leži ob reki. Prva možnost: Ljubljana. Druga možnost: Triglav. Kaj je vzrok?\",\"prva\"\n\
         \"Premisa: Gora je visoka. Prva možnost: Maribor. Druga možnost: Triglav. Kaj je vzrok?\",\"druga\"\n",
    )
    .unwrap();
    let ft = d.join("ft");
    let out = tinyt5(&[
        "finetune",
        "--task",
        "copa",
        "--dataset",
        p(&data),
        "--validation",
        p(&data),
        "--vocab",
        p(&vocab),
        "--merges",
        p(&merges),
        "--checkpoint",
        p(&run.join("step-00000003.ckpt")),
        "--output",
        p(&ft),
        "--epochs",
        "2",
        "--batch-examples",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "epoch-001.ckpt",
        "epoch-002.ckpt",
        "best.ckpt",
        "selection.txt",
        "train.log",
    ] {
        assert!(ft.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(ft.join("selection.txt"))
        .unwrap()
        .contains("best_epoch="));
    let ev = d.join("eval");
    let out = tinyt5(&[
        "evaluate",
        "--task",
        "copa",
        "--dataset",
        p(&data),
        "--vocab",
        p(&vocab),
        "--merges",
        p(&merges),
        "--checkpoint",
        p(&ft.join("best.ckpt")),
        "--output",
        p(&ev),
        "--max-output-len",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(ev.join("report.txt")).unwrap();
    assert!(report.starts_with("task=copa\nmetric=accuracy\n"), "{report}");
    assert!(report.ends_with("examples=2\n"));
    assert_eq!(
        fs::read_to_string(ev.join("predictions.csv")).unwrap().lines().count(),
        2
    );
}

/// Emits a fixed token sequence per encoded input.
struct Lookup {
    answers: HashMap<Vec<u32>, Vec<u32>>,
    vocab: usize,
}

impl StepScorer for Lookup {
    type Context = Vec<Vec<u32>>;

    fn start_id(&self) -> u32 {
        0
    }

    fn eos_id(&self) -> u32 {
        1
    }

    fn prepare(&self, inputs: &[Vec<u32>]) -> tinyt5::Result<Vec<Vec<u32>>> {
        Ok(inputs.iter().map(|i| self.answers[i].clone()).collect())
    }

    fn next_scores(&self, ctx: &Vec<Vec<u32>>, prefixes: &[Vec<u32>]) -> tinyt5::Result<Vec<Vec<f64>>> {
        Ok(ctx
            .iter()
            .zip(prefixes)
            .map(|(answer, prefix)| {
                let mut row = vec![0.0; self.vocab];
                row[answer.get(prefix.len() - 1).copied().unwrap_or(1) as usize] = 1.0;
                row
            })
            .collect())
    }
}

#[test]
fn evaluation_writes_exact_reports() {
    let csv = "\"Premisa: Moje telo je metalo senco na travo. Prva možnost: Sonce je vzhajalo. Druga možnost: Trava je bila pokošena. Kaj je vzrok?\",\"prva\"\n\
               \"Premisa: Ženska je prenehala kaditi. Prva možnost: Začela je nosečnost. Druga možnost: Zbolela je. Kaj je vzrok?\",\"prva\"\n\
               \"Premisa: Fant je zamudil avtobus. Prva možnost: Zaspal je. Druga možnost: Bil je zgoden. Kaj je vzrok?\",\"druga\"\n\
               \"Premisa: Tla so bila mokra. Prva možnost: Deževalo je. Druga možnost: Sijalo je sonce. Kaj je posledica?\",\"prva\"\n";
    let examples = parse_csv_dataset(csv.as_bytes(), TaskKind::Copa).unwrap();
    let texts: Vec<&str> = examples
        .iter()
        .flat_map(|e| [e.input_text.as_str(), e.target_text.as_str()])
        .collect();
    let vocab = train_bpe(texts.iter().copied().chain(["morda"]), 400, 10).unwrap();
    // echo the gold label except: a wrong label, and an invalid answer
    let said = ["prva", "druga", "druga", "morda"];
    let answers = examples
        .iter()
        .zip(said)
        .map(|(e, s)| (vocab.encode(&e.input_text, true), vocab.encode(s, true)))
        .collect();
    let scorer = Lookup {
        answers,
        vocab: vocab.size(),
    };
    let dir = tempfile::tempdir().unwrap();
    let report = evaluate_examples(&scorer, &vocab, &examples, TaskKind::Copa, 8, dir.path()).unwrap();
    assert_eq!(report.value, 0.5);
    assert_eq!(
        fs::read_to_string(dir.path().join("report.txt")).unwrap(),
        "task=copa\nmetric=accuracy\nvalue=0.500000\ninvalid_rate=0.250000\nexamples=4\n"
    );
    assert_eq!(
        fs::read_to_string(dir.path().join("predictions.csv")).unwrap(),
        "\"prva\",\"prva\"\n\"druga\",\"prva\"\n\"druga\",\"druga\"\n\"morda\",\"prva\"\n"
    );
    assert!(fs::read_to_string(dir.path().join("report.table"))
        .unwrap()
        .contains("50.00%"));
}
