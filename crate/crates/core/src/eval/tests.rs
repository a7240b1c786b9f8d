use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Scores a fixed token sequence, then EOS; optionally never EOS.
struct Scripted {
    script: Vec<u32>,
    vocab: usize,
    never_end: bool,
}

impl StepScorer for Scripted {
    type Context = ();

    fn start_id(&self) -> u32 {
        0
    }

    fn eos_id(&self) -> u32 {
        1
    }

    fn prepare(&self, _: &[Vec<u32>]) -> Result<()> {
        Ok(())
    }

    fn next_scores(&self, _: &(), prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let mut row = vec![0.0; self.vocab];
                let step = p.len() - 1;
                let target = match self.script.get(step) {
                    Some(&t) => t,
                    None if self.never_end => 3,
                    None => 1,
                };
                row[target as usize] = 1.0;
                row
            })
            .collect())
    }
}

#[test]
fn eos_first_gives_empty_output() {
    let s = Scripted {
        script: vec![],
        vocab: 5,
        never_end: false,
    };
    assert!(greedy_decode(&s, &[4], 10).unwrap().is_empty());
}

#[test]
fn max_len_caps_output() {
    let s = Scripted {
        script: vec![],
        vocab: 5,
        never_end: true,
    };
    assert_eq!(greedy_decode(&s, &[4], 4).unwrap(), vec![3, 3, 3, 3]);
    assert!(greedy_decode(&s, &[4], 0).is_err());
}

#[test]
fn output_stops_at_eos() {
    let s = Scripted {
        script: vec![4, 2, 1, 3],
        vocab: 5,
        never_end: true,
    };
    assert_eq!(greedy_decode(&s, &[4], 10).unwrap(), vec![4, 2]);
}

struct Flat;

impl StepScorer for Flat {
    type Context = ();
    fn start_id(&self) -> u32 {
        0
    }
    fn eos_id(&self) -> u32 {
        1
    }
    fn prepare(&self, _: &[Vec<u32>]) -> Result<()> {
        Ok(())
    }
    fn next_scores(&self, _: &(), prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|_| vec![-1.0, -1.0, 2.0, 5.0, 5.0]).collect())
    }
}

#[test]
fn ties_pick_the_lowest_id() {
    assert_eq!(greedy_decode(&Flat, &[2], 3).unwrap(), vec![3, 3, 3]);
}

#[test]
fn model_decoding_is_deterministic_and_batch_consistent() {
    use crate::model::ModelConfig;
    let config = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny(24)
    };
    let m = Seq2Seq::<f32>::init(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let inputs = vec![vec![5, 6, 7, 1], vec![8, 1], vec![9, 10, 11, 12, 13, 1]];
    let a = greedy_decode_all(&m, &inputs, 6, 3).unwrap();
    assert_eq!(a, greedy_decode_all(&m, &inputs, 6, 3).unwrap());
    for (i, input) in inputs.iter().enumerate() {
        assert_eq!(greedy_decode(&m, input, 6).unwrap(), a[i]);
    }
}

#[test]
fn postfilter_examples() {
    let labels = ["Pravilno.", "Napačno."];
    assert_eq!(
        postfilter_and_match("<extra_id_0> Pravilno.", &labels),
        Some("Pravilno.")
    );
    assert_eq!(postfilter_and_match("<pad> Napačno.</s>", &labels), Some("Napačno."));
    assert_eq!(postfilter_and_match("pravilno", &labels), None);
    assert_eq!(postfilter_and_match("xq zzv", &labels), None);
    assert_eq!(clean_generation("a <b> <extra_id_> c"), "a <b> <extra_id_> c");
}

#[test]
fn all_invalid_generations_score_zero() {
    let gen = vec!["hmm".to_string(); 4];
    let gold = vec![
        "Pravilno.".to_string(),
        "Napačno.".to_string(),
        "Pravilno.".to_string(),
        "Napačno.".to_string(),
    ];
    let r = evaluate_generations(TaskKind::BoolQ, &gen, &gold).unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.invalid_rate, Some(1.0));
    let r = evaluate_generations(TaskKind::Cb, &gen, &gold).unwrap();
    assert_eq!(r.value, 0.0);
}

#[test]
fn rouge_examples() {
    assert_eq!(rouge_l("a b c", "a b c"), 1.0);
    assert_eq!(rouge_l("a b", "c d"), 0.0);
    assert_eq!(rouge_l("a b c d", "a c b d"), 0.75);
    assert_eq!(rouge_l("", ""), 0.0);
    assert_eq!(rouge_l("A B", "a b"), 1.0);
}

/// Exhaustive LCS by recursion with memoization on index pairs.
fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

#[test]
fn rouge_matches_lcs_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let a: Vec<u8> = (0..rng.gen_range(0..15)).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<u8> = (0..rng.gen_range(0..15)).map(|_| rng.gen_range(0..5)).collect();
        let l = lcs_oracle(&a, &b);
        let words = |s: &[u8]| s.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ");
        let expected = if l == 0 {
            0.0
        } else {
            let (p, r) = (l as f64 / a.len() as f64, l as f64 / b.len() as f64);
            2.0 * p * r / (p + r)
        };
        let got = rouge_l(&words(&a), &words(&b));
        assert_eq!(got, expected);
        assert_eq!(got, rouge_l(&words(&b), &words(&a)));
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn entity_examples() {
    let c = entity_counts(&["Radical Science Journal"], &["Radical Science Journal"]).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 0));
    let c = entity_counts(&["brez"], &["brez"]).unwrap();
    assert_eq!(c, EntityCounts::default());
    let c = entity_counts(&["A, B"], &["A"]).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    let c = entity_counts(&["A, A"], &["A, B"]).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
    assert_eq!(entity_f1(&["B, A"], &["A, B"]).unwrap(), 1.0);
    assert_eq!(entity_f1(&["brez"], &["brez"]).unwrap(), 0.0);
}

#[test]
fn classification_examples() {
    let golds = ["a", "b", "a"];
    let perfect: Vec<Option<&str>> = golds.iter().map(|g| Some(*g)).collect();
    assert_eq!(accuracy(&perfect, &golds).unwrap(), 1.0);
    assert_eq!(macro_f1(&perfect, &golds).unwrap(), 1.0);
    let g = ["1", "1", "1", "0"];
    assert_eq!(accuracy(&[Some("1"); 4], &g).unwrap(), 0.75);
    let g = ["a", "a", "b", "b"];
    let p = [Some("a"), Some("b"), Some("a"), Some("b")];
    assert_eq!(macro_f1(&p, &g).unwrap(), 0.5);
    assert!(accuracy(&[None], &["a", "b"]).is_err());
    assert_eq!(accuracy(&[None, Some("b")], &["a", "b"]).unwrap(), 0.5);
}

#[test]
fn lemma_examples() {
    assert_eq!(lemma_accuracy(&["biti hiša ."], &["biti hiša ,"]).unwrap(), (1.0, 1.0));
    assert_eq!(lemma_accuracy(&["biti hiše"], &["biti hiša"]).unwrap(), (0.5, 0.0));
    let (_, s) = lemma_accuracy(&["a b", "c", "d"], &["a b", "x", "y"]).unwrap();
    assert!((s - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(lemma_accuracy(&["a"], &["a b"]).unwrap(), (0.5, 0.0));
}

#[test]
fn majority_examples() {
    assert_eq!(majority_baseline(&["1", "1", "0"], &["1", "0"], false).unwrap(), 0.5);
    assert_eq!(majority_baseline(&["x"], &["x", "x"], false).unwrap(), 1.0);
    assert_eq!(majority_label(&["b", "a", "b", "a"]).unwrap(), "a");
    assert!(majority_baseline(&[], &["a"], false).is_err());
}

#[test]
fn report_rendering() {
    let gen = vec!["<extra_id_0> prva".to_string(), "druga".to_string()];
    let gold = vec!["prva".to_string(), "prva".to_string()];
    let r = evaluate_generations(TaskKind::Copa, &gen, &gold).unwrap();
    assert_eq!(r.value, 0.5);
    assert_eq!(
        r.to_key_values(),
        "task=copa\nmetric=accuracy\nvalue=0.500000\ninvalid_rate=0.000000\nexamples=2\n"
    );
    assert_eq!(r.predictions_csv().unwrap(), b"\"prva\",\"prva\"\n\"druga\",\"prva\"\n");
    assert!(r.render_table().contains("50.00%"));
}
