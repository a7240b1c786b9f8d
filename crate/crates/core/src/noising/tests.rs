use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tokenizer::train_bpe;

fn vocab() -> Vocabulary {
    train_bpe(["abcdefghij klmnop qrstuv wxyz"], 200, 100).unwrap()
}

/// Independent oracle: replace each sentinel in the input by the tokens that
/// follow the same sentinel in the target.
fn splice(pair: &NoisedPair, vocab: &Vocabulary) -> Vec<u32> {
    let mut out = Vec::new();
    for &tok in &pair.input_ids {
        if !vocab.is_sentinel(tok) {
            out.push(tok);
            continue;
        }
        let at = pair
            .target_ids
            .iter()
            .position(|&t| t == tok)
            .expect("sentinel in target");
        out.extend(
            pair.target_ids[at + 1..]
                .iter()
                .take_while(|&&t| !vocab.is_sentinel(t) && t != vocab.eos_id()),
        );
    }
    out
}

fn check_pair_layout(pair: &NoisedPair, vocab: &Vocabulary) {
    let input_sentinels: Vec<usize> = pair.input_ids.iter().filter_map(|&t| vocab.sentinel_index(t)).collect();
    let k = input_sentinels.len();
    assert_eq!(input_sentinels, (0..k).collect::<Vec<_>>());
    let target_sentinels: Vec<usize> = pair
        .target_ids
        .iter()
        .filter_map(|&t| vocab.sentinel_index(t))
        .collect();
    assert_eq!(target_sentinels, (0..=k).collect::<Vec<_>>());
    assert_eq!(pair.target_ids.last(), Some(&vocab.eos_id()));
    assert_eq!(
        pair.target_ids[pair.target_ids.len() - 2],
        vocab.sentinel_id(k).unwrap()
    );
    if k > 0 {
        assert_eq!(pair.target_ids[0], vocab.sentinel_id(0).unwrap());
    }
}

fn seq(n: usize) -> Vec<u32> {
    (0..n as u32).map(|i| 3 + i % 90).collect()
}

#[test]
fn noise_count_examples() {
    assert_eq!(noise_counts(20, 0.15, 3.0).unwrap(), (3, 1));
    assert_eq!(noise_counts(512, 0.15, 3.0).unwrap(), (77, 26));
    assert_eq!(noise_counts(2, 0.15, 3.0).unwrap(), (1, 1));
    assert!(noise_counts(1, 0.15, 3.0).is_err());
}

#[test]
fn single_span_start_is_uniform_over_feasible_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hist = [0usize; 10];
    for _ in 0..7000 {
        let plan = plan_spans(10, 3, 1, &mut rng).unwrap();
        assert_eq!(plan.spans.len(), 1);
        assert_eq!(plan.spans[0].1, 3);
        hist[plan.spans[0].0] += 1;
    }
    // starts 0..=6 leave at least one clean token after the span
    assert!(hist[7..].iter().all(|&h| h == 0));
    for &h in &hist[..7] {
        assert!((850..=1150).contains(&h), "{hist:?}");
    }
}

#[test]
fn infeasible_plans_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(plan_spans(10, 3, 4, &mut rng).is_err());
    assert!(plan_spans(10, 6, 5, &mut rng).is_err());
    assert!(plan_spans(4, 4, 1, &mut rng).is_err());
    assert!(NoisePlan::new(10, vec![(2, 2), (4, 1)]).is_err());
    assert!(NoisePlan::new(10, vec![(8, 3)]).is_err());
}

#[test]
fn mean_span_length_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (noise, spans) = noise_counts(512, 0.15, 3.0).unwrap();
    let (mut total_len, mut total_spans) = (0usize, 0usize);
    for _ in 0..10_000 {
        let plan = plan_spans(512, noise, spans, &mut rng).unwrap();
        total_len += plan.noise_len();
        total_spans += plan.num_spans();
    }
    let mean = total_len as f64 / total_spans as f64;
    assert!((mean - 77.0 / 26.0).abs() < 0.15, "{mean}");
}

#[test]
fn span_corrupt_examples() {
    let v = vocab();
    let ids: Vec<u32> = (10..20).collect(); // a..j
    let (s0, s1, s2, eos) = (
        v.sentinel_id(0).unwrap(),
        v.sentinel_id(1).unwrap(),
        v.sentinel_id(2).unwrap(),
        v.eos_id(),
    );
    let plan = NoisePlan::new(10, vec![(2, 3)]).unwrap();
    let pair = span_corrupt(&ids, &plan, &v).unwrap();
    assert_eq!(pair.input_ids, vec![10, 11, s0, 15, 16, 17, 18, 19]);
    assert_eq!(pair.target_ids, vec![s0, 12, 13, 14, s1, eos]);

    let plan = NoisePlan::new(10, vec![(1, 1), (5, 2)]).unwrap();
    let pair = span_corrupt(&ids, &plan, &v).unwrap();
    assert_eq!(pair.input_ids, vec![10, s0, 12, 13, 14, s1, 17, 18, 19]);
    assert_eq!(pair.target_ids, vec![s0, 11, s1, 15, 16, s2, eos]);

    assert!(span_corrupt(&ids[..9], &plan, &v).is_err());
}

#[test]
fn span_corruption_reconstructs_exactly() {
    let v = vocab();
    let cfg = NoiseConfig::default();
    for i in 0..1000u64 {
        let mut rng = example_rng(3, i);
        let n = rng.gen_range(2..300);
        let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(3..100)).collect();
        let pair = span_corruption_example(&ids, &cfg, &mut rng, &v).unwrap();
        check_pair_layout(&pair, &v);
        assert_eq!(splice(&pair, &v), ids);
    }
}

#[test]
fn iid_examples() {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids = seq(12);
    let pair = iid_denoise(&ids, 0.0, &mut rng, &v);
    assert_eq!(pair.input_ids, ids);
    assert_eq!(pair.target_ids, vec![v.sentinel_id(0).unwrap(), v.eos_id()]);

    let (s0, s1, s2) = (
        v.sentinel_id(0).unwrap(),
        v.sentinel_id(1).unwrap(),
        v.sentinel_id(2).unwrap(),
    );
    let pair = iid_denoise(&[40, 41], 1.0, &mut rng, &v);
    assert_eq!(pair.input_ids, vec![s0, s1]);
    assert_eq!(pair.target_ids, vec![s0, 40, s1, 41, s2, v.eos_id()]);
}

#[test]
fn iid_caps_at_the_sentinel_budget() {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids = seq(150);
    let pair = iid_denoise(&ids, 1.0, &mut rng, &v);
    check_pair_layout(&pair, &v);
    assert_eq!(pair.input_ids.iter().filter(|&&t| v.is_sentinel(t)).count(), 99);
    assert_eq!(splice(&pair, &v), ids);
}

#[test]
fn iid_corruption_rate_monte_carlo() {
    let v = vocab();
    let (mut corrupted, mut total) = (0usize, 0usize);
    for i in 0..800 {
        let mut rng = example_rng(5, i);
        let ids = seq(128);
        let pair = iid_denoise(&ids, 0.15, &mut rng, &v);
        check_pair_layout(&pair, &v);
        assert_eq!(splice(&pair, &v), ids);
        corrupted += pair.input_ids.iter().filter(|&&t| v.is_sentinel(t)).count();
        total += ids.len();
    }
    assert!(total >= 100_000);
    let rate = corrupted as f64 / total as f64;
    assert!((rate - 0.15).abs() < 0.005, "{rate}");
}

#[test]
fn mixture_proportions() {
    let v = vocab();
    let ids = seq(40);
    let count_span = |mix: f64| {
        let cfg = NoiseConfig {
            mix,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..10_000)
            .filter(|_| mixture_sample(&ids, &cfg, &mut rng, &v).unwrap().0 == Objective::SpanCorruption)
            .count()
    };
    assert_eq!(count_span(1.0), 10_000);
    assert_eq!(count_span(0.0), 0);
    let half = count_span(0.5);
    assert!((4850..=5150).contains(&half), "{half}");
    let bad = NoiseConfig {
        mix: 1.5,
        ..Default::default()
    };
    assert!(mixture_sample(&ids, &bad, &mut ChaCha8Rng::seed_from_u64(0), &v).is_err());
}

#[test]
fn loader_skips_degenerate_sequences() {
    let v = vocab();
    let source = vec![seq(1), seq(30), vec![], seq(2)].into_iter();
    let mut examples = PretrainExamples::new(source, &v, NoiseConfig::default(), 42);
    let produced: Vec<_> = examples.by_ref().collect::<Result<_>>().unwrap();
    assert_eq!(produced.len(), 2);
    assert_eq!(examples.skipped(), 2);

    let again: Vec<_> = PretrainExamples::new(
        vec![seq(1), seq(30), vec![], seq(2)].into_iter(),
        &v,
        NoiseConfig::default(),
        42,
    )
    .collect::<Result<_>>()
    .unwrap();
    assert_eq!(produced, again);
}

proptest! {
    #[test]
    fn plans_satisfy_invariants(n in 2usize..600, seed in any::<u64>()) {
        let (noise, spans) = noise_counts(n, 0.15, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = plan_spans(n, noise, spans, &mut rng).unwrap();
        prop_assert_eq!(plan.noise_len(), noise);
        prop_assert_eq!(plan.num_spans(), spans);
        for w in plan.spans.windows(2) {
            prop_assert!(w[1].0 > w[0].0 + w[0].1);
        }
        let last = plan.spans.last().unwrap();
        prop_assert!(last.0 + last.1 < n);
    }
}
