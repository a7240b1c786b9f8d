use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tinyt5::corpus::{self, DedupConfig, Paragraph};
use tinyt5::eval::{self, EvalReport, StepScorer};
use tinyt5::fsutil::{read_string, write_atomic};
use tinyt5::model::{count_parameters, training_budget_ratio, Seq2Seq, REFERENCE_RUNS};
use tinyt5::noising::{NoisedPair, PretrainExamples};
use tinyt5::tasks::{read_csv_dataset, TaskExample, TaskKind};
use tinyt5::tokenizer::{train_bpe, Vocabulary, DEFAULT_SENTINELS};
use tinyt5::training::{
    load_checkpoint, save_checkpoint, select_best, split_micro_batches, AdamW, Checkpoint, LogLine, LrSchedule,
    RngState, TokenBatcher, Trainer,
};

use crate::{CliError, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

/// Creates `dir` (and parents) for command outputs.
fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.require(&cfg.output, "output")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| CliError::Core(tinyt5::Error::io(&dir, e)))?;
    Ok(dir)
}

/// A file output whose parent directory must exist.
fn output_file<'a>(cfg: &RunConfig, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = cfg.require(value, key)?;
    let parent = p
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(CliError::Usage(format!(
            "`{key}`: directory {} does not exist",
            parent.display()
        )));
    }
    Ok(p)
}

fn read_corpus(path: &Path) -> Result<Vec<Paragraph>> {
    let text = read_string(path)?;
    let doc = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(corpus::read_paragraphs(&text, &doc))
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let v = cfg.input(&cfg.vocab, "vocab")?;
    let m = cfg.input(&cfg.merges, "merges")?;
    Ok(Vocabulary::load(v, m)?)
}

pub fn tokenizer_train(cfg: &RunConfig) -> Result<()> {
    let corpus_path = cfg.input(&cfg.corpus, "corpus")?;
    let (vocab_path, merges_path) = match (&cfg.vocab, &cfg.merges) {
        (Some(_), Some(_)) => (
            output_file(cfg, &cfg.vocab, "vocab")?.to_path_buf(),
            output_file(cfg, &cfg.merges, "merges")?.to_path_buf(),
        ),
        _ => {
            let dir = output_dir(cfg)?;
            (dir.join("vocab.txt"), dir.join("merges.txt"))
        }
    };
    let vocab_size = RunConfig::positive(cfg.vocab_size, 32_000, "vocab_size")?;
    let sentinels = cfg.sentinels.unwrap_or(DEFAULT_SENTINELS);
    let paragraphs = read_corpus(corpus_path)?;
    let vocab = train_bpe(paragraphs.iter().map(|p| p.text.as_str()), vocab_size, sentinels)?;
    vocab.save(&vocab_path, &merges_path)?;
    eprintln!(
        "trained {} tokens ({} merges, {} sentinels) -> {}",
        vocab.size(),
        vocab.merges().len(),
        vocab.sentinel_count(),
        vocab_path.display()
    );
    Ok(())
}

pub fn dedup(cfg: &RunConfig) -> Result<()> {
    let corpus_path = cfg.input(&cfg.corpus, "corpus")?;
    let out = output_file(cfg, &cfg.output, "output")?;
    let config = DedupConfig {
        shingle_order: RunConfig::positive(cfg.shingle_order, corpus::DEFAULT_SHINGLE_ORDER, "shingle_order")?,
        threshold: cfg.dedup_threshold.unwrap_or(corpus::DEFAULT_THRESHOLD),
    };
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(CliError::Usage(format!(
            "`dedup_threshold` must lie in [0, 1], got {}",
            config.threshold
        )));
    }
    let vocab = match (&cfg.vocab, &cfg.merges) {
        (Some(_), Some(_)) => Some(load_vocab(cfg)?),
        _ => None,
    };
    let paragraphs = read_corpus(corpus_path)?;
    let (kept, stats) = corpus::deduplicate(paragraphs, config, vocab.as_ref())?;
    write_atomic(out, corpus::write_paragraphs(&kept).as_bytes())?;
    let mut stats_path = out.as_os_str().to_owned();
    stats_path.push(".stats");
    write_atomic(Path::new(&stats_path), stats.to_key_values().as_bytes())?;
    print!("{}", stats.render_table());
    Ok(())
}

fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}.ckpt")
}

fn rng_state(seed: u64, position: u64) -> RngState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position);
    RngState::capture(&rng)
}

pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    let corpus_path = cfg.input(&cfg.corpus, "corpus")?;
    let vocab = load_vocab(cfg)?;
    let resume = match &cfg.checkpoint {
        Some(_) => Some(load_checkpoint::<f32>(cfg.input(&cfg.checkpoint, "checkpoint")?)?),
        None => None,
    };
    let dir = output_dir(cfg)?;
    let steps = cfg.steps.unwrap_or(1_000_000);
    let budget = RunConfig::positive(cfg.batch_tokens, 4096, "batch_tokens")?;
    let max_len = RunConfig::positive(cfg.max_input_len, 512, "max_input_len")?;
    let every = cfg.checkpoint_every.unwrap_or(10_000).max(1);
    let micro = RunConfig::positive(cfg.micro_batches, rayon::current_num_threads(), "micro_batches")?;
    let noise = cfg.noise()?;
    let seed = cfg.seed();
    let schedule = LrSchedule::InverseSqrt {
        base_lr: cfg.lr.unwrap_or(0.01),
        warmup: cfg.warmup.unwrap_or(10_000),
    };
    let hyper = AdamW {
        weight_decay: cfg.weight_decay.unwrap_or(0.0),
        ..AdamW::default()
    };

    let mut trainer = match resume {
        Some(ck) => {
            if ck.model.config.vocab_size != vocab.size() {
                return Err(CliError::Usage(format!(
                    "checkpoint vocabulary size {} does not match the vocabulary ({})",
                    ck.model.config.vocab_size,
                    vocab.size()
                )));
            }
            let mut t = Trainer::new(ck.model, hyper, schedule, seed);
            if let Some(opt) = ck.optimizer {
                t.optimizer = opt;
            }
            t
        }
        None => {
            let config = cfg.model(vocab.size())?;
            let model = Seq2Seq::<f32>::init(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Trainer::new(model, hyper, schedule, seed)
        }
    };
    let start = trainer.step();
    let save = |t: &Trainer<f32>| -> Result<()> {
        let ck = Checkpoint {
            model: t.model.clone(),
            optimizer: Some(t.optimizer.clone()),
            step: t.step(),
            rng: rng_state(seed, t.step()),
        };
        Ok(save_checkpoint(&dir.join(checkpoint_name(t.step())), &ck)?)
    };
    let mut log = format!("{}\n", LogLine::HEADER);
    let log_path = dir.join("train.log");
    if steps == 0 {
        save(&trainer)?;
        write_atomic(&log_path, log.as_bytes())?;
        eprintln!("wrote initial checkpoint {}", checkpoint_name(trainer.step()));
        return Ok(());
    }

    let sequences: Vec<Vec<u32>> = read_corpus(corpus_path)?
        .iter()
        .map(|p| {
            let mut ids = vocab.encode(&p.text, false);
            ids.truncate(max_len - 1);
            ids
        })
        .filter(|ids| ids.len() >= 2)
        .collect();
    if sequences.is_empty() {
        return Err(CliError::Core(tinyt5::Error::InvalidArgument(
            "corpus yields no sequence of two or more tokens".into(),
        )));
    }
    // A resumed run continues on a fresh noise stream.
    let stream_seed = seed ^ start.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let examples = PretrainExamples::new(sequences.iter().cloned().cycle(), &vocab, noise, stream_seed);
    let pairs = examples.map(|r| r.map(|(_, pair)| pair));
    let mut batches = TokenBatcher::new(pairs, budget, |r: &tinyt5::Result<NoisedPair>| {
        r.as_ref().map_or(0, |p| p.input_ids.len() + p.target_ids.len())
    });
    for _ in 0..steps {
        let batch: Vec<NoisedPair> = batches
            .next()
            .expect("cyclic source never ends")?
            .into_iter()
            .collect::<tinyt5::Result<_>>()?;
        let line = trainer.train_step(&split_micro_batches(&batch, micro))?;
        let _ = writeln!(log, "{line}");
        if line.step % every == 0 {
            save(&trainer)?;
            write_atomic(&log_path, log.as_bytes())?;
            eprintln!("{line}");
        }
    }
    if trainer.step() % every != 0 {
        save(&trainer)?;
    }
    write_atomic(&log_path, log.as_bytes())?;
    Ok(())
}

fn encode_example(vocab: &Vocabulary, e: &TaskExample, max_input: usize, max_output: usize) -> NoisedPair {
    let clip = |mut ids: Vec<u32>, n: usize| {
        if ids.len() > n {
            ids.truncate(n - 1);
            ids.push(vocab.eos_id());
        }
        ids
    };
    NoisedPair {
        input_ids: clip(vocab.encode(&e.input_text, true), max_input),
        target_ids: clip(vocab.encode(&e.target_text, true), max_output),
    }
}

fn mean_rouge_l<S: StepScorer>(scorer: &S, vocab: &Vocabulary, data: &[TaskExample], max_len: usize) -> Result<f64> {
    let inputs: Vec<String> = data.iter().map(|e| e.input_text.clone()).collect();
    let generated = eval::generate(scorer, vocab, &inputs, max_len, 64)?;
    let total: f64 = generated
        .iter()
        .zip(data)
        .map(|(g, e)| eval::rouge_l(&eval::clean_generation(g), &e.target_text))
        .sum();
    Ok(total / data.len() as f64)
}

pub fn finetune(cfg: &RunConfig) -> Result<()> {
    let task = cfg.task()?;
    let train_path = cfg.input(&cfg.dataset, "dataset")?;
    let valid_path = cfg.input(&cfg.validation, "validation")?;
    let vocab = load_vocab(cfg)?;
    let init = match &cfg.checkpoint {
        Some(_) => Some(load_checkpoint::<f32>(cfg.input(&cfg.checkpoint, "checkpoint")?)?),
        None => None,
    };
    let dir = output_dir(cfg)?;
    let epochs = RunConfig::positive(cfg.epochs, task.epochs(), "epochs")?;
    let batch_size = RunConfig::positive(cfg.batch_examples, 64, "batch_examples")?;
    let max_input = RunConfig::positive(cfg.max_input_len, 512, "max_input_len")?;
    let max_output = RunConfig::positive(cfg.max_output_len, task.max_output_len(), "max_output_len")?;
    let micro = RunConfig::positive(cfg.micro_batches, rayon::current_num_threads(), "micro_batches")?;
    let seed = cfg.seed();
    let train = read_csv_dataset(train_path, task)?;
    let valid = read_csv_dataset(valid_path, task)?;
    if train.is_empty() || valid.is_empty() {
        return Err(CliError::Core(tinyt5::Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        )));
    }
    let model = match init {
        Some(ck) => ck.model,
        None => Seq2Seq::<f32>::init(cfg.model(vocab.size())?, &mut ChaCha8Rng::seed_from_u64(seed))?,
    };
    let hyper = AdamW {
        weight_decay: cfg.weight_decay.unwrap_or(0.0),
        ..AdamW::default()
    };
    let mut trainer = Trainer::new(
        model,
        hyper,
        LrSchedule::Constant {
            lr: cfg.lr.unwrap_or(1e-4),
        },
        seed,
    );
    let pairs: Vec<NoisedPair> = train
        .iter()
        .map(|e| encode_example(&vocab, e, max_input, max_output))
        .collect();
    let mut log = format!("{}\n", LogLine::HEADER);
    let mut scores = Vec::with_capacity(epochs);
    let mut summary = String::new();
    let _ = writeln!(summary, "task={task}");
    for epoch in 1..=epochs {
        let mut order = pairs.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407),
        ));
        for batch in order.chunks(batch_size) {
            let line = trainer.train_step(&split_micro_batches(batch, micro))?;
            let _ = writeln!(log, "{line}");
        }
        let ck = Checkpoint {
            model: trainer.model.clone(),
            optimizer: Some(trainer.optimizer.clone()),
            step: trainer.step(),
            rng: rng_state(seed, epoch as u64),
        };
        save_checkpoint(&dir.join(format!("epoch-{epoch:03}.ckpt")), &ck)?;
        let score = mean_rouge_l(&trainer.model, &vocab, &valid, max_output)?;
        eprintln!("epoch {epoch}: validation rouge_l {score:.4}");
        let _ = writeln!(summary, "epoch_{epoch}_rouge_l={score:.6}");
        scores.push(score);
        write_atomic(&dir.join("train.log"), log.as_bytes())?;
    }
    let best = select_best(&scores)? + 1;
    let bytes = fs::read(dir.join(format!("epoch-{best:03}.ckpt"))).map_err(|e| tinyt5::Error::io(&dir, e))?;
    write_atomic(&dir.join("best.ckpt"), &bytes)?;
    let _ = writeln!(summary, "best_epoch={best}");
    write_atomic(&dir.join("selection.txt"), summary.as_bytes())?;
    println!("best epoch {best} (validation rouge_l {:.4})", scores[best - 1]);
    Ok(())
}

/// Decodes `examples` with `scorer`, scores them and writes `report.txt`,
/// `report.table` and `predictions.csv` into `out_dir`.
pub fn evaluate_examples<S: StepScorer>(
    scorer: &S,
    vocab: &Vocabulary,
    examples: &[TaskExample],
    task: TaskKind,
    max_len: usize,
    out_dir: &Path,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(CliError::Core(tinyt5::Error::InvalidArgument(
            "empty evaluation set".into(),
        )));
    }
    let inputs: Vec<String> = examples.iter().map(|e| e.input_text.clone()).collect();
    let golds: Vec<String> = examples.iter().map(|e| e.target_text.clone()).collect();
    let generated = eval::generate(scorer, vocab, &inputs, max_len, 64)?;
    let report = eval::evaluate_generations(task, &generated, &golds)?;
    write_atomic(&out_dir.join("report.txt"), report.to_key_values().as_bytes())?;
    write_atomic(&out_dir.join("report.table"), report.render_table().as_bytes())?;
    write_atomic(&out_dir.join("predictions.csv"), &report.predictions_csv()?)?;
    Ok(report)
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let task = cfg.task()?;
    let data_path = cfg.input(&cfg.dataset, "dataset")?;
    let ck_path = cfg.input(&cfg.checkpoint, "checkpoint")?;
    let vocab = load_vocab(cfg)?;
    let max_len = RunConfig::positive(cfg.max_output_len, task.max_output_len(), "max_output_len")?;
    let dir = output_dir(cfg)?;
    let ck = load_checkpoint::<f32>(ck_path)?;
    let examples = read_csv_dataset(data_path, task)?;
    let report = evaluate_examples(&ck.model, &vocab, &examples, task, max_len, &dir)?;
    print!("{}", report.render_table());
    Ok(())
}

/// The reference-run ratio table, plus a custom row when `steps`,
/// `batch_tokens` and `params` are all given.
pub fn budget(cfg: &RunConfig) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:>10} {:>12} {:>10} {:>8} {:>9} {:>10}",
        "run", "steps", "batch_tokens", "params", "ratio", "reported", "deviation"
    );
    for run in REFERENCE_RUNS {
        let ratio = training_budget_ratio(run.steps, run.batch_tokens, run.params)?;
        let _ = writeln!(
            s,
            "{:<18} {:>10} {:>12} {:>10.2e} {:>8.2} {:>9} {:>9.1}%",
            run.name,
            run.steps,
            run.batch_tokens,
            run.params,
            ratio,
            run.reported_ratio,
            100.0 * (ratio / run.reported_ratio - 1.0)
        );
    }
    for (name, preset) in [("small", "small"), ("large", "large")] {
        let c = RunConfig {
            preset: Some(preset.to_string()),
            ..RunConfig::default()
        }
        .model(cfg.vocab_size.unwrap_or(32_000))?;
        let _ = writeln!(s, "{name} preset parameters: {}", count_parameters(&c));
    }
    match (cfg.steps, cfg.batch_tokens, cfg.params) {
        (Some(steps), Some(batch), Some(params)) => {
            let ratio = training_budget_ratio(steps, batch as u64, params)?;
            let _ = writeln!(
                s,
                "{:<18} {:>10} {:>12} {:>10.2e} {:>8.2}",
                "custom", steps, batch, params, ratio
            );
        }
        (None, None, None) => {}
        _ => {
            return Err(CliError::Usage(
                "a custom ratio needs all of `steps`, `batch_tokens` and `params`".into(),
            ))
        }
    }
    Ok(s)
}
