use std::path::{Path, PathBuf};

use serde::Deserialize;
use tinyt5::model::{ModelConfig, Preset};
use tinyt5::noising::NoiseConfig;
use tinyt5::tasks::TaskKind;

use crate::CliError;

/// Every setting a command may read. Values come from the JSON file given
/// by `--config`, then from flags, which take precedence.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input corpus: UTF-8 text, paragraphs separated by blank lines.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Vocabulary file.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Merges file.
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// Two-column CSV dataset (training data for finetune, test data for evaluate).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Two-column CSV validation set used for checkpoint selection.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Checkpoint to start from or evaluate.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output file (dedup) or directory (other commands).
    #[arg(long)]
    pub output: Option<PathBuf>,

    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub sentinels: Option<usize>,

    #[arg(long)]
    pub shingle_order: Option<usize>,
    #[arg(long)]
    pub dedup_threshold: Option<f64>,

    /// Model preset: tiny, small or large.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_kv: Option<usize>,
    #[arg(long)]
    pub enc_layers: Option<usize>,
    #[arg(long)]
    pub dec_layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,

    /// Span-corruption noise density r.
    #[arg(long)]
    pub noise_density: Option<f64>,
    /// Mean span length mu.
    #[arg(long)]
    pub mean_span: Option<f64>,
    #[arg(long)]
    pub iid_prob: Option<f64>,
    /// Share of span corruption in the objective mixture.
    #[arg(long)]
    pub mix: Option<f64>,

    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_tokens: Option<usize>,
    #[arg(long)]
    pub batch_examples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub micro_batches: Option<usize>,
    #[arg(long)]
    pub max_input_len: Option<usize>,
    #[arg(long)]
    pub max_output_len: Option<usize>,
    /// Task tag: boolq, cb, copa, rte, wsc, ner, sa, lem, sta, asn, slots.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter count for a custom budget ratio.
    #[arg(long)]
    pub params: Option<f64>,
}

/// `(key, default, setting used in the reference runs)`, shown by `--help`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("corpus", "-", "-"),
    ("vocab", "-", "-"),
    ("merges", "-", "-"),
    ("dataset", "-", "-"),
    ("validation", "-", "-"),
    ("checkpoint", "-", "-"),
    ("output", "-", "-"),
    ("vocab_size", "32000", "32000"),
    ("sentinels", "100", "-"),
    ("shingle_order", "10", "-"),
    ("dedup_threshold", "0.5", "-"),
    ("preset", "small", "small (8+8 layers) or large (24+24 layers)"),
    ("d_model", "from preset", "-"),
    ("d_ff", "from preset", "-"),
    ("n_heads", "from preset", "-"),
    ("d_kv", "from preset", "-"),
    ("enc_layers", "from preset", "8 (small) / 24 (large)"),
    ("dec_layers", "from preset", "8 (small) / 24 (large)"),
    ("dropout", "0.1", "-"),
    ("noise_density", "0.15", "-"),
    ("mean_span", "3", "-"),
    ("iid_prob", "0.15", "-"),
    ("mix", "0.5", "-"),
    ("steps", "1000000", "1000000, 1830000, 3050000 or 763000"),
    ("batch_tokens", "4096", "4096, 8192 or 32768"),
    ("batch_examples", "64", "64 (fine-tuning)"),
    ("lr", "0.01 (pretrain), 0.0001 (finetune)", "-"),
    ("warmup", "10000", "-"),
    ("weight_decay", "0", "-"),
    (
        "epochs",
        "per task",
        "boolq 10, cb 15, copa 15, rte 15, wsc 20, ner 20, sa 10, lem 15, sta 5, asn 5, slots 64",
    ),
    ("checkpoint_every", "10000", "-"),
    ("micro_batches", "thread count", "-"),
    ("max_input_len", "512", "-"),
    (
        "max_output_len",
        "per task",
        "boolq 4, cb/copa/rte/wsc 6, sa 5, ner 64, slots 256, lem/sta/asn 512",
    ),
    ("task", "-", "-"),
    ("seed", "0", "-"),
    ("params", "-", "7.5e8 (large) / 6.0e7 (small)"),
];

pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (JSON file via --config, or --flag-name):\n");
    s.push_str(&format!("  {:<18} {:<36} {}\n", "key", "default", "reference setting"));
    for (k, d, p) in KEYS {
        s.push_str(&format!("  {k:<18} {d:<36} {p}\n"));
    }
    s
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),* $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field; } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        overlay!(
            self,
            flags,
            corpus,
            vocab,
            merges,
            dataset,
            validation,
            checkpoint,
            output,
            vocab_size,
            sentinels,
            shingle_order,
            dedup_threshold,
            preset,
            d_model,
            d_ff,
            n_heads,
            d_kv,
            enc_layers,
            dec_layers,
            dropout,
            noise_density,
            mean_span,
            iid_prob,
            mix,
            steps,
            batch_tokens,
            batch_examples,
            lr,
            warmup,
            weight_decay,
            epochs,
            checkpoint_every,
            micro_batches,
            max_input_len,
            max_output_len,
            task,
            seed,
            params,
        );
        self
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))
    }

    /// A path that must already exist.
    pub fn input<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        let p = self.require(value, key)?;
        if !p.exists() {
            return Err(CliError::Usage(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn task(&self) -> Result<TaskKind, CliError> {
        let tag = self
            .task
            .as_deref()
            .ok_or_else(|| CliError::Usage("missing required setting `task`".into()))?;
        tag.parse()
            .map_err(|e: tinyt5::Error| CliError::Usage(format!("`task`: {e}")))
    }

    pub fn noise(&self) -> Result<NoiseConfig, CliError> {
        let d = NoiseConfig::default();
        let c = NoiseConfig {
            noise_density: self.noise_density.unwrap_or(d.noise_density),
            mean_span: self.mean_span.unwrap_or(d.mean_span),
            iid_prob: self.iid_prob.unwrap_or(d.iid_prob),
            mix: self.mix.unwrap_or(d.mix),
        };
        for (key, v) in [
            ("noise_density", c.noise_density),
            ("iid_prob", c.iid_prob),
            ("mix", c.mix),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::Usage(format!("`{key}` must lie in [0, 1], got {v}")));
            }
        }
        if !(c.mean_span >= 1.0) {
            return Err(CliError::Usage(format!(
                "`mean_span` must be at least 1, got {}",
                c.mean_span
            )));
        }
        Ok(c)
    }

    /// Preset widths with per-field overrides.
    pub fn model(&self, vocab_size: usize) -> Result<ModelConfig, CliError> {
        let preset: Preset = self
            .preset
            .as_deref()
            .unwrap_or("small")
            .parse()
            .map_err(|e: tinyt5::Error| CliError::Usage(format!("`preset`: {e}")))?;
        let mut c = ModelConfig::preset(preset, vocab_size);
        c.d_model = self.d_model.unwrap_or(c.d_model);
        c.d_ff = self.d_ff.unwrap_or(c.d_ff);
        c.n_heads = self.n_heads.unwrap_or(c.n_heads);
        c.d_kv = self.d_kv.unwrap_or(c.d_kv);
        c.enc_layers = self.enc_layers.unwrap_or(c.enc_layers);
        c.dec_layers = self.dec_layers.unwrap_or(c.dec_layers);
        c.dropout = self.dropout.unwrap_or(c.dropout);
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn positive(value: Option<usize>, default: usize, key: &str) -> Result<usize, CliError> {
        match value.unwrap_or(default) {
            0 => Err(CliError::Usage(format!("`{key}` must be positive"))),
            v => Ok(v),
        }
    }
}
