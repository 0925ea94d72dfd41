//! The run configuration shared by every subcommand: one TOML file with a
//! section per module. Unknown keys are rejected and the whole file is
//! validated before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{FilterConfig, Stage};
use crate::error::{ensure_fraction, Error, Result};
use crate::mixture::{MixturePolicy, Phase};
use crate::scaling_law::FitOptions;
use crate::tokenizer::{default_control_tokens, DEFAULT_VOCAB_SIZE};
use crate::train_plan::{ModelShape, ScheduleSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Loss observations for `fit`.
    pub observations: Option<PathBuf>,
    /// Fitted scaling laws, written by `fit` and read by `predict` and
    /// `recommend`.
    pub laws: Option<PathBuf>,
    pub language_stats: Option<PathBuf>,
    /// JSON-lines inputs for `filter`.
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    /// Per-stage counters written by `filter`.
    pub stats: Option<PathBuf>,
    /// Tokenizer artifact.
    pub tokenizer: Option<PathBuf>,
    /// JSON-lines documents for tokenizer training and fertility.
    pub corpus: Vec<PathBuf>,
    /// Plain-text seed corpus per language for language identification.
    pub langid_seeds: BTreeMap<String, PathBuf>,
    /// Plain-text clean corpus per language for the perplexity model.
    pub lm_corpora: BTreeMap<String, PathBuf>,
    /// Optional calibration sample per language for perplexity buckets.
    pub lm_calibration: BTreeMap<String, PathBuf>,
}

/// Environment variables that may override single-path settings.
pub const PATH_ENV_VARS: &[(&str, &str)] = &[
    ("POLYPLAN_OBSERVATIONS", "observations"),
    ("POLYPLAN_LAWS", "laws"),
    ("POLYPLAN_LANGUAGE_STATS", "language_stats"),
    ("POLYPLAN_OUTPUT", "output"),
    ("POLYPLAN_STATS", "stats"),
    ("POLYPLAN_TOKENIZER", "tokenizer"),
];

impl PathsConfig {
    fn slot(&mut self, key: &str) -> &mut Option<PathBuf> {
        match key {
            "observations" => &mut self.observations,
            "laws" => &mut self.laws,
            "language_stats" => &mut self.language_stats,
            "output" => &mut self.output,
            "stats" => &mut self.stats,
            "tokenizer" => &mut self.tokenizer,
            _ => unreachable!("not a path key: {key}"),
        }
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for slot in [
            &mut self.observations,
            &mut self.laws,
            &mut self.language_stats,
            &mut self.output,
            &mut self.stats,
            &mut self.tokenizer,
        ] {
            slot.iter_mut().for_each(fix);
        }
        self.inputs.iter_mut().chain(self.corpus.iter_mut()).for_each(fix);
        for map in [&mut self.langid_seeds, &mut self.lm_corpora, &mut self.lm_calibration] {
            map.values_mut().for_each(fix);
        }
    }

    /// Applies `POLYPLAN_*` overrides using `lookup` to read variables.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, key) in PATH_ENV_VARS {
            if let Some(v) = lookup(var).filter(|v| !v.is_empty()) {
                *self.slot(key) = Some(PathBuf::from(v));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    pub target_domain: String,
    /// Ascending mixture weights to choose from.
    pub candidates: Vec<f64>,
    pub n_params: f64,
    /// Minimum loss improvement (nats) to the next candidate that still
    /// justifies moving up.
    pub gain_epsilon: f64,
    /// Largest tolerated loss increase (nats) on any other domain.
    pub harm_delta: f64,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        Self {
            target_domain: "en".into(),
            candidates: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            n_params: 1.133e9,
            gain_epsilon: 0.01,
            harm_delta: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub total_tokens: u64,
    pub batch_sequences: u64,
    pub sequence_length: u64,
    /// Budget for one `plan` run. Unset means the phase's part of
    /// `total_tokens`.
    pub budget_tokens: Option<u64>,
    pub phase: Phase,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            total_tokens: 4_000_000_000_000,
            batch_sequences: 3072,
            sequence_length: 4096,
            budget_tokens: None,
            phase: Phase::Main,
        }
    }
}

impl BudgetConfig {
    /// Tokens for `phase`: the configured budget, or the phase's slice of
    /// the total (annealing gets `annealing_fraction`, main the rest).
    pub fn phase_budget(&self, phase: Phase, annealing_fraction: f64) -> u64 {
        if let Some(b) = self.budget_tokens {
            return b;
        }
        let annealing = (self.total_tokens as f64 * annealing_fraction).round() as u64;
        match phase {
            Phase::Main => self.total_tokens - annealing.min(self.total_tokens),
            Phase::Annealing => annealing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub control_tokens: Vec<String>,
    /// Longest packed sequence for `chat-format --pack`.
    pub max_len: usize,
    pub truncate: bool,
    pub per_language: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            control_tokens: default_control_tokens(),
            max_len: 4096,
            truncate: false,
            per_language: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Stages applied in order by `filter`.
    pub stages: Vec<Stage>,
    /// Treat inputs as sentence pairs and apply the pair thresholds instead.
    pub pairs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: vec![Stage::Dedup, Stage::Heuristics],
            pairs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub worker_count: usize,
    pub paths: PathsConfig,
    pub scaling: FitOptions,
    pub recommend: RecommendConfig,
    pub budget: BudgetConfig,
    pub mixture: MixturePolicy,
    pub filter: FilterConfig,
    pub pipeline: PipelineConfig,
    pub tokenizer: TokenizerConfig,
    pub schedule: ScheduleSpec,
    pub model: ModelShape,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            worker_count: 1,
            paths: PathsConfig::default(),
            scaling: FitOptions::default(),
            recommend: RecommendConfig::default(),
            budget: BudgetConfig::default(),
            mixture: MixturePolicy::default(),
            filter: FilterConfig::default(),
            pipeline: PipelineConfig::default(),
            tokenizer: TokenizerConfig::default(),
            schedule: ScheduleSpec::default(),
            model: ModelShape::default(),
        }
    }
}

/// Turns a TOML error into a diagnostic naming the dotted key, using the
/// error's position to find the enclosing `[section]`.
fn toml_error(origin: &str, text: &str, err: toml::de::Error) -> Error {
    let msg = err.message().replace('\n', " ");
    let field = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field"));
    let Some(field) = field else {
        return Error::parse(origin.to_string(), msg);
    };
    let section = err.span().and_then(|span| {
        text.get(..span.start)?
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| l.starts_with('['))
            .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
    });
    let key = match section {
        Some(s) if !s.is_empty() => format!("{s}.{field}"),
        _ => field.to_string(),
    };
    Error::validation(key, format!("unknown key in {origin}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error("config", text, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| toml_error(&path.display().to_string(), &text, e))?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve_relative(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section. Called before any subcommand does work.
    pub fn validate(&self) -> Result<()> {
        if self.worker_count == 0 {
            return Err(Error::validation("worker_count", "must be at least 1"));
        }
        self.scaling.validate()?;
        self.mixture.validate()?;
        self.filter.validate()?;
        self.schedule.validate()?;
        self.model.validate()?;

        let r = &self.recommend;
        if r.candidates.is_empty() {
            return Err(Error::validation("recommend.candidates", "must not be empty"));
        }
        for &c in &r.candidates {
            ensure_fraction("recommend.candidates", c)?;
        }
        if r.candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("recommend.candidates", "must be strictly ascending"));
        }
        if !(r.n_params.is_finite() && r.n_params > 0.0) {
            return Err(Error::validation("recommend.n_params", "must be positive"));
        }
        if !r.gain_epsilon.is_finite() {
            return Err(Error::validation("recommend.gain_epsilon", "must be finite"));
        }
        if !(r.harm_delta.is_finite() && r.harm_delta >= 0.0) {
            return Err(Error::validation("recommend.harm_delta", "must be non-negative"));
        }

        let b = &self.budget;
        for (key, v) in [
            ("budget.total_tokens", b.total_tokens),
            ("budget.batch_sequences", b.batch_sequences),
            ("budget.sequence_length", b.sequence_length),
        ] {
            if v == 0 {
                return Err(Error::validation(key, "must be positive"));
            }
        }
        if b.budget_tokens == Some(0) {
            return Err(Error::validation("budget.budget_tokens", "must be positive"));
        }

        let mut seen = Vec::new();
        for s in &self.pipeline.stages {
            if seen.contains(s) {
                return Err(Error::validation("pipeline.stages", format!("stage `{s}` listed twice")));
            }
            seen.push(*s);
        }

        let t = &self.tokenizer;
        let base = 256 + t.control_tokens.len() + 1;
        if t.vocab_size <= base {
            return Err(Error::validation(
                "tokenizer.vocab_size",
                format!("must exceed {base} (control, byte and marker tokens)"),
            ));
        }
        if t.max_len == 0 {
            return Err(Error::validation("tokenizer.max_len", "must be positive"));
        }
        Ok(())
    }
}
