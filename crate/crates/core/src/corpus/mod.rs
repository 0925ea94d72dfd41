//! Streaming filters for monolingual documents and parallel sentence pairs.
//!
//! External neural scorers (pair cleanliness, translation quality
//! estimation, educational value) are not run here: their outputs arrive as
//! numeric score channels on each record and this module applies the
//! thresholds.

mod dedup;
mod filters;
mod langid;
mod lm;
mod pipeline;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_fraction, Error, Result};

pub use dedup::{dedup, normalize_for_dedup, DedupKey, DedupMode, Deduplicator, MinHasher};
pub use filters::{edu_filter, heuristic_filters, parallel_filter, TextStats};
pub use langid::{language_id, LanguageClassifier, NgramLanguageClassifier};
pub use lm::{
    calibrate_buckets, perplexity_filter, Bucket, KneserNeyTrigram, LanguageModel,
    PerplexityModel,
};
pub use pipeline::{
    run_pair_pipeline, run_pipeline, PipelineReport, PipelineResources, Stage, StageStats,
    DATA_ERROR, MALFORMED, PARSE_STAGE,
};

pub const EDU_SCORE: &str = "edu_score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            language: None,
            source: String::new(),
            scores: BTreeMap::new(),
        }
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = Some(language.into());
        self
    }

    pub fn with_score(mut self, channel: impl Into<String>, value: f64) -> Self {
        self.scores.insert(channel.into(), value);
        self
    }
}

/// Reads JSON-lines documents from `paths` in order. Unlike the pipeline,
/// which counts malformed lines, this fails on the first one.
pub fn read_documents(paths: &[PathBuf]) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for path in paths {
        docs.extend(read_json_lines(path)?);
    }
    Ok(docs)
}

pub(crate) fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source_text: String,
    pub target_text: String,
    pub source_lang: String,
    pub target_lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cleanliness_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_estimate: Option<f64>,
}

impl ParallelPair {
    /// The side that is not English. Errors unless exactly one side is `en`.
    pub fn non_english_lang(&self) -> Result<&str> {
        match (self.source_lang == "en", self.target_lang == "en") {
            (true, false) => Ok(&self.target_lang),
            (false, true) => Ok(&self.source_lang),
            _ => Err(Error::Data(format!(
                "pair {}→{} must have English on exactly one side",
                self.source_lang, self.target_lang
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleResult {
    pub rule: String,
    pub passed: bool,
}

/// Result of running one filter over one record. `reason` is the first
/// failing rule; `rule_trace` lists every rule evaluated, in order, up to
/// and including that failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: bool,
    pub reason: Option<String>,
    pub rule_trace: Vec<RuleResult>,
}

impl FilterOutcome {
    pub(crate) fn new() -> Self {
        Self {
            kept: true,
            reason: None,
            rule_trace: Vec::new(),
        }
    }

    /// Records a rule result; returns `false` once the record is rejected.
    pub(crate) fn check(&mut self, rule: &str, passed: bool) -> bool {
        self.rule_trace.push(RuleResult {
            rule: rule.to_string(),
            passed,
        });
        if !passed && self.kept {
            self.kept = false;
            self.reason = Some(rule.to_string());
        }
        passed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub cleanliness_threshold_default: f64,
    pub cleanliness_threshold_overrides: BTreeMap<String, f64>,
    pub quality_threshold: f64,
    /// Documents need an educational score strictly above this.
    pub edu_threshold: f64,
    /// Missing pair score channels are errors when set, passes otherwise.
    pub strict_scores: bool,

    pub min_words: usize,
    pub max_mean_word_len: f64,
    pub alpha_ratio_min: f64,
    pub digit_ratio_max: f64,
    pub dup_line_ratio_max: f64,

    /// Per-language `[head_max, middle_max]` perplexity boundaries.
    pub perplexity_buckets: BTreeMap<String, [f64; 2]>,
    /// Percentiles used when boundaries have to be calibrated.
    pub perplexity_percentiles: [f64; 2],
    pub perplexity_keep: Vec<Bucket>,

    pub dedup_mode: DedupMode,
    pub near_threshold: f64,
    pub shingle_size: usize,
    pub signature_slots: usize,
    pub lsh_bands: usize,

    pub langid_min_confidence: f64,
    /// Empty means every language is accepted.
    pub allowed_languages: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            cleanliness_threshold_default: 0.5,
            cleanliness_threshold_overrides: BTreeMap::from([("pt".to_string(), 0.6)]),
            quality_threshold: 0.7,
            edu_threshold: 2.0,
            strict_scores: true,
            min_words: 5,
            max_mean_word_len: 12.0,
            alpha_ratio_min: 0.6,
            digit_ratio_max: 0.3,
            dup_line_ratio_max: 0.3,
            perplexity_buckets: BTreeMap::new(),
            perplexity_percentiles: [0.33, 0.66],
            perplexity_keep: vec![Bucket::Head, Bucket::Middle],
            dedup_mode: DedupMode::Exact,
            near_threshold: 0.8,
            shingle_size: 5,
            signature_slots: 128,
            lsh_bands: 32,
            langid_min_confidence: 0.5,
            allowed_languages: Vec::new(),
        }
    }
}

impl FilterConfig {
    pub fn cleanliness_threshold(&self, language: &str) -> f64 {
        self.cleanliness_threshold_overrides
            .get(language)
            .copied()
            .unwrap_or(self.cleanliness_threshold_default)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_fraction(
            "filter.cleanliness_threshold_default",
            self.cleanliness_threshold_default,
        )?;
        for (lang, t) in &self.cleanliness_threshold_overrides {
            ensure_fraction(&format!("filter.cleanliness_threshold_overrides.{lang}"), *t)?;
        }
        ensure_fraction("filter.quality_threshold", self.quality_threshold)?;
        if !self.edu_threshold.is_finite() {
            return Err(Error::validation("filter.edu_threshold", "must be finite"));
        }
        if !(self.max_mean_word_len.is_finite() && self.max_mean_word_len > 0.0) {
            return Err(Error::validation("filter.max_mean_word_len", "must be positive"));
        }
        ensure_fraction("filter.alpha_ratio_min", self.alpha_ratio_min)?;
        ensure_fraction("filter.digit_ratio_max", self.digit_ratio_max)?;
        ensure_fraction("filter.dup_line_ratio_max", self.dup_line_ratio_max)?;
        for (lang, [lo, hi]) in &self.perplexity_buckets {
            if !(lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo <= hi) {
                return Err(Error::validation(
                    format!("filter.perplexity_buckets.{lang}"),
                    "needs 0 < head_max ≤ middle_max",
                ));
            }
        }
        let [p1, p2] = self.perplexity_percentiles;
        ensure_fraction("filter.perplexity_percentiles", p1)?;
        ensure_fraction("filter.perplexity_percentiles", p2)?;
        if p1 > p2 {
            return Err(Error::validation(
                "filter.perplexity_percentiles",
                "must be non-decreasing",
            ));
        }
        ensure_fraction("filter.near_threshold", self.near_threshold)?;
        if self.shingle_size == 0 {
            return Err(Error::validation("filter.shingle_size", "must be positive"));
        }
        if self.signature_slots == 0 {
            return Err(Error::validation("filter.signature_slots", "must be positive"));
        }
        if self.lsh_bands == 0 || !self.signature_slots.is_multiple_of(self.lsh_bands) {
            return Err(Error::validation(
                "filter.lsh_bands",
                format!(
                    "must divide signature_slots ({}) evenly",
                    self.signature_slots
                ),
            ));
        }
        ensure_fraction("filter.langid_min_confidence", self.langid_min_confidence)?;
        Ok(())
    }
}

/// Whitespace-delimited words.
pub(crate) fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}
