use std::collections::HashSet;

use super::{words, Document, FilterConfig, FilterOutcome, ParallelPair, EDU_SCORE};
use crate::error::{Error, Result};

/// Character and line statistics the heuristic rules are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct TextStats {
    pub words: usize,
    pub mean_word_len: f64,
    /// Letters over non-space, non-digit characters (1.0 when there are
    /// none, so digit-only text is left to the digit rule).
    pub alpha_ratio: f64,
    /// Digits over non-space characters.
    pub digit_ratio: f64,
    /// Non-empty lines that repeat an earlier line, over non-empty lines.
    pub dup_line_ratio: f64,
}

impl TextStats {
    pub fn of(text: &str) -> Self {
        let mut n_words = 0usize;
        let mut word_chars = 0usize;
        for w in words(text) {
            n_words += 1;
            word_chars += w.chars().count();
        }
        let (mut visible, mut digits, mut letters) = (0usize, 0usize, 0usize);
        for c in text.chars().filter(|c| !c.is_whitespace()) {
            visible += 1;
            if c.is_numeric() {
                digits += 1;
            } else if c.is_alphabetic() {
                letters += 1;
            }
        }
        let mut seen = HashSet::new();
        let (mut lines, mut dup_lines) = (0usize, 0usize);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            lines += 1;
            if !seen.insert(line) {
                dup_lines += 1;
            }
        }
        let ratio = |num: usize, den: usize, empty: f64| {
            if den == 0 {
                empty
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            words: n_words,
            mean_word_len: ratio(word_chars, n_words, 0.0),
            alpha_ratio: ratio(letters, visible - digits, 1.0),
            digit_ratio: ratio(digits, visible, 0.0),
            dup_line_ratio: ratio(dup_lines, lines, 0.0),
        }
    }
}

pub(crate) const MIN_WORDS: &str = "min_words";

/// Length, character-ratio and repetition rules, in that fixed order.
pub fn heuristic_filters(doc: &Document, config: &FilterConfig) -> FilterOutcome {
    let s = TextStats::of(&doc.text);
    let mut out = FilterOutcome::new();
    let _ = out.check(MIN_WORDS, s.words >= config.min_words)
        && out.check("max_mean_word_len", s.mean_word_len <= config.max_mean_word_len)
        && out.check("alpha_ratio", s.alpha_ratio >= config.alpha_ratio_min)
        && out.check("digit_ratio", s.digit_ratio <= config.digit_ratio_max)
        && out.check("dup_line_ratio", s.dup_line_ratio <= config.dup_line_ratio_max);
    out
}

/// Pair thresholds: cleanliness against the language-specific threshold,
/// then translation quality. A score equal to its threshold passes.
pub fn parallel_filter(pair: &ParallelPair, config: &FilterConfig) -> Result<FilterOutcome> {
    let lang = pair.non_english_lang()?;
    let channel = |name: &str, value: Option<f64>| -> Result<Option<f64>> {
        match value {
            Some(v) if v.is_nan() => Err(Error::Data(format!("score channel `{name}` is NaN"))),
            Some(v) => Ok(Some(v)),
            None if config.strict_scores => Err(Error::Data(format!(
                "missing score channel `{name}` on {}→{} pair",
                pair.source_lang, pair.target_lang
            ))),
            None => Ok(None),
        }
    };
    let cleanliness = channel("cleanliness_score", pair.cleanliness_score)?;
    let quality = channel("quality_estimate", pair.quality_estimate)?;

    let mut out = FilterOutcome::new();
    let _ = out.check(
        "cleanliness",
        cleanliness.is_none_or(|v| v >= config.cleanliness_threshold(lang)),
    ) && out.check(
        "quality",
        quality.is_none_or(|v| v >= config.quality_threshold),
    );
    Ok(out)
}

/// Keeps documents whose educational score is strictly above the threshold.
pub fn edu_filter(doc: &Document, config: &FilterConfig) -> Result<FilterOutcome> {
    let score = doc.scores.get(EDU_SCORE).copied().ok_or_else(|| {
        Error::Data(format!(
            "document `{}` has no `{EDU_SCORE}` score channel",
            doc.id
        ))
    })?;
    let mut out = FilterOutcome::new();
    out.check("edu_score", score > config.edu_threshold);
    Ok(out)
}
