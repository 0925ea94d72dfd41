//! Token-budget allocation across languages and data categories.
//!
//! A plan is built top-down: English and the code/math pool take fixed
//! shares of the budget, the remainder is divided between the other
//! languages in proportion to how much data each has, and each language's
//! slice is split between parallel data and monolingual web/high-quality
//! data. Integer rounding is done level by level with the largest-remainder
//! method so every level sums exactly to its parent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_fraction, Error, Result};
use crate::delimited;

pub const ENGLISH: &str = "en";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Web,
    ParallelToEn,
    ParallelFromEn,
    HighQuality,
    CodeMath,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Web,
        Category::ParallelToEn,
        Category::ParallelFromEn,
        Category::HighQuality,
        Category::CodeMath,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Web => "web",
            Category::ParallelToEn => "parallel_to_en",
            Category::ParallelFromEn => "parallel_from_en",
            Category::HighQuality => "high_quality",
            Category::CodeMath => "code_math",
        }
    }

    pub fn is_parallel(self) -> bool {
        matches!(self, Category::ParallelToEn | Category::ParallelFromEn)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::validation("category", format!("unknown category `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub language: String,
    pub available_tokens: BTreeMap<Category, u64>,
}

impl LanguageStats {
    pub fn new(language: impl Into<String>) -> Self {
        Self {
            language: language.into(),
            available_tokens: BTreeMap::new(),
        }
    }

    pub fn with(mut self, category: Category, tokens: u64) -> Self {
        self.available_tokens.insert(category, tokens);
        self
    }

    pub fn available(&self, category: Category) -> u64 {
        self.available_tokens.get(&category).copied().unwrap_or(0)
    }

    /// Tokens that count towards the language's share of the budget
    /// (everything except code/math, which is budgeted separately).
    pub fn language_tokens(&self) -> u64 {
        self.available_tokens
            .iter()
            .filter(|(c, _)| **c != Category::CodeMath)
            .map(|(_, t)| *t)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Main,
    Annealing,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Main => "main",
            Phase::Annealing => "annealing",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Phase::Main),
            "annealing" => Ok(Phase::Annealing),
            other => Err(Error::validation(
                "phase",
                format!("unknown phase `{other}` (expected main or annealing)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixturePolicy {
    pub english_share: f64,
    pub code_math_share: f64,
    pub parallel_share_within_language: f64,
    pub annealing_english_share: f64,
    pub annealing_code_math_share: f64,
    pub annealing_fraction_of_steps: f64,
    /// Maximum epochs for high-quality datasets when `high_quality_repeat`
    /// is set.
    pub repetition_cap: f64,
    /// Maximum epochs for every other dataset.
    pub base_epoch_cap: f64,
    pub high_quality_repeat: bool,
    /// Minimum slice of the budget given to every non-English language.
    pub language_floor_share: f64,
}

impl Default for MixturePolicy {
    fn default() -> Self {
        Self {
            english_share: 0.50,
            code_math_share: 0.05,
            parallel_share_within_language: 0.20,
            annealing_english_share: 0.325,
            annealing_code_math_share: 0.07,
            annealing_fraction_of_steps: 0.10,
            repetition_cap: 4.0,
            base_epoch_cap: 1.0,
            high_quality_repeat: true,
            language_floor_share: 0.001,
        }
    }
}

impl MixturePolicy {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("mixture.english_share", self.english_share),
            ("mixture.code_math_share", self.code_math_share),
            (
                "mixture.parallel_share_within_language",
                self.parallel_share_within_language,
            ),
            ("mixture.annealing_english_share", self.annealing_english_share),
            ("mixture.annealing_code_math_share", self.annealing_code_math_share),
            (
                "mixture.annealing_fraction_of_steps",
                self.annealing_fraction_of_steps,
            ),
            ("mixture.language_floor_share", self.language_floor_share),
        ] {
            ensure_fraction(key, v)?;
        }
        if self.english_share + self.code_math_share >= 1.0 {
            return Err(Error::validation(
                "mixture.code_math_share",
                "english_share + code_math_share must be below 1",
            ));
        }
        if self.annealing_english_share + self.annealing_code_math_share >= 1.0 {
            return Err(Error::validation(
                "mixture.annealing_code_math_share",
                "annealing_english_share + annealing_code_math_share must be below 1",
            ));
        }
        if !(self.repetition_cap.is_finite() && self.repetition_cap >= 1.0) {
            return Err(Error::validation("mixture.repetition_cap", "must be at least 1"));
        }
        if !(self.base_epoch_cap.is_finite() && self.base_epoch_cap > 0.0) {
            return Err(Error::validation("mixture.base_epoch_cap", "must be positive"));
        }
        Ok(())
    }

    pub fn shares(&self, phase: Phase) -> (f64, f64) {
        match phase {
            Phase::Main => (self.english_share, self.code_math_share),
            Phase::Annealing => (self.annealing_english_share, self.annealing_code_math_share),
        }
    }

    pub fn epoch_cap(&self, category: Category) -> f64 {
        if category == Category::HighQuality && self.high_quality_repeat {
            self.repetition_cap
        } else {
            self.base_epoch_cap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub language: String,
    pub category: Category,
    pub allocated_tokens: u64,
    pub available_tokens: u64,
    /// `allocated / available`; `None` when nothing is available.
    pub epochs: Option<f64>,
}

impl PlanEntry {
    pub fn dataset(&self) -> String {
        format!("{}/{}", self.language, self.category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub phase: Phase,
    pub budget_tokens: u64,
    pub entries: Vec<PlanEntry>,
    pub warnings: Vec<String>,
}

/// Reporting group: English, the code/math pool, or another language.
pub fn group_of(entry: &PlanEntry) -> String {
    if entry.category == Category::CodeMath {
        "code_math".to_string()
    } else {
        entry.language.clone()
    }
}

impl MixturePlan {
    pub fn total_allocated(&self) -> u64 {
        self.entries.iter().map(|e| e.allocated_tokens).sum()
    }

    fn share_by(&self, key: impl Fn(&PlanEntry) -> String) -> BTreeMap<String, f64> {
        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        if self.budget_tokens == 0 {
            return BTreeMap::new();
        }
        for e in &self.entries {
            *totals.entry(key(e)).or_insert(0) += e.allocated_tokens;
        }
        totals
            .into_iter()
            .map(|(k, v)| (k, v as f64 / self.budget_tokens as f64))
            .collect()
    }

    /// Share of the budget per language; code/math is reported as its own
    /// `code_math` group.
    pub fn language_shares(&self) -> BTreeMap<String, f64> {
        self.share_by(group_of)
    }

    pub fn category_shares(&self) -> BTreeMap<String, f64> {
        self.share_by(|e| e.category.to_string())
    }

    /// Share of the budget going to non-English languages.
    pub fn other_languages_share(&self) -> f64 {
        self.language_shares()
            .iter()
            .filter(|(k, _)| k.as_str() != ENGLISH && k.as_str() != "code_math")
            .map(|(_, v)| v)
            .sum()
    }
}

/// Largest-remainder apportionment of `total` by non-negative real
/// `targets`. Ties go to the earlier index; any residual from float error
/// is absorbed by the largest entry.
fn apportion(total: u64, targets: &[f64]) -> Vec<u64> {
    if targets.is_empty() {
        return Vec::new();
    }
    let sum: f64 = targets.iter().sum();
    let exact: Vec<f64> = if sum > 0.0 {
        targets.iter().map(|t| t / sum * total as f64).collect()
    } else {
        let n = targets.len() as f64;
        targets.iter().map(|_| total as f64 / n).collect()
    };
    let mut out: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    if assigned <= total {
        let deficit = (total - assigned) as usize;
        for &i in order.iter().take(deficit.min(order.len())) {
            out[i] += 1;
        }
    }
    let now: u64 = out.iter().sum();
    if now != total {
        let largest = (0..out.len())
            .max_by(|&a, &b| out[a].cmp(&out[b]).then(b.cmp(&a)))
            .unwrap();
        if now < total {
            out[largest] += total - now;
        } else {
            out[largest] -= (now - total).min(out[largest]);
        }
    }
    out
}

/// Splits a language's allocation into `(parallel, non_parallel)` tokens and
/// the parallel part into `(to_en, from_en)` halves, odd unit to `to_en`.
pub fn parallel_split(language_allocation: u64, policy: &MixturePolicy) -> ParallelSplit {
    let parallel = ((language_allocation as f64 * policy.parallel_share_within_language).round()
        as u64)
        .min(language_allocation);
    let from_en = parallel / 2;
    ParallelSplit {
        parallel,
        non_parallel: language_allocation - parallel,
        to_en: parallel - from_en,
        from_en,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelSplit {
    pub parallel: u64,
    pub non_parallel: u64,
    pub to_en: u64,
    pub from_en: u64,
}

/// Divides `amount` between languages proportionally to `weights`, with a
/// per-language floor and cap, by repeated clamping (water filling).
fn divide_with_bounds(
    amount: f64,
    weights: &[f64],
    floor: f64,
    caps: &[f64],
    warnings: &mut Vec<String>,
    names: &[&str],
) -> Vec<f64> {
    let n = weights.len();
    let mut out = vec![0.0; n];
    if n == 0 || amount <= 0.0 {
        return out;
    }
    let floor = if floor * n as f64 > amount {
        warnings.push(format!(
            "language floor {floor:.0} tokens × {n} languages exceeds the remaining budget; floor ignored"
        ));
        0.0
    } else {
        floor
    };
    let mut fixed = vec![false; n];
    loop {
        let remaining = amount - (0..n).filter(|&i| fixed[i]).map(|i| out[i]).sum::<f64>();
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        if free.is_empty() {
            if remaining > 0.5 {
                // Every language is capped: spread the excess anyway.
                warnings.push(format!(
                    "{remaining:.0} tokens exceed every language's repetition cap; allocated beyond cap"
                ));
                let total_w: f64 = weights.iter().sum();
                for i in 0..n {
                    let w = if total_w > 0.0 { weights[i] / total_w } else { 1.0 / n as f64 };
                    out[i] += remaining * w;
                }
            }
            break;
        }
        let free_w: f64 = free.iter().map(|&i| weights[i]).sum();
        for &i in &free {
            out[i] = if free_w > 0.0 {
                remaining * weights[i] / free_w
            } else {
                remaining / free.len() as f64
            };
        }
        let mut changed = false;
        for &i in &free {
            if out[i] < floor {
                out[i] = floor;
                fixed[i] = true;
                changed = true;
            } else if out[i] > caps[i].max(floor) {
                out[i] = caps[i].max(floor);
                fixed[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, name) in names.iter().enumerate() {
        if out[i] > 0.0 && weights[i] == 0.0 {
            warnings.push(format!(
                "language `{name}` has no available data but receives {:.0} tokens",
                out[i]
            ));
        }
    }
    out
}

/// Splits a monolingual slice between web and high-quality data. Each
/// dataset is weighted by how many epochs it may be used for, so
/// high-quality data is repeated up to its cap at the same relative rate as
/// web data is consumed.
fn monolingual_entries(
    stats: &LanguageStats,
    tokens: u64,
    policy: &MixturePolicy,
) -> Vec<(Category, u64)> {
    let cats = [Category::Web, Category::HighQuality];
    let weights: Vec<f64> = cats
        .iter()
        .map(|&c| stats.available(c) as f64 * policy.epoch_cap(c))
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return vec![(Category::Web, tokens), (Category::HighQuality, 0)];
    }
    let parts = apportion(tokens, &weights);
    cats.into_iter().zip(parts).collect()
}

/// Builds the allocation for one phase.
pub fn allocate(
    budget_tokens: u64,
    stats: &[LanguageStats],
    policy: &MixturePolicy,
    phase: Phase,
) -> Result<MixturePlan> {
    if budget_tokens == 0 {
        return Err(Error::validation("budget_tokens", "must be positive"));
    }
    if stats.is_empty() {
        return Err(Error::validation("stats", "no language statistics supplied"));
    }
    policy.validate()?;
    let mut seen = std::collections::BTreeSet::new();
    for s in stats {
        if !seen.insert(s.language.as_str()) {
            return Err(Error::validation(
                "stats",
                format!("language `{}` listed twice", s.language),
            ));
        }
    }
    let english = stats
        .iter()
        .find(|s| s.language == ENGLISH)
        .ok_or_else(|| Error::validation("stats", "English (`en`) is missing"))?;
    // Rows holding nothing but code/math only feed the code/math pool.
    let others: Vec<&LanguageStats> = stats
        .iter()
        .filter(|s| s.language != ENGLISH)
        .filter(|s| s.language_tokens() > 0 || s.available(Category::CodeMath) == 0)
        .collect();
    let code_sources: Vec<&LanguageStats> = stats
        .iter()
        .filter(|s| s.available(Category::CodeMath) > 0)
        .collect();

    let (english_share, code_share) = policy.shares(phase);
    let other_share = 1.0 - english_share - code_share;
    let budget = budget_tokens as f64;
    let mut warnings = Vec::new();

    // Non-English languages, proportional to availability with floor/cap.
    let names: Vec<&str> = others.iter().map(|s| s.language.as_str()).collect();
    let weights: Vec<f64> = others.iter().map(|s| s.language_tokens() as f64).collect();
    let caps: Vec<f64> = others
        .iter()
        .map(|s| {
            Category::ALL
                .iter()
                .filter(|c| **c != Category::CodeMath)
                .map(|&c| s.available(c) as f64 * policy.epoch_cap(c))
                .sum()
        })
        .collect();
    let other_targets = divide_with_bounds(
        other_share * budget,
        &weights,
        policy.language_floor_share * budget,
        &caps,
        &mut warnings,
        &names,
    );

    if others.is_empty() && other_share > 0.0 {
        warnings.push("no non-English languages; their share goes to English".to_string());
    }
    if code_sources.is_empty() && code_share > 0.0 {
        warnings.push("no code/math data available; allocation is infeasible".to_string());
    }

    // Top-level groups: English, code/math, then each other language.
    let mut group_targets = vec![
        if others.is_empty() {
            english_share + other_share
        } else {
            english_share
        } * budget,
        code_share * budget,
    ];
    group_targets.extend(other_targets);
    let groups = apportion(budget_tokens, &group_targets);

    let mut entries = Vec::new();
    let mut push = |language: &str, category: Category, allocated: u64, available: u64| {
        entries.push(PlanEntry {
            language: language.to_string(),
            category,
            allocated_tokens: allocated,
            available_tokens: available,
            epochs: (available > 0).then(|| allocated as f64 / available as f64),
        });
    };

    for (cat, tokens) in monolingual_entries(english, groups[0], policy) {
        push(ENGLISH, cat, tokens, english.available(cat));
    }

    if code_sources.is_empty() {
        push("code", Category::CodeMath, groups[1], 0);
    } else {
        let w: Vec<f64> = code_sources
            .iter()
            .map(|s| s.available(Category::CodeMath) as f64)
            .collect();
        for (s, tokens) in code_sources.iter().zip(apportion(groups[1], &w)) {
            push(&s.language, Category::CodeMath, tokens, s.available(Category::CodeMath));
        }
    }

    for (s, &alloc) in others.iter().zip(&groups[2..]) {
        let split = parallel_split(alloc, policy);
        push(
            &s.language,
            Category::ParallelToEn,
            split.to_en,
            s.available(Category::ParallelToEn),
        );
        push(
            &s.language,
            Category::ParallelFromEn,
            split.from_en,
            s.available(Category::ParallelFromEn),
        );
        for (cat, tokens) in monolingual_entries(s, split.non_parallel, policy) {
            push(&s.language, cat, tokens, s.available(cat));
        }
    }

    for e in &entries {
        if e.available_tokens == 0 && e.allocated_tokens > 0 {
            warnings.push(format!(
                "infeasible: {} receives {} tokens with none available",
                e.dataset(),
                e.allocated_tokens
            ));
        }
    }

    Ok(MixturePlan {
        phase,
        budget_tokens,
        entries,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionFlag {
    None,
    Repeat,
    OverCap,
    Infeasible,
}

impl fmt::Display for RepetitionFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepetitionFlag::None => "-",
            RepetitionFlag::Repeat => "repeat",
            RepetitionFlag::OverCap => "over_cap",
            RepetitionFlag::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRow {
    pub dataset: String,
    pub epochs: Option<f64>,
    pub cap: f64,
    pub flag: RepetitionFlag,
}

/// Epochs per dataset against the availability in `stats`, flagged against
/// the policy's per-category epoch cap.
pub fn repetition_report(
    plan: &MixturePlan,
    stats: &[LanguageStats],
    policy: &MixturePolicy,
) -> Result<Vec<RepetitionRow>> {
    let by_lang: BTreeMap<&str, &LanguageStats> =
        stats.iter().map(|s| (s.language.as_str(), s)).collect();
    plan.entries
        .iter()
        .filter(|e| e.allocated_tokens > 0 || e.available_tokens > 0)
        .map(|e| {
            let available = match by_lang.get(e.language.as_str()) {
                Some(s) => s.available(e.category),
                None if e.category == Category::CodeMath && e.available_tokens == 0 => 0,
                None => {
                    return Err(Error::validation(
                        "stats",
                        format!("plan references language `{}` absent from stats", e.language),
                    ))
                }
            };
            let cap = policy.epoch_cap(e.category);
            let (epochs, flag) = if available == 0 {
                let flag = if e.allocated_tokens > 0 {
                    RepetitionFlag::Infeasible
                } else {
                    RepetitionFlag::None
                };
                (None, flag)
            } else {
                let epochs = e.allocated_tokens as f64 / available as f64;
                let flag = if epochs > cap {
                    RepetitionFlag::OverCap
                } else if epochs > 1.0 {
                    RepetitionFlag::Repeat
                } else {
                    RepetitionFlag::None
                };
                (Some(epochs), flag)
            };
            Ok(RepetitionRow {
                dataset: e.dataset(),
                epochs,
                cap,
                flag,
            })
        })
        .collect()
}

/// Sampling probability per dataset, proportional to allocated tokens.
pub fn sampling_weights(plan: &MixturePlan) -> Result<BTreeMap<String, f64>> {
    let total = plan.total_allocated();
    if total == 0 {
        return Err(Error::validation("plan", "plan allocates no tokens"));
    }
    Ok(plan
        .entries
        .iter()
        .filter(|e| e.allocated_tokens > 0)
        .map(|e| (e.dataset(), e.allocated_tokens as f64 / total as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenAccounting {
    pub tokens_per_step: u64,
    pub total_steps: u64,
    pub annealing_start_step: u64,
}

pub fn token_accounting(
    batch_sequences: u64,
    sequence_length: u64,
    total_tokens: u64,
    annealing_fraction: f64,
) -> Result<TokenAccounting> {
    for (key, v) in [
        ("batch_sequences", batch_sequences),
        ("sequence_length", sequence_length),
        ("total_tokens", total_tokens),
    ] {
        if v == 0 {
            return Err(Error::validation(key, "must be positive"));
        }
    }
    ensure_fraction("annealing_fraction", annealing_fraction)?;
    let tokens_per_step = batch_sequences
        .checked_mul(sequence_length)
        .ok_or_else(|| Error::validation("batch_sequences", "tokens per step overflow"))?;
    let total_steps = total_tokens.div_ceil(tokens_per_step);
    Ok(TokenAccounting {
        tokens_per_step,
        total_steps,
        annealing_start_step: crate::train_plan::fraction_of_steps(
            total_steps,
            1.0 - annealing_fraction,
        ),
    })
}

/// Reads `(language, category, tokens)` rows; repeated `(language,
/// category)` pairs are summed.
pub fn read_language_stats(path: &Path) -> Result<Vec<LanguageStats>> {
    #[derive(Deserialize)]
    struct Row {
        language: String,
        category: String,
        tokens: u64,
    }
    let mut reader = delimited::reader(path)?;
    let mut order = Vec::new();
    let mut by_lang: BTreeMap<String, LanguageStats> = BTreeMap::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(format!("{} row {}", path.display(), i + 1), e))?;
        let category: Category = row.category.parse()?;
        let entry = by_lang.entry(row.language.clone()).or_insert_with(|| {
            order.push(row.language.clone());
            LanguageStats::new(row.language.clone())
        });
        *entry.available_tokens.entry(category).or_insert(0) += row.tokens;
    }
    Ok(order
        .into_iter()
        .map(|l| by_lang.remove(&l).unwrap())
        .collect())
}
