use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::filters::{TextStats, MIN_WORDS};
use super::{Document, FilterConfig, FilterOutcome};
use crate::error::{Error, Result};

/// A model that scores text by per-word perplexity. Lower is more typical.
pub trait LanguageModel: Send + Sync {
    fn perplexity(&self, text: &str) -> f64;
}

const BOS: u32 = 0;
const EOS: u32 = 1;
const DISCOUNT: f64 = 0.75;

/// Word trigram model with interpolated Kneser–Ney smoothing. Words are
/// lowercased; each input line is one sentence padded with two `<s>` and a
/// closing `</s>`. Unknown words receive only the uniform share of the
/// unigram level, spread over the vocabulary plus one unknown slot.
#[derive(Debug, Clone)]
pub struct KneserNeyTrigram {
    vocab: HashMap<String, u32>,
    trigram: HashMap<(u32, u32, u32), u32>,
    /// Σ_w c(u v w) and the number of distinct w, per (u, v).
    trigram_ctx: HashMap<(u32, u32), (u32, u32)>,
    /// N1+(· v w).
    bigram_cont: HashMap<(u32, u32), u32>,
    /// Σ_w N1+(· v w) and the number of distinct w, per v.
    bigram_ctx: HashMap<u32, (u32, u32)>,
    /// N1+(· w).
    unigram_cont: HashMap<u32, u32>,
    bigram_types: u32,
}

fn sentences(text: &str) -> impl Iterator<Item = Vec<String>> + '_ {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
        .filter(|ws| !ws.is_empty())
}

impl KneserNeyTrigram {
    pub fn train(text: &str) -> Result<Self> {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut trigram: HashMap<(u32, u32, u32), u32> = HashMap::new();
        for sent in sentences(text) {
            let mut ids = vec![BOS, BOS];
            for w in sent {
                let next = vocab.len() as u32 + 2;
                ids.push(*vocab.entry(w).or_insert(next));
            }
            ids.push(EOS);
            for t in ids.windows(3) {
                *trigram.entry((t[0], t[1], t[2])).or_insert(0) += 1;
            }
        }
        if trigram.is_empty() {
            return Err(Error::validation("lm", "training text has no words"));
        }
        let mut trigram_ctx: HashMap<(u32, u32), (u32, u32)> = HashMap::new();
        let mut bigram_cont: HashMap<(u32, u32), u32> = HashMap::new();
        for (&(u, v, w), &c) in &trigram {
            let e = trigram_ctx.entry((u, v)).or_insert((0, 0));
            e.0 += c;
            e.1 += 1;
            *bigram_cont.entry((v, w)).or_insert(0) += 1;
        }
        let mut bigram_ctx: HashMap<u32, (u32, u32)> = HashMap::new();
        let mut unigram_cont: HashMap<u32, u32> = HashMap::new();
        for (&(v, w), &n) in &bigram_cont {
            let e = bigram_ctx.entry(v).or_insert((0, 0));
            e.0 += n;
            e.1 += 1;
            *unigram_cont.entry(w).or_insert(0) += 1;
        }
        let bigram_types = bigram_cont.len() as u32;
        Ok(Self {
            vocab,
            trigram,
            trigram_ctx,
            bigram_cont,
            bigram_ctx,
            unigram_cont,
            bigram_types,
        })
    }

    /// Predictable outcomes: every word type plus `</s>`.
    fn outcomes(&self) -> f64 {
        self.vocab.len() as f64 + 1.0
    }

    fn p_unigram(&self, w: Option<u32>) -> f64 {
        let total = self.bigram_types as f64;
        let seen_types = self.unigram_cont.len() as f64;
        let uniform = 1.0 / (self.outcomes() + 1.0);
        let own = w
            .and_then(|w| self.unigram_cont.get(&w))
            .map_or(0.0, |&n| (n as f64 - DISCOUNT).max(0.0) / total);
        own + DISCOUNT * seen_types / total * uniform
    }

    fn p_bigram(&self, v: u32, w: Option<u32>) -> f64 {
        let lower = self.p_unigram(w);
        match self.bigram_ctx.get(&v) {
            None => lower,
            Some(&(total, types)) => {
                let total = total as f64;
                let own = w
                    .and_then(|w| self.bigram_cont.get(&(v, w)))
                    .map_or(0.0, |&n| (n as f64 - DISCOUNT).max(0.0) / total);
                own + DISCOUNT * types as f64 / total * lower
            }
        }
    }

    fn p_trigram(&self, u: u32, v: u32, w: Option<u32>) -> f64 {
        let lower = self.p_bigram(v, w);
        match self.trigram_ctx.get(&(u, v)) {
            None => lower,
            Some(&(total, types)) => {
                let total = total as f64;
                let own = w
                    .and_then(|w| self.trigram.get(&(u, v, w)))
                    .map_or(0.0, |&c| (c as f64 - DISCOUNT).max(0.0) / total);
                own + DISCOUNT * types as f64 / total * lower
            }
        }
    }

    /// Mean negative log-probability per predicted token (words and `</s>`),
    /// with the token count. Zero tokens for text without words.
    pub fn log_loss(&self, text: &str) -> (f64, usize) {
        let mut sum = 0.0;
        let mut n = 0usize;
        for sent in sentences(text) {
            let (mut u, mut v) = (BOS, BOS);
            let ids = sent
                .iter()
                .map(|w| self.vocab.get(w).copied())
                .chain(std::iter::once(Some(EOS)));
            for w in ids {
                sum -= self.p_trigram(u, v, w).ln();
                n += 1;
                // Unknown words have no id; any unseen id works as a context
                // since it backs off the same way.
                u = v;
                v = w.unwrap_or(u32::MAX);
            }
        }
        if n == 0 {
            (0.0, 0)
        } else {
            (sum / n as f64, n)
        }
    }
}

impl LanguageModel for KneserNeyTrigram {
    fn perplexity(&self, text: &str) -> f64 {
        match self.log_loss(text) {
            (_, 0) => f64::INFINITY,
            (mean, _) => mean.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Middle,
    Tail,
}

impl Bucket {
    /// `boundaries` is `[head_max, middle_max]`, both inclusive.
    pub fn of(perplexity: f64, boundaries: [f64; 2]) -> Self {
        if perplexity <= boundaries[0] {
            Bucket::Head
        } else if perplexity <= boundaries[1] {
            Bucket::Middle
        } else {
            Bucket::Tail
        }
    }
}

impl std::str::FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(Bucket::Head),
            "middle" => Ok(Bucket::Middle),
            "tail" => Ok(Bucket::Tail),
            other => Err(Error::validation(
                "filter.perplexity_keep",
                format!("unknown bucket `{other}` (expected head, middle or tail)"),
            )),
        }
    }
}

/// A per-language model with optional pre-computed bucket boundaries.
/// Boundaries set in [`FilterConfig::perplexity_buckets`] take precedence.
#[derive(Clone)]
pub struct PerplexityModel {
    pub lm: Arc<dyn LanguageModel>,
    pub boundaries: Option<[f64; 2]>,
}

impl std::fmt::Debug for PerplexityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerplexityModel")
            .field("boundaries", &self.boundaries)
            .finish_non_exhaustive()
    }
}

/// Nearest-rank percentiles of the perplexities of `texts`. Texts without
/// words are ignored.
pub fn calibrate_buckets<'a, I>(lm: &dyn LanguageModel, texts: I, percentiles: [f64; 2]) -> Result<[f64; 2]>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut ppl: Vec<f64> = texts
        .into_iter()
        .map(|t| lm.perplexity(t))
        .filter(|p| p.is_finite())
        .collect();
    if ppl.is_empty() {
        return Err(Error::validation(
            "calibration",
            "no non-empty calibration texts",
        ));
    }
    ppl.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        let k = (p * ppl.len() as f64).ceil() as usize;
        ppl[k.clamp(1, ppl.len()) - 1]
    };
    Ok([rank(percentiles[0]), rank(percentiles[1])])
}

/// Perplexity of a document under its language's model and the bucket it
/// falls in.
pub(crate) fn score_perplexity(
    doc: &Document,
    models: &BTreeMap<String, PerplexityModel>,
    config: &FilterConfig,
) -> Result<(f64, Bucket)> {
    let lang = doc.language.as_deref().ok_or_else(|| {
        Error::Data(format!(
            "document `{}` has no language; run language identification first",
            doc.id
        ))
    })?;
    let model = models
        .get(lang)
        .ok_or_else(|| Error::Config(format!("no perplexity model for language `{lang}`")))?;
    let boundaries = config
        .perplexity_buckets
        .get(lang)
        .copied()
        .or(model.boundaries)
        .ok_or_else(|| {
            Error::Config(format!("no perplexity bucket boundaries for language `{lang}`"))
        })?;
    let ppl = model.lm.perplexity(&doc.text);
    Ok((ppl, Bucket::of(ppl, boundaries)))
}

/// Rejects documents that are too short to score, then those whose
/// perplexity bucket is not in `config.perplexity_keep`.
pub fn perplexity_filter(
    doc: &Document,
    models: &BTreeMap<String, PerplexityModel>,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::new();
    if out.check(MIN_WORDS, TextStats::of(&doc.text).words >= config.min_words) {
        let (_, bucket) = score_perplexity(doc, models, config)?;
        out.check("perplexity", config.perplexity_keep.contains(&bucket));
    }
    Ok(out)
}
