use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TokenizerModel;
use crate::corpus::Document;
use crate::error::{Error, Result};

/// Languages written without spaces between words. Whitespace "words" are
/// not words there, so their fertility rows carry a caveat.
pub const NO_WHITESPACE_LANGUAGES: &[&str] = &["zh", "ja", "th", "lo", "km", "my"];

pub const ALL_LANGUAGES: &str = "all";
pub const UNKNOWN_LANGUAGE: &str = "und";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FertilityRow {
    pub language: String,
    pub words: u64,
    pub pieces: u64,
    pub fertility: f64,
    /// Set when whitespace does not delimit words in this language.
    pub caveat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FertilityReport {
    pub corpus: String,
    pub tokenizer: String,
    pub rows: Vec<FertilityRow>,
}

/// Pieces per whitespace-delimited word. With `per_language`, one row per
/// document language (`und` when unset), in language order; otherwise a
/// single `all` row.
pub fn fertility<'a, I>(model: &TokenizerModel, docs: I, per_language: bool) -> Result<BTreeMap<String, (u64, u64)>>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut totals: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut seen = 0usize;
    for doc in docs {
        seen += 1;
        let key = if per_language {
            doc.language.clone().unwrap_or_else(|| UNKNOWN_LANGUAGE.to_string())
        } else {
            ALL_LANGUAGES.to_string()
        };
        let e = totals.entry(key).or_insert((0, 0));
        e.0 += doc.text.split_whitespace().count() as u64;
        e.1 += model.encode(&doc.text, false).len() as u64;
    }
    if seen == 0 {
        return Err(Error::validation("corpus", "no documents"));
    }
    if let Some((lang, _)) = totals.iter().find(|(_, (w, _))| *w == 0) {
        return Err(Error::validation(
            "corpus",
            format!("no words for language `{lang}`; fertility is undefined"),
        ));
    }
    Ok(totals)
}

impl FertilityReport {
    pub fn compute<'a, I>(model: &TokenizerModel, tokenizer: &str, corpus: &str, docs: I, per_language: bool) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let rows = fertility(model, docs, per_language)?
            .into_iter()
            .map(|(language, (words, pieces))| FertilityRow {
                caveat: NO_WHITESPACE_LANGUAGES.contains(&language.as_str()),
                fertility: pieces as f64 / words as f64,
                language,
                words,
                pieces,
            })
            .collect();
        Ok(Self {
            corpus: corpus.to_string(),
            tokenizer: tokenizer.to_string(),
            rows,
        })
    }
}
