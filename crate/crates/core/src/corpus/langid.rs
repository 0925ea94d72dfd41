use std::collections::{BTreeMap, HashMap, HashSet};

use super::Document;
use crate::error::{Error, Result};

/// Anything that can name the language of a text with a confidence in
/// `[0, 1]`.
pub trait LanguageClassifier: Send + Sync {
    fn classify(&self, text: &str) -> Result<(String, f64)>;
}

pub fn language_id(doc: &Document, classifier: &dyn LanguageClassifier) -> Result<(String, f64)> {
    if doc.text.trim().is_empty() {
        return Err(Error::validation(
            "text",
            format!("document `{}` is empty; cannot identify its language", doc.id),
        ));
    }
    classifier.classify(&doc.text)
}

const MAX_ORDER: usize = 3;

#[derive(Debug, Default, Clone)]
struct Profile {
    counts: [HashMap<String, u64>; MAX_ORDER],
    totals: [u64; MAX_ORDER],
}

/// Character 1–3-gram naive Bayes classifier with add-one smoothing,
/// trained from per-language seed text.
#[derive(Debug, Clone)]
pub struct NgramLanguageClassifier {
    profiles: BTreeMap<String, Profile>,
    /// Distinct n-grams per order across all languages (smoothing mass).
    vocab: [u64; MAX_ORDER],
}

fn ngrams(text: &str, order: usize) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars().flat_map(char::to_lowercase))
            .chain(std::iter::once(' '))
            .collect();
        if padded.len() < order {
            continue;
        }
        out.extend(padded.windows(order).map(|w| w.iter().collect::<String>()));
    }
    out
}

impl NgramLanguageClassifier {
    pub fn train<'a, I>(seeds: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut profiles: BTreeMap<String, Profile> = BTreeMap::new();
        for (lang, text) in seeds {
            let p = profiles.entry(lang.to_string()).or_default();
            for order in 1..=MAX_ORDER {
                for g in ngrams(text, order) {
                    *p.counts[order - 1].entry(g).or_insert(0) += 1;
                    p.totals[order - 1] += 1;
                }
            }
        }
        if profiles.is_empty() {
            return Err(Error::validation("seeds", "no seed corpora supplied"));
        }
        if let Some((lang, _)) = profiles.iter().find(|(_, p)| p.totals[0] == 0) {
            return Err(Error::validation(
                "seeds",
                format!("seed corpus for `{lang}` is empty"),
            ));
        }
        let mut vocab = [0u64; MAX_ORDER];
        for (k, v) in vocab.iter_mut().enumerate() {
            let all: HashSet<&String> = profiles.values().flat_map(|p| p.counts[k].keys()).collect();
            *v = all.len() as u64;
        }
        Ok(Self { profiles, vocab })
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }

    fn log_likelihood(&self, profile: &Profile, grams: &[Vec<String>]) -> f64 {
        let mut ll = 0.0;
        for (k, gs) in grams.iter().enumerate() {
            let denom = (profile.totals[k] + self.vocab[k] + 1) as f64;
            for g in gs {
                let c = profile.counts[k].get(g).copied().unwrap_or(0);
                ll += ((c + 1) as f64 / denom).ln();
            }
        }
        ll
    }
}

impl LanguageClassifier for NgramLanguageClassifier {
    /// Returns the maximum-likelihood language and its posterior under a
    /// uniform prior.
    fn classify(&self, text: &str) -> Result<(String, f64)> {
        if text.trim().is_empty() {
            return Err(Error::validation("text", "cannot classify empty text"));
        }
        if self.profiles.len() == 1 {
            let lang = self.profiles.keys().next().unwrap().clone();
            return Ok((lang, 1.0));
        }
        let grams: Vec<Vec<String>> = (1..=MAX_ORDER).map(|o| ngrams(text, o)).collect();
        let scores: Vec<(&String, f64)> = self
            .profiles
            .iter()
            .map(|(lang, p)| (lang, self.log_likelihood(p, &grams)))
            .collect();
        let (best_lang, best) = scores
            .iter()
            .fold(None::<(&String, f64)>, |acc, &(l, s)| match acc {
                Some((_, b)) if b >= s => acc,
                _ => Some((l, s)),
            })
            .unwrap();
        let z: f64 = scores.iter().map(|(_, s)| (s - best).exp()).sum();
        Ok((best_lang.clone(), 1.0 / z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EN: &str = "the quick brown fox jumps over the lazy dog\n\
        she sells sea shells by the sea shore\n\
        we will meet again tomorrow morning at the station\n\
        the weather is nice and the children are playing outside\n\
        this report describes the results of the annual survey\n\
        please send me the documents before the end of the week";
    const PT: &str = "o rápido cão castanho salta sobre a raposa preguiçosa\n\
        ela vende conchas do mar na praia\n\
        vamos encontrar-nos amanhã de manhã na estação\n\
        o tempo está bom e as crianças estão a brincar lá fora\n\
        este relatório descreve os resultados do inquérito anual\n\
        por favor envie-me os documentos antes do fim da semana";

    fn split(text: &str) -> (String, Vec<&str>) {
        let lines: Vec<&str> = text.lines().collect();
        let (train, held) = lines.split_at(lines.len() - 2);
        (train.join("\n"), held.to_vec())
    }

    #[test]
    fn held_out_lines_are_identified() {
        let (en_train, en_held) = split(EN);
        let (pt_train, pt_held) = split(PT);
        let clf = NgramLanguageClassifier::train([("en", en_train.as_str()), ("pt", pt_train.as_str())])
            .unwrap();
        for line in en_held {
            let (lang, conf) = language_id(&Document::new("x", line), &clf).unwrap();
            assert_eq!(lang, "en", "{line}");
            assert!(conf >= 0.9, "{line}: {conf}");
        }
        for line in pt_held {
            let (lang, _) = language_id(&Document::new("x", line), &clf).unwrap();
            assert_eq!(lang, "pt", "{line}");
        }
    }

    #[test]
    fn verbatim_seed_text_is_confident() {
        let clf = NgramLanguageClassifier::train([("en", EN), ("pt", PT)]).unwrap();
        let (lang, conf) = clf.classify(EN.lines().next().unwrap()).unwrap();
        assert_eq!(lang, "en");
        assert!(conf >= 0.9);
    }

    #[test]
    fn single_language_is_certain() {
        let clf = NgramLanguageClassifier::train([("mt", "il-lingwa maltija")]).unwrap();
        assert_eq!(clf.classify("whatever text").unwrap(), ("mt".to_string(), 1.0));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let clf = NgramLanguageClassifier::train([("en", EN)]).unwrap();
        assert!(language_id(&Document::new("e", "   "), &clf).is_err());
        assert!(NgramLanguageClassifier::train(Vec::<(&str, &str)>::new()).is_err());
        assert!(NgramLanguageClassifier::train([("en", "")]).is_err());
    }
}
