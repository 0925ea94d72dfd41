use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{words, Document, FilterConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupMode {
    Exact,
    Near,
}

impl std::str::FromStr for DedupMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "exact" => Ok(DedupMode::Exact),
            "near" => Ok(DedupMode::Near),
            other => Err(crate::Error::validation(
                "filter.dedup_mode",
                format!("unknown mode `{other}` (expected exact or near)"),
            )),
        }
    }
}

/// Lowercased text with every whitespace run collapsed to one space.
pub fn normalize_for_dedup(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for w in words(text) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(w.chars().flat_map(char::to_lowercase));
    }
    out
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// MinHash over word shingles. Hashes are fixed functions of the input bytes
/// so signatures are stable across runs and platforms.
#[derive(Debug, Clone)]
pub struct MinHasher {
    shingle_size: usize,
    seeds: Vec<u64>,
}

impl MinHasher {
    pub fn new(shingle_size: usize, slots: usize) -> Self {
        Self {
            shingle_size,
            seeds: (0..slots as u64).map(|i| splitmix64(i ^ 0x5eed)).collect(),
        }
    }

    /// Hashes of the word `shingle_size`-grams of the normalized text.
    /// Texts shorter than one shingle hash as a single shingle.
    pub fn shingle_hashes(&self, text: &str) -> HashSet<u64> {
        let normalized = normalize_for_dedup(text);
        let toks: Vec<&str> = normalized.split(' ').collect();
        let k = self.shingle_size.min(toks.len()).max(1);
        toks.windows(k)
            .map(|w| {
                let mut h = FNV_OFFSET;
                for t in w {
                    h = fnv1a(t.as_bytes(), h);
                    h = fnv1a(&[0x1f], h);
                }
                h
            })
            .collect()
    }

    pub fn signature(&self, text: &str) -> Vec<u64> {
        let shingles = self.shingle_hashes(text);
        self.seeds
            .iter()
            .map(|&seed| {
                shingles
                    .iter()
                    .map(|&h| splitmix64(h ^ seed))
                    .min()
                    .unwrap_or(u64::MAX)
            })
            .collect()
    }
}

fn estimated_jaccard(a: &[u64], b: &[u64]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len() as f64
}

/// Key a document is compared by: a 128-bit hash of its normalized text in
/// exact mode, a MinHash signature in near mode. Computing keys is pure and
/// can run in parallel; admitting them must happen in stream order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DedupKey {
    Exact(u128),
    Near(Vec<u64>),
}

/// Order-dependent duplicate detector. A document is admitted unless it
/// duplicates one admitted earlier, so running the same stream twice yields
/// the same decisions and re-running on the output drops nothing.
#[derive(Debug)]
pub struct Deduplicator {
    mode: DedupMode,
    threshold: f64,
    hasher: MinHasher,
    rows_per_band: usize,
    seen_exact: HashSet<u128>,
    kept_signatures: Vec<Vec<u64>>,
    bands: HashMap<(usize, u64), Vec<usize>>,
}

impl Deduplicator {
    pub fn new(config: &FilterConfig) -> Self {
        Self::with_mode(config, config.dedup_mode)
    }

    pub fn with_mode(config: &FilterConfig, mode: DedupMode) -> Self {
        Self {
            mode,
            threshold: config.near_threshold,
            hasher: MinHasher::new(config.shingle_size, config.signature_slots),
            rows_per_band: config.signature_slots / config.lsh_bands,
            seen_exact: HashSet::new(),
            kept_signatures: Vec::new(),
            bands: HashMap::new(),
        }
    }

    pub fn key(&self, text: &str) -> DedupKey {
        match self.mode {
            DedupMode::Exact => {
                let n = normalize_for_dedup(text);
                let hi = fnv1a(n.as_bytes(), 0) as u128;
                let lo = splitmix64(fnv1a(n.as_bytes(), 0x9e37_79b9)) as u128;
                DedupKey::Exact(hi << 64 | lo)
            }
            DedupMode::Near => DedupKey::Near(self.hasher.signature(text)),
        }
    }

    /// Returns `true` if the document is new and records it.
    pub fn admit(&mut self, key: DedupKey) -> bool {
        match key {
            DedupKey::Exact(h) => self.seen_exact.insert(h),
            DedupKey::Near(sig) => {
                let band_keys: Vec<(usize, u64)> = sig
                    .chunks(self.rows_per_band)
                    .enumerate()
                    .map(|(b, rows)| {
                        let mut h = FNV_OFFSET;
                        for r in rows {
                            h = fnv1a(&r.to_le_bytes(), h);
                        }
                        (b, h)
                    })
                    .collect();
                let mut checked = HashSet::new();
                for bk in &band_keys {
                    if let Some(cands) = self.bands.get(bk) {
                        for &c in cands {
                            if checked.insert(c)
                                && estimated_jaccard(&sig, &self.kept_signatures[c])
                                    >= self.threshold
                            {
                                return false;
                            }
                        }
                    }
                }
                let idx = self.kept_signatures.len();
                self.kept_signatures.push(sig);
                for bk in band_keys {
                    self.bands.entry(bk).or_default().push(idx);
                }
                true
            }
        }
    }

    pub fn check(&mut self, text: &str) -> bool {
        let key = self.key(text);
        self.admit(key)
    }
}

/// Drops duplicates from a document stream, preserving the order of the
/// survivors.
pub fn dedup<I>(docs: I, config: &FilterConfig, mode: DedupMode) -> impl Iterator<Item = Document>
where
    I: IntoIterator<Item = Document>,
{
    let mut d = Deduplicator::with_mode(config, mode);
    docs.into_iter().filter(move |doc| d.check(&doc.text))
}
