use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use super::{default_control_tokens, pretokenize, Sym, TokenKind, TokenizerModel, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub vocab_size: usize,
    pub control_tokens: Vec<String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            control_tokens: default_control_tokens(),
        }
    }
}

type Pair = (u32, u32);

/// Max-heap key: highest count first, then the lexicographically smallest
/// merged surface, then the smallest left piece.
type HeapEntry = (u64, Reverse<String>, Reverse<String>, u32, u32);

struct Trainer<'m> {
    model: &'m mut TokenizerModel,
    words: Vec<(Vec<u32>, u64)>,
    counts: HashMap<Pair, u64>,
    occurs: HashMap<Pair, HashSet<usize>>,
    heap: BinaryHeap<HeapEntry>,
}

impl Trainer<'_> {
    fn mergeable(&self, p: Pair) -> bool {
        self.model.is_piece(p.0) && self.model.is_piece(p.1)
    }

    fn entry(&self, p: Pair, count: u64) -> HeapEntry {
        let l = &self.model.tokens[p.0 as usize].surface;
        let r = &self.model.tokens[p.1 as usize].surface;
        (count, Reverse(format!("{l}{r}")), Reverse(l.clone()), p.0, p.1)
    }

    fn add_word(&mut self, idx: usize, sign: i64, touched: &mut HashSet<Pair>) {
        let (ids, n) = &self.words[idx];
        let n = *n;
        let pairs: Vec<Pair> = ids.windows(2).map(|w| (w[0], w[1])).filter(|&p| self.mergeable(p)).collect();
        for p in pairs {
            let c = self.counts.entry(p).or_insert(0);
            if sign > 0 {
                *c += n;
                self.occurs.entry(p).or_default().insert(idx);
            } else {
                *c -= n;
            }
            touched.insert(p);
        }
    }

    fn apply(&mut self, pair: Pair, out: u32) {
        let mut idxs: Vec<usize> = self.occurs.get(&pair).map(|s| s.iter().copied().collect()).unwrap_or_default();
        idxs.sort_unstable();
        let mut touched = HashSet::new();
        for idx in idxs {
            let ids = &self.words[idx].0;
            if !ids.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            self.add_word(idx, -1, &mut touched);
            let ids = &self.words[idx].0;
            let mut merged = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    merged.push(out);
                    i += 2;
                } else {
                    merged.push(ids[i]);
                    i += 1;
                }
            }
            self.words[idx].0 = merged;
            self.add_word(idx, 1, &mut touched);
        }
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            let c = self.counts[&p];
            if c > 0 {
                let e = self.entry(p, c);
                self.heap.push(e);
            }
        }
    }
}

impl TokenizerModel {
    /// Learns merges from `texts` until the vocabulary reaches
    /// `options.vocab_size` or no adjacent pair is left. Each text is
    /// pretokenized as the start of a sequence.
    pub fn train<'a, I>(texts: I, options: &TrainOptions) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut units: HashMap<Vec<Sym>, u64> = HashMap::new();
        for text in texts {
            for u in pretokenize(text, true) {
                *units.entry(u).or_insert(0) += 1;
            }
        }
        let chars: HashSet<char> = units
            .keys()
            .flatten()
            .filter_map(|s| match s {
                Sym::Char(c) => Some(*c),
                Sym::Bytes(_) => None,
            })
            .collect();
        let mut model = TokenizerModel::from_parts(&options.control_tokens, chars, &[])?;
        let base = model.vocab_size();
        if options.vocab_size <= base {
            return Err(Error::validation(
                "tokenizer.vocab_size",
                format!(
                    "{} is too small: {} control + 256 byte + {} character tokens need a vocabulary of at least {}",
                    options.vocab_size,
                    options.control_tokens.len(),
                    base - 256 - options.control_tokens.len(),
                    base + 1
                ),
            ));
        }

        let mut sorted: Vec<(Vec<Sym>, u64)> = units.into_iter().collect();
        sorted.sort_unstable();
        let words: Vec<(Vec<u32>, u64)> = sorted
            .into_iter()
            .map(|(syms, n)| {
                let mut ids = Vec::with_capacity(syms.len());
                for s in syms {
                    model.sym_ids(s, &mut ids);
                }
                (ids, n)
            })
            .collect();

        let mut t = Trainer {
            model: &mut model,
            words,
            counts: HashMap::new(),
            occurs: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        let mut touched = HashSet::new();
        for idx in 0..t.words.len() {
            t.add_word(idx, 1, &mut touched);
        }
        let mut initial: Vec<Pair> = touched.into_iter().collect();
        initial.sort_unstable();
        for p in initial {
            let e = t.entry(p, t.counts[&p]);
            t.heap.push(e);
        }

        while t.model.vocab_size() < options.vocab_size {
            let Some((count, Reverse(surface), _, a, b)) = t.heap.pop() else { break };
            if t.counts.get(&(a, b)) != Some(&count)
                || t.model.control_ids.contains_key(&surface)
                || t.model.ranks.contains_key(&(a, b))
            {
                continue;
            }
            let out = t.model.push_merge(a, b)?;
            t.apply((a, b), out);
        }
        debug_assert!(model.tokens.iter().skip(base).all(|t| t.kind == TokenKind::Piece));
        Ok(model)
    }
}
