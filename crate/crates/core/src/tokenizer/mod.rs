//! Byte-fallback BPE over whitespace-bounded words.
//!
//! Spaces are rewritten to the word-begin marker `▁` and a marker is
//! prefixed to text that starts a sequence. Merges never cross a marker or
//! any other whitespace character. Characters without a piece, and literal
//! `▁` in the input, are spelled with the 256 byte tokens so encoding is
//! total and decoding is lossless.
//!
//! Id layout: control tokens, then byte tokens `<0x00>`..`<0xFF>`, then
//! single-character pieces in code-point order, then one id per merge.

mod chat;
mod fertility;
mod io;
mod train;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use chat::{format_chat, pack, read_conversations, ChatSequence, Pack, Role, TurnSpan};
pub use fertility::{
    fertility, FertilityReport, FertilityRow, ALL_LANGUAGES, NO_WHITESPACE_LANGUAGES, UNKNOWN_LANGUAGE,
};
pub use io::TOKENIZER_SCHEMA;
pub use train::TrainOptions;

pub const WORD_BEGIN: char = '\u{2581}';
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const IM_START: &str = "<|im_start|>";
pub const IM_END: &str = "<|im_end|>";
pub const DEFAULT_VOCAB_SIZE: usize = 128_000;

pub fn default_control_tokens() -> Vec<String> {
    [BOS, EOS, IM_START, IM_END].map(String::from).to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Control,
    Byte,
    Piece,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Control => "control",
            TokenKind::Byte => "byte",
            TokenKind::Piece => "piece",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
}

/// A symbol before id lookup: a character that may have a piece, or one
/// that must be spelled in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Sym {
    Char(char),
    Bytes(char),
}

/// Splits text into word-bounded units. Each space becomes a marker that
/// starts a new unit; other whitespace characters stand alone.
fn pretokenize(text: &str, dummy_prefix: bool) -> Vec<Vec<Sym>> {
    let mut out: Vec<Vec<Sym>> = Vec::new();
    let mut cur: Vec<Sym> = Vec::new();
    if dummy_prefix && !text.is_empty() {
        cur.push(Sym::Char(WORD_BEGIN));
    }
    for c in text.chars() {
        if c == ' ' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(Sym::Char(WORD_BEGIN));
        } else if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(vec![Sym::Char(c)]);
        } else if c == WORD_BEGIN {
            cur.push(Sym::Bytes(c));
        } else {
            cur.push(Sym::Char(c));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    tokens: Vec<Token>,
    merges: Vec<(u32, u32)>,
    byte_base: u32,
    piece_ids: HashMap<String, u32>,
    control_ids: HashMap<String, u32>,
    /// (left, right) → (rank, output id).
    ranks: HashMap<(u32, u32), (u32, u32)>,
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges
    }
}

/// Output of [`TokenizerModel::decode_counted`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub text: String,
    /// Invalid UTF-8 sequences replaced by U+FFFD.
    pub replacements: usize,
}

fn validate_controls(controls: &[String]) -> Result<()> {
    for c in controls {
        if c.chars().count() < 2 || c.chars().any(char::is_whitespace) {
            return Err(Error::validation(
                "tokenizer.control_tokens",
                format!("`{c}` must be at least two characters without whitespace"),
            ));
        }
    }
    let mut sorted: Vec<&String> = controls.iter().collect();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("tokenizer.control_tokens", "duplicate control token"));
    }
    for required in [BOS, IM_START, IM_END] {
        if !controls.iter().any(|c| c == required) {
            return Err(Error::validation(
                "tokenizer.control_tokens",
                format!("must include `{required}`"),
            ));
        }
    }
    Ok(())
}

impl TokenizerModel {
    /// Builds a model from control tokens, base characters and a merge list
    /// given as piece surfaces. Base characters are sorted and `▁` is always
    /// included.
    pub fn from_parts(controls: &[String], chars: impl IntoIterator<Item = char>, merges: &[(String, String)]) -> Result<Self> {
        validate_controls(controls)?;
        let mut chars: Vec<char> = chars.into_iter().filter(|&c| c != WORD_BEGIN).collect();
        chars.push(WORD_BEGIN);
        chars.sort_unstable();
        chars.dedup();
        let mut tokens: Vec<Token> = controls
            .iter()
            .map(|c| Token { surface: c.clone(), kind: TokenKind::Control })
            .collect();
        tokens.extend((0..=255u8).map(|b| Token { surface: format!("<0x{b:02X}>"), kind: TokenKind::Byte }));
        tokens.extend(chars.iter().map(|c| Token { surface: c.to_string(), kind: TokenKind::Piece }));
        let mut model = Self::index(tokens, Vec::new())?;
        for (l, r) in merges {
            let (Some(&a), Some(&b)) = (model.piece_ids.get(l), model.piece_ids.get(r)) else {
                return Err(Error::validation(
                    "tokenizer.merges",
                    format!("merge ({l:?}, {r:?}) uses an unknown piece"),
                ));
            };
            model.push_merge(a, b)?;
        }
        Ok(model)
    }

    /// Rebuilds lookup tables from a token table and merge list, checking
    /// the layout invariants.
    fn index(tokens: Vec<Token>, merges: Vec<(u32, u32)>) -> Result<Self> {
        let byte_base = tokens.iter().take_while(|t| t.kind == TokenKind::Control).count();
        let controls: Vec<String> = tokens[..byte_base].iter().map(|t| t.surface.clone()).collect();
        validate_controls(&controls)?;
        for b in 0..256usize {
            let t = tokens.get(byte_base + b);
            if t.map(|t| (t.kind, t.surface.as_str())) != Some((TokenKind::Byte, format!("<0x{b:02X}>").as_str())) {
                return Err(Error::validation(
                    "tokenizer.vocab",
                    format!("byte token <0x{b:02X}> missing at id {}", byte_base + b),
                ));
            }
        }
        let mut piece_ids = HashMap::new();
        for (id, t) in tokens.iter().enumerate().skip(byte_base + 256) {
            if t.kind != TokenKind::Piece {
                return Err(Error::validation(
                    "tokenizer.vocab",
                    format!("id {id}: {} token after the byte block", t.kind.as_str()),
                ));
            }
            if controls.contains(&t.surface) {
                return Err(Error::validation(
                    "tokenizer.vocab",
                    format!("id {id}: piece equals control token {:?}", t.surface),
                ));
            }
            if piece_ids.insert(t.surface.clone(), id as u32).is_some() {
                return Err(Error::validation(
                    "tokenizer.vocab",
                    format!("duplicate piece {:?}", t.surface),
                ));
            }
        }
        let mut model = Self {
            control_ids: controls.into_iter().enumerate().map(|(i, c)| (c, i as u32)).collect(),
            tokens,
            merges: Vec::new(),
            byte_base: byte_base as u32,
            piece_ids,
            ranks: HashMap::new(),
        };
        for (a, b) in merges {
            model.push_merge(a, b)?;
        }
        Ok(model)
    }

    fn is_piece(&self, id: u32) -> bool {
        self.tokens.get(id as usize).is_some_and(|t| t.kind == TokenKind::Piece)
    }

    /// Appends a merge, creating its output piece unless a piece with that
    /// surface already exists.
    fn push_merge(&mut self, a: u32, b: u32) -> Result<u32> {
        if !self.is_piece(a) || !self.is_piece(b) {
            return Err(Error::validation("tokenizer.merges", format!("merge ({a}, {b}) uses a non-piece id")));
        }
        if self.ranks.contains_key(&(a, b)) {
            return Err(Error::validation(
                "tokenizer.merges",
                format!("duplicate merge ({:?}, {:?})", self.tokens[a as usize].surface, self.tokens[b as usize].surface),
            ));
        }
        let surface = format!("{}{}", self.tokens[a as usize].surface, self.tokens[b as usize].surface);
        if self.control_ids.contains_key(&surface) {
            return Err(Error::validation(
                "tokenizer.merges",
                format!("merge produces control token {surface:?}"),
            ));
        }
        let out = match self.piece_ids.get(&surface) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as u32;
                self.tokens.push(Token { surface: surface.clone(), kind: TokenKind::Piece });
                self.piece_ids.insert(surface, id);
                id
            }
        };
        self.ranks.insert((a, b), (self.merges.len() as u32, out));
        self.merges.push((a, b));
        Ok(out)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.merges
            .iter()
            .map(|&(a, b)| (self.tokens[a as usize].surface.as_str(), self.tokens[b as usize].surface.as_str()))
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn control_id(&self, name: &str) -> Option<u32> {
        self.control_ids.get(name).copied()
    }

    pub fn piece_id(&self, surface: &str) -> Option<u32> {
        self.piece_ids.get(surface).copied()
    }

    pub fn byte_id(&self, byte: u8) -> u32 {
        self.byte_base + byte as u32
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    /// The model a training run with this `vocab_size` would have produced:
    /// the first `vocab_size` ids and the merges that created them.
    pub fn truncated(&self, vocab_size: usize) -> Result<Self> {
        let base = self.base_len();
        if vocab_size < base {
            return Err(Error::validation(
                "tokenizer.vocab_size",
                format!("{vocab_size} is below the base inventory of {base}"),
            ));
        }
        if vocab_size >= self.tokens.len() {
            return Ok(self.clone());
        }
        // Replay merges until the vocabulary is full, as training would.
        let mut merges = Vec::new();
        let mut len = base;
        for m in &self.merges {
            if len >= vocab_size {
                break;
            }
            merges.push(*m);
            if self.ranks[m].1 as usize == len {
                len += 1;
            }
        }
        Self::index(self.tokens[..vocab_size].to_vec(), merges)
    }

    /// Control, byte and single-character tokens: the smallest vocabulary
    /// this model can be cut down to.
    pub fn base_len(&self) -> usize {
        self.byte_base as usize
            + 256
            + self
                .tokens
                .iter()
                .filter(|t| t.kind == TokenKind::Piece && t.surface.chars().count() == 1)
                .count()
    }

    fn sym_ids(&self, sym: Sym, out: &mut Vec<u32>) {
        let c = match sym {
            Sym::Char(c) => {
                let mut buf = [0u8; 4];
                if let Some(&id) = self.piece_ids.get(c.encode_utf8(&mut buf) as &str) {
                    out.push(id);
                    return;
                }
                c
            }
            Sym::Bytes(c) => c,
        };
        let mut buf = [0u8; 4];
        out.extend(c.encode_utf8(&mut buf).bytes().map(|b| self.byte_id(b)));
    }

    /// Applies merges by rank: the lowest-ranked adjacent pair is merged at
    /// every non-overlapping occurrence, left to right, until none applies.
    fn apply_merges(&self, ids: &mut Vec<u32>) {
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(r, out)| (r, (w[0], w[1]), out)))
                .min();
            let Some((_, pair, out)) = best else { break };
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
            *ids = merged;
        }
    }

    fn encode_plain(&self, text: &str, dummy_prefix: bool, out: &mut Vec<u32>) {
        for unit in pretokenize(text, dummy_prefix) {
            let mut ids = Vec::with_capacity(unit.len());
            for s in unit {
                self.sym_ids(s, &mut ids);
            }
            self.apply_merges(&mut ids);
            out.extend(ids);
        }
    }

    /// Encodes `text` as the start of a sequence. Control-token surfaces
    /// become control ids only when `allow_control` is set; otherwise they
    /// are ordinary text.
    pub fn encode(&self, text: &str, allow_control: bool) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_into(text, allow_control, true, &mut out);
        out
    }

    /// Encodes text that continues a sequence: no marker is prefixed.
    pub fn encode_continuation(&self, text: &str, allow_control: bool) -> Vec<u32> {
        let mut out = Vec::new();
        self.encode_into(text, allow_control, false, &mut out);
        out
    }

    fn encode_into(&self, text: &str, allow_control: bool, dummy_prefix: bool, out: &mut Vec<u32>) {
        if !allow_control {
            self.encode_plain(text, dummy_prefix, out);
            return;
        }
        // Leftmost-longest scan for control surfaces.
        let mut rest = text;
        let mut at_start = dummy_prefix;
        while !rest.is_empty() {
            let hit = rest
                .char_indices()
                .find_map(|(i, _)| {
                    self.control_ids
                        .iter()
                        .filter(|(s, _)| rest[i..].starts_with(s.as_str()))
                        .max_by_key(|(s, _)| s.len())
                        .map(|(s, &id)| (i, s.len(), id))
                });
            match hit {
                Some((i, len, id)) => {
                    self.encode_plain(&rest[..i], at_start, out);
                    out.push(id);
                    rest = &rest[i + len..];
                }
                None => {
                    self.encode_plain(rest, at_start, out);
                    rest = "";
                }
            }
            at_start = false;
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        self.decode_counted(ids).map(|d| d.text)
    }

    /// Inverse of [`encode`](Self::encode). The marker prefixed to the
    /// first word is dropped; invalid byte sequences become U+FFFD.
    pub fn decode_counted(&self, ids: &[u32]) -> Result<Decoded> {
        let mut bytes = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let t = self.tokens.get(id as usize).ok_or_else(|| {
                Error::validation("ids", format!("unknown token id {id} (vocabulary has {})", self.tokens.len()))
            })?;
            match t.kind {
                TokenKind::Control => bytes.extend_from_slice(t.surface.as_bytes()),
                TokenKind::Byte => bytes.push((id - self.byte_base) as u8),
                TokenKind::Piece => {
                    let mut s = t.surface.as_str();
                    if i == 0 {
                        s = s.strip_prefix(WORD_BEGIN).unwrap_or(s);
                    }
                    for c in s.chars() {
                        let c = if c == WORD_BEGIN { ' ' } else { c };
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        let mut text = String::with_capacity(bytes.len());
        let mut replacements = 0;
        for chunk in bytes.utf8_chunks() {
            text.push_str(chunk.valid());
            if !chunk.invalid().is_empty() {
                text.push(char::REPLACEMENT_CHARACTER);
                replacements += 1;
            }
        }
        Ok(Decoded { text, replacements })
    }
}
