//! Text artifact: a schema line, a `[vocab]` table of `id, surface, type`
//! rows and a `[merges]` list of `left, right` rows, tab-separated. Tabs,
//! newlines, carriage returns and backslashes in surfaces are escaped.

use std::fs;
use std::path::Path;

use super::{Token, TokenKind, TokenizerModel};
use crate::error::{Error, Result};

pub const TOKENIZER_SCHEMA: &str = "polyplan.tokenizer/1";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match it.next() {
            Some('\\') => '\\',
            Some('t') => '\t',
            Some('n') => '\n',
            Some('r') => '\r',
            other => {
                return Err(Error::parse(
                    format!("tokenizer line {line}"),
                    format!("bad escape \\{}", other.map(String::from).unwrap_or_default()),
                ))
            }
        });
    }
    Ok(out)
}

impl TokenizerModel {
    pub fn to_text(&self) -> String {
        let mut out = format!("{TOKENIZER_SCHEMA}\n[vocab]\n");
        for (id, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{id}\t{}\t{}\n", escape(&t.surface), t.kind.as_str()));
        }
        out.push_str("[merges]\n");
        for (l, r) in self.merges() {
            out.push_str(&format!("{}\t{}\n", escape(l), escape(r)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, msg: String| Error::parse(format!("tokenizer line {line}"), msg);
        match lines.next() {
            Some((_, TOKENIZER_SCHEMA)) => {}
            Some((n, other)) => return Err(bad(n, format!("expected `{TOKENIZER_SCHEMA}`, found `{other}`"))),
            None => unreachable!("split yields at least one item"),
        }
        match lines.next() {
            Some((_, "[vocab]")) => {}
            _ => return Err(bad(2, "expected `[vocab]`".into())),
        }
        let mut tokens = Vec::new();
        let mut in_merges = false;
        let mut surfaces: Vec<(String, String)> = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            if !in_merges && line == "[merges]" {
                in_merges = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if in_merges {
                let [l, r] = fields[..] else {
                    return Err(bad(n, "merge rows have two fields".into()));
                };
                surfaces.push((unescape(l, n)?, unescape(r, n)?));
            } else {
                let [id, surface, kind] = fields[..] else {
                    return Err(bad(n, "vocab rows have three fields".into()));
                };
                let id: usize = id.parse().map_err(|e| bad(n, format!("id: {e}")))?;
                if id != tokens.len() {
                    return Err(bad(n, format!("expected id {}, found {id}", tokens.len())));
                }
                let kind = match kind {
                    "control" => TokenKind::Control,
                    "byte" => TokenKind::Byte,
                    "piece" => TokenKind::Piece,
                    other => return Err(bad(n, format!("unknown token type `{other}`"))),
                };
                tokens.push(Token { surface: unescape(surface, n)?, kind });
            }
        }
        let len = tokens.len();
        let mut model = TokenizerModel::index(tokens, Vec::new())?;
        for (l, r) in &surfaces {
            let (Some(a), Some(b)) = (model.piece_id(l), model.piece_id(r)) else {
                return Err(Error::validation(
                    "tokenizer.merges",
                    format!("merge ({l:?}, {r:?}) uses an unknown piece"),
                ));
            };
            model.push_merge(a, b)?;
            if model.vocab_size() != len {
                return Err(Error::validation(
                    "tokenizer.merges",
                    format!("merge ({l:?}, {r:?}) produces a piece missing from the vocabulary"),
                ));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TrainOptions;

    #[test]
    fn artifact_round_trips() {
        let corpus = ["tab\there back\\slash\r\nnew line", "plain words and more words"];
        let m = TokenizerModel::train(corpus, &TrainOptions { vocab_size: 320, ..TrainOptions::default() }).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("polyplan.tokenizer/1\n[vocab]\n0\t<s>\tcontrol\n"));
        let back = TokenizerModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.encode("tab\there", false), m.encode("tab\there", false));
    }

    #[test]
    fn corrupt_artifacts_are_rejected() {
        let m = TokenizerModel::train(["ab ab"], &TrainOptions { vocab_size: 300, ..TrainOptions::default() }).unwrap();
        let text = m.to_text();
        assert!(TokenizerModel::from_text(&text.replacen("<0x41>", "<0x42>", 1)).is_err());
        assert!(TokenizerModel::from_text(&text.replace("[merges]\n", "[merges]\nq\tz\n")).is_err());
        assert!(TokenizerModel::from_text("bogus").is_err());
        let dropped_piece = text.replace("\t\u{2581}ab\tpiece\n", "\tzz\tpiece\n");
        assert!(TokenizerModel::from_text(&dropped_piece).is_err());
    }
}
