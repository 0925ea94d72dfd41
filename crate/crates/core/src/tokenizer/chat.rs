use std::fmt;

use serde::{Deserialize, Serialize};

use super::{TokenizerModel, BOS, IM_END, IM_START};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            other => Err(Error::validation("role", format!("unknown role `{other}`"))),
        }
    }
}

/// Token range `[start, end)` of one turn, from its `<|im_start|>` through
/// its `<|im_end|>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSpan {
    pub role: Role,
    pub start: usize,
    pub end: usize,
    /// First token of the turn text, after the role header.
    pub content_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatSequence {
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub turns: Vec<TurnSpan>,
    pub eos_id: u32,
}

impl ChatSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

fn check_roles(turns: &[(Role, String)]) -> Result<()> {
    if turns.is_empty() {
        return Err(Error::validation("conversation", "no turns"));
    }
    let body = match turns[0].0 {
        Role::System => &turns[1..],
        _ => turns,
    };
    for (i, (role, _)) in body.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if *role != expected {
            let at = i + turns.len() - body.len();
            let why = match (i, role) {
                (0, Role::Assistant) => "the first non-system turn must be from the user".to_string(),
                (_, Role::System) => "a system turn may only open the conversation".to_string(),
                _ => format!("two consecutive `{role}` turns"),
            };
            return Err(Error::validation(format!("conversation[{at}].role"), why));
        }
    }
    Ok(())
}

/// Lays out a conversation as `<s>` followed by one
/// `<|im_start|>role\ntext<|im_end|>` block per turn. The loss mask is 1 on
/// assistant text and the `<|im_end|>` closing it, 0 everywhere else. Turn
/// text is encoded without control tokens.
pub fn format_chat(conversation: &[(Role, String)], model: &TokenizerModel) -> Result<ChatSequence> {
    check_roles(conversation)?;
    let control = |name: &str| {
        model
            .control_id(name)
            .ok_or_else(|| Error::Config(format!("tokenizer has no `{name}` control token")))
    };
    let (bos, im_start, im_end) = (control(BOS)?, control(IM_START)?, control(IM_END)?);
    let mut ids = vec![bos];
    let mut mask = vec![0u8];
    let mut turns = Vec::with_capacity(conversation.len());
    for (role, text) in conversation {
        let start = ids.len();
        ids.push(im_start);
        ids.extend(model.encode_continuation(&format!("{role}\n"), false));
        let content_start = ids.len();
        ids.extend(model.encode_continuation(text, false));
        ids.push(im_end);
        let on = u8::from(*role == Role::Assistant);
        mask.resize(content_start, 0);
        mask.resize(ids.len(), on);
        turns.push(TurnSpan { role: *role, start, end: ids.len(), content_start });
    }
    Ok(ChatSequence { token_ids: ids, loss_mask: mask, turns, eos_id: im_end })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Message {
    role: Role,
    content: String,
}

/// Reads conversations, one JSON array of `{"role", "content"}` objects per
/// line.
pub fn read_conversations(path: &std::path::Path) -> Result<Vec<Vec<(Role, String)>>> {
    let convs: Vec<Vec<Message>> = crate::corpus::read_json_lines(path)?;
    Ok(convs
        .into_iter()
        .map(|c| c.into_iter().map(|m| (m.role, m.content)).collect())
        .collect())
}

/// Several examples concatenated into one training sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pack {
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    /// Start offset of each example; the next example's start ends it.
    pub boundaries: Vec<usize>,
    /// Index of each example in the input.
    pub examples: Vec<usize>,
}

impl Pack {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// First-fit-decreasing packing into sequences of at most `max_len` tokens.
/// Longer examples are cut to `max_len` when `truncate` is set and rejected
/// otherwise. Equal lengths keep input order.
pub fn pack(sequences: &[ChatSequence], max_len: usize, truncate: bool) -> Result<Vec<Pack>> {
    if max_len == 0 {
        return Err(Error::validation("max_len", "must be positive"));
    }
    if !truncate {
        if let Some((i, s)) = sequences.iter().enumerate().find(|(_, s)| s.len() > max_len) {
            return Err(Error::validation(
                "max_len",
                format!("sequence {i} has {} tokens, more than {max_len}, and truncation is off", s.len()),
            ));
        }
    }
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(sequences[i].len().min(max_len)));
    let mut packs: Vec<Pack> = Vec::new();
    for i in order {
        let s = &sequences[i];
        let n = s.len().min(max_len);
        let slot = match packs.iter().position(|p| p.len() + n <= max_len) {
            Some(k) => k,
            None => {
                packs.push(Pack { token_ids: Vec::new(), loss_mask: Vec::new(), boundaries: Vec::new(), examples: Vec::new() });
                packs.len() - 1
            }
        };
        let p = &mut packs[slot];
        p.boundaries.push(p.token_ids.len());
        p.examples.push(i);
        p.token_ids.extend_from_slice(&s.token_ids[..n]);
        p.loss_mask.extend_from_slice(&s.loss_mask[..n]);
    }
    Ok(packs)
}
