use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, TokenId, TokenSequence};

/// A run of tokens in a block that came from one source item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    /// Index of the source document or conversation.
    pub source: usize,
}

/// A block of at most `max_len` tokens. `tokens.len() + pad_count` is the
/// block capacity; padding is not materialized in `tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedBlock {
    pub tokens: TokenSequence,
    pub segments: Vec<Segment>,
    pub pad_count: usize,
}

impl PackedBlock {
    fn new() -> Self {
        Self {
            tokens: Vec::new(),
            segments: Vec::new(),
            pad_count: 0,
        }
    }

    fn push(&mut self, tokens: &[TokenId], source: usize) {
        if tokens.is_empty() {
            return;
        }
        let start = self.tokens.len();
        self.tokens.extend_from_slice(tokens);
        match self.segments.last_mut() {
            Some(s) if s.source == source && s.end == start => s.end += tokens.len(),
            _ => self.segments.push(Segment {
                start,
                end: self.tokens.len(),
                source,
            }),
        }
    }
}

/// Concatenates the documents with `separator` between consecutive ones and
/// cuts the stream into `max_len` blocks. A separator belongs to the
/// segment of the document before it. The trailing partial block is kept
/// unless `drop_last` is set.
pub fn pack_pretrain<S: AsRef<[TokenId]>>(
    docs: &[S],
    max_len: usize,
    separator: TokenId,
    drop_last: bool,
) -> Result<Vec<PackedBlock>> {
    if max_len < 2 {
        return Err(Error::Config(format!(
            "max_len must be >= 2, got {max_len}"
        )));
    }
    let mut blocks = Vec::new();
    let mut current = PackedBlock::new();
    let mut emit = |mut slice: &[TokenId], source: usize, current: &mut PackedBlock| {
        while !slice.is_empty() {
            let room = max_len - current.tokens.len();
            let take = room.min(slice.len());
            current.push(&slice[..take], source);
            slice = &slice[take..];
            if current.tokens.len() == max_len {
                blocks.push(core::mem::replace(current, PackedBlock::new()));
            }
        }
    };
    for (i, doc) in docs.iter().enumerate() {
        emit(doc.as_ref(), i, &mut current);
        if i + 1 < docs.len() {
            emit(&[separator], i, &mut current);
        }
    }
    if !current.tokens.is_empty() && !drop_last {
        current.pad_count = max_len - current.tokens.len();
        blocks.push(current);
    }
    Ok(blocks)
}

/// Indices of conversations longer than `max_len`.
pub fn oversize<S: AsRef<[TokenId]>>(conversations: &[S], max_len: usize) -> Vec<usize> {
    conversations
        .iter()
        .enumerate()
        .filter(|(_, c)| c.as_ref().len() > max_len)
        .map(|(i, _)| i)
        .collect()
}

/// Padding needed when every conversation gets its own block.
pub fn naive_padding<S: AsRef<[TokenId]>>(conversations: &[S], max_len: usize) -> usize {
    conversations
        .iter()
        .map(|c| max_len.saturating_sub(c.as_ref().len()))
        .sum()
}

/// First-fit-decreasing packing of whole conversations into blocks of
/// `max_len` tokens. Longer conversations go first (ties by input order);
/// each lands in the first block with room. Conversations are never split.
pub fn pack_instructions<S: AsRef<[TokenId]>>(
    conversations: &[S],
    max_len: usize,
) -> Result<Vec<PackedBlock>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be >= 1".into()));
    }
    let too_long = oversize(conversations, max_len);
    if !too_long.is_empty() {
        let list: Vec<String> = too_long
            .iter()
            .map(|&i| format!("#{i} ({} tokens)", conversations[i].as_ref().len()))
            .collect();
        return Err(Error::Rejected(format!(
            "conversations longer than max_len {max_len}: {}",
            list.join(", ")
        )));
    }
    if let Some(i) = conversations.iter().position(|c| c.as_ref().is_empty()) {
        return Err(Error::Rejected(format!("conversation #{i} is empty")));
    }
    let mut order: Vec<usize> = (0..conversations.len()).collect();
    order.sort_by(|&a, &b| {
        conversations[b]
            .as_ref()
            .len()
            .cmp(&conversations[a].as_ref().len())
            .then(a.cmp(&b))
    });
    let mut blocks: Vec<PackedBlock> = Vec::new();
    for i in order {
        let conv = conversations[i].as_ref();
        let slot = blocks
            .iter()
            .position(|b| b.tokens.len() + conv.len() <= max_len);
        let block = match slot {
            Some(s) => &mut blocks[s],
            None => {
                blocks.push(PackedBlock::new());
                blocks.last_mut().expect("just pushed")
            }
        };
        block.push(conv, i);
    }
    for b in &mut blocks {
        b.pad_count = max_len - b.tokens.len();
    }
    Ok(blocks)
}
