use alloc::string::String;
use alloc::vec::Vec;

use crate::TokenId;

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<TokenId>;
    /// `None` when the tokens do not decode to valid text.
    fn decode(&self, tokens: &[TokenId]) -> Option<String>;
    fn vocab_size(&self) -> usize;
}

/// One token per UTF-8 byte; token id equals the byte value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        text.bytes().map(TokenId::from).collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> Option<String> {
        let bytes = tokens
            .iter()
            .map(|&t| u8::try_from(t).ok())
            .collect::<Option<Vec<u8>>>()?;
        String::from_utf8(bytes).ok()
    }

    fn vocab_size(&self) -> usize {
        256
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = ByteTokenizer;
        let s = "Question: 2+2?\nAnswer: 4 ≈ ü";
        assert_eq!(t.decode(&t.encode(s)).as_deref(), Some(s));
        assert_eq!(t.decode(&[300]), None);
    }
}
