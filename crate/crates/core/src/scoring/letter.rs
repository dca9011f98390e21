use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cache::PromptCache;
use crate::model::{argmax, ModelBackend};
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterChoice {
    pub chosen: usize,
    /// Next-token logit of each option letter.
    pub letter_logits: Vec<f32>,
}

/// Chooses the option letter with the highest next-token logit after a
/// prompt that lists every option. Ties go to the lowest index.
pub fn score_option_letter(
    backend: &dyn ModelBackend,
    prompt: &[TokenId],
    letter_tokens: &[TokenId],
    cache: &mut dyn PromptCache,
) -> Result<LetterChoice> {
    if letter_tokens.is_empty() {
        return Err(Error::Contract("no option letters given".into()));
    }
    for (i, t) in letter_tokens.iter().enumerate() {
        if letter_tokens[..i].contains(t) {
            return Err(Error::Contract(format!(
                "letter token {t} appears more than once"
            )));
        }
        if *t as usize >= backend.config().vocab_size {
            return Err(Error::Contract(format!(
                "letter token {t} is outside the vocabulary"
            )));
        }
    }
    let state = cache.prefill(backend, prompt)?;
    let letter_logits: Vec<f32> = letter_tokens
        .iter()
        .map(|&t| state.logits[t as usize])
        .collect();
    Ok(LetterChoice {
        chosen: argmax(&letter_logits),
        letter_logits,
    })
}
