use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cache::PromptCache;
use crate::model::{log_softmax, ModelBackend};
use crate::{Error, Result, TokenId};

/// Log-likelihood summary of one candidate completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOption {
    pub option_index: usize,
    /// Sum of log-probabilities of the option tokens, in nats.
    pub sum_logprob: f64,
    pub token_count: usize,
    /// Length of the option text in bytes, when the caller knows it.
    pub byte_count: Option<usize>,
    /// `exp(-sum_logprob / token_count)`.
    pub avg_ppl: f64,
    /// `sum_logprob / token_count`.
    pub normalized_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityScores {
    pub options: Vec<ScoredOption>,
    /// Option with the lowest average perplexity.
    pub chosen: usize,
}

impl PerplexityScores {
    /// Records byte lengths for per-byte normalization.
    pub fn set_byte_counts(&mut self, counts: &[usize]) -> Result<()> {
        if counts.len() != self.options.len() {
            return Err(Error::Contract(format!(
                "{} byte counts for {} options",
                counts.len(),
                self.options.len()
            )));
        }
        for (o, &c) in self.options.iter_mut().zip(counts) {
            o.byte_count = Some(c);
        }
        Ok(())
    }
}

/// Length normalization applied to summed log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PerToken,
    #[default]
    PerByte,
}

fn argmax_f64(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 || i == 0 {
            best = (i, v);
        }
    }
    best.0
}

/// Scores each option as a continuation of `context` and picks the one with
/// the lowest average perplexity (ties to the lowest index).
///
/// The context goes through `cache` once per option, so a trie-backed cache
/// computes it once and every option only pays for its own tokens.
pub fn score_perplexity<S: AsRef<[TokenId]>>(
    backend: &dyn ModelBackend,
    context: &[TokenId],
    options: &[S],
    cache: &mut dyn PromptCache,
) -> Result<PerplexityScores> {
    if options.is_empty() {
        return Err(Error::Contract("at least one option is required".into()));
    }
    if let Some(i) = options.iter().position(|o| o.as_ref().is_empty()) {
        return Err(Error::Contract(format!("option {i} is empty")));
    }
    let max_len = backend.config().max_seq_len;
    for (i, o) in options.iter().enumerate() {
        if context.len() + o.as_ref().len() > max_len {
            return Err(Error::Length(format!(
                "context plus option {i} is {} tokens, over max_seq_len {max_len}",
                context.len() + o.as_ref().len()
            )));
        }
    }

    let mut scored = Vec::with_capacity(options.len());
    for (index, option) in options.iter().enumerate() {
        let option = option.as_ref();
        let start = cache.prefill(backend, context)?;
        let cont = cache.extend(backend, &start.kv, option)?;
        let mut sum = log_softmax(&start.logits)[option[0] as usize];
        for (row, &tok) in cont.logits.rows().zip(&option[1..]) {
            sum += log_softmax(row)[tok as usize];
        }
        let n = option.len();
        scored.push(ScoredOption {
            option_index: index,
            sum_logprob: sum,
            token_count: n,
            byte_count: None,
            avg_ppl: libm::exp(-sum / n as f64),
            normalized_score: sum / n as f64,
        });
    }
    let chosen = argmax_f64(scored.iter().map(|s| -s.avg_ppl));
    Ok(PerplexityScores {
        options: scored,
        chosen,
    })
}

/// Picks the option with the highest length-normalized log-likelihood
/// (ties to the lowest index).
pub fn score_normalized(scored: &[ScoredOption], mode: Normalization) -> Result<usize> {
    if scored.is_empty() {
        return Err(Error::Contract("no options to choose from".into()));
    }
    let mut scores = Vec::with_capacity(scored.len());
    for s in scored {
        let denom = match mode {
            Normalization::PerToken => s.token_count,
            Normalization::PerByte => match s.byte_count {
                Some(b) if b > 0 => b,
                _ => {
                    return Err(Error::Contract(format!(
                        "option {} has no byte count for per-byte normalization",
                        s.option_index
                    )))
                }
            },
        };
        scores.push(s.sum_logprob / denom as f64);
    }
    Ok(argmax_f64(scores.into_iter()))
}
