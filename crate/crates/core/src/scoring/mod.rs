//! Evaluation mechanisms: free-form generation, completion perplexity and
//! option-letter probability, plus self-consistency voting and metrics.

mod decoding;
mod letter;
mod metrics;
mod perplexity;
mod vote;

pub use decoding::{
    apply_repetition_penalty, filter_top_p, generate, DecodeStrategy, GenerationConfig,
};
pub use letter::{score_option_letter, LetterChoice};
pub use metrics::{compute_metrics, normalize_answer, Answer, Metric};
pub use perplexity::{
    score_normalized, score_perplexity, Normalization, PerplexityScores, ScoredOption,
};
pub use vote::{aggregate_self_consistency, last_number};
