//! Autoregressive backend contract and the reference toy transformer.

mod kv;
mod stub;
mod toy;

pub use kv::{KvState, LayerKv};
pub use stub::{CountingBackend, ScriptedBackend, UniformBackend};
pub use toy::ToyTransformer;

use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, TokenId};

/// Absolute tolerance on logits when comparing cached and uncached paths.
pub const LOGIT_TOLERANCE: f32 = 1e-5;

/// Shape and seed of a decoder-only model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// The default test configuration: v=64, l=2, h=32, heads=4, s=256.
    pub const fn small(seed: u64) -> Self {
        Self {
            vocab_size: 64,
            num_layers: 2,
            hidden_size: 32,
            num_heads: 4,
            max_seq_len: 256,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        if self.num_heads == 0
            || self.hidden_size == 0
            || !self.hidden_size.is_multiple_of(self.num_heads)
        {
            return Err(Error::Config(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

/// Row-major logits, one row of `vocab` entries per position.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    vocab: usize,
    data: Vec<f32>,
}

impl Logits {
    pub fn new(vocab: usize, data: Vec<f32>) -> Self {
        debug_assert!(vocab > 0 && data.len().is_multiple_of(vocab));
        Self { vocab, data }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Number of positions.
    pub fn len(&self) -> usize {
        self.data.len() / self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, position: usize) -> &[f32] {
        &self.data[position * self.vocab..(position + 1) * self.vocab]
    }

    pub fn last(&self) -> &[f32] {
        self.row(self.len() - 1)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.vocab)
    }
}

/// Result of a forward pass: logits for each processed position and the
/// key/value state covering every position seen so far.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Logits,
    pub kv: KvState,
}

/// An autoregressive model.
///
/// Implementations are immutable once built and may serve concurrent forward
/// passes. Key/value state is owned by the caller.
pub trait ModelBackend: Send + Sync {
    fn config(&self) -> &ModelConfig;

    /// State covering zero positions.
    fn empty_state(&self) -> KvState {
        let cfg = self.config();
        KvState::empty(cfg.num_layers, cfg.hidden_size)
    }

    /// Runs the whole sequence from scratch. Logits are returned for every
    /// position.
    fn forward_full(&self, tokens: &[TokenId]) -> Result<StepOutput>;

    /// Resumes from `cached` and processes `new_tokens`. Logits are returned
    /// for each new position; the returned state covers the concatenation.
    fn forward_incremental(&self, cached: &KvState, new_tokens: &[TokenId]) -> Result<StepOutput>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn config(&self) -> &ModelConfig {
        (**self).config()
    }
    fn empty_state(&self) -> KvState {
        (**self).empty_state()
    }
    fn forward_full(&self, tokens: &[TokenId]) -> Result<StepOutput> {
        (**self).forward_full(tokens)
    }
    fn forward_incremental(&self, cached: &KvState, new_tokens: &[TokenId]) -> Result<StepOutput> {
        (**self).forward_incremental(cached, new_tokens)
    }
}

/// Builds the seeded toy transformer.
pub fn build_toy_model(config: ModelConfig) -> Result<ToyTransformer> {
    ToyTransformer::new(config)
}

/// Shared argument checks for backends.
pub(crate) fn check_tokens(cfg: &ModelConfig, already: usize, tokens: &[TokenId]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Length(
            "cannot run a forward pass over zero tokens".into(),
        ));
    }
    let total = already + tokens.len();
    if total > cfg.max_seq_len {
        return Err(Error::Length(format!(
            "sequence of {total} tokens exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    if let Some(bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Contract(format!(
            "token id {bad} out of range for vocab_size {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Log-softmax computed in f64.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &l| m.max(l as f64));
    let sum: f64 = logits.iter().map(|&l| libm::exp(l as f64 - max)).sum();
    let lse = max + libm::log(sum);
    logits.iter().map(|&l| l as f64 - lse).collect()
}

/// Softmax of `logits / temperature`, computed in f64.
pub fn softmax(logits: &[f32], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &l| m.max(l as f64));
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&l| libm::exp((l as f64 - max) / temperature))
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
