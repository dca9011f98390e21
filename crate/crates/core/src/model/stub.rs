//! Backends used as test doubles and instrumentation.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::{check_tokens, KvState, Logits, ModelBackend, ModelConfig, StepOutput};
use crate::{Result, TokenId};

/// Backend whose logits are all zero: every token is equally likely.
#[derive(Debug, Clone)]
pub struct UniformBackend {
    config: ModelConfig,
}

impl UniformBackend {
    pub fn new(vocab_size: usize, max_seq_len: usize) -> Self {
        Self {
            config: ModelConfig {
                vocab_size,
                num_layers: 1,
                hidden_size: 1,
                num_heads: 1,
                max_seq_len,
                seed: 0,
            },
        }
    }
}

impl ModelBackend for UniformBackend {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn empty_state(&self) -> KvState {
        KvState::empty(1, 0)
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<StepOutput> {
        self.forward_incremental(&self.empty_state(), tokens)
    }

    fn forward_incremental(&self, cached: &KvState, new_tokens: &[TokenId]) -> Result<StepOutput> {
        cached.check_shape(1, 0)?;
        check_tokens(&self.config, cached.len(), new_tokens)?;
        let mut kv = cached.clone();
        kv.set_len(cached.len() + new_tokens.len());
        Ok(StepOutput {
            logits: Logits::new(
                self.config.vocab_size,
                alloc::vec![0.0; new_tokens.len() * self.config.vocab_size],
            ),
            kv,
        })
    }
}

type LogitFn = dyn Fn(&[TokenId]) -> Vec<f32> + Send + Sync;

/// Backend whose next-token logits are an arbitrary function of the history.
///
/// The key/value state stores the token ids themselves (one layer, width 1),
/// which is exactly what the logit function needs to resume.
pub struct ScriptedBackend {
    config: ModelConfig,
    logits: Box<LogitFn>,
}

impl ScriptedBackend {
    pub fn new<F>(vocab_size: usize, max_seq_len: usize, logits: F) -> Self
    where
        F: Fn(&[TokenId]) -> Vec<f32> + Send + Sync + 'static,
    {
        Self {
            config: ModelConfig {
                vocab_size,
                num_layers: 1,
                hidden_size: 1,
                num_heads: 1,
                max_seq_len,
                seed: 0,
            },
            logits: Box::new(logits),
        }
    }
}

impl core::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("config", &self.config)
            .finish()
    }
}

impl ModelBackend for ScriptedBackend {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<StepOutput> {
        self.forward_incremental(&self.empty_state(), tokens)
    }

    fn forward_incremental(&self, cached: &KvState, new_tokens: &[TokenId]) -> Result<StepOutput> {
        cached.check_shape(1, 1)?;
        check_tokens(&self.config, cached.len(), new_tokens)?;
        let mut history: Vec<TokenId> =
            cached.layer(0).keys.iter().map(|&k| k as TokenId).collect();
        let mut kv = cached.clone();
        let mut out = Vec::with_capacity(new_tokens.len() * self.config.vocab_size);
        for &tok in new_tokens {
            history.push(tok);
            kv.push_position(0, &[tok as f32], &[0.0]);
            let row = (self.logits)(&history);
            assert_eq!(
                row.len(),
                self.config.vocab_size,
                "scripted logits have wrong width"
            );
            out.extend_from_slice(&row);
        }
        kv.set_len(history.len());
        Ok(StepOutput {
            logits: Logits::new(self.config.vocab_size, out),
            kv,
        })
    }
}

/// Wraps a backend and counts every token pushed through a forward pass.
#[derive(Debug)]
pub struct CountingBackend<B> {
    inner: B,
    tokens: AtomicUsize,
    calls: AtomicUsize,
}

impl<B: ModelBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            tokens: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// Tokens processed since construction or the last reset.
    pub fn tokens(&self) -> usize {
        self.tokens.load(Ordering::Relaxed)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.tokens.store(0, Ordering::Relaxed);
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ModelBackend> ModelBackend for CountingBackend<B> {
    fn config(&self) -> &ModelConfig {
        self.inner.config()
    }

    fn empty_state(&self) -> KvState {
        self.inner.empty_state()
    }

    fn forward_full(&self, tokens: &[TokenId]) -> Result<StepOutput> {
        let out = self.inner.forward_full(tokens)?;
        self.tokens.fetch_add(tokens.len(), Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }

    fn forward_incremental(&self, cached: &KvState, new_tokens: &[TokenId]) -> Result<StepOutput> {
        let out = self.inner.forward_incremental(cached, new_tokens)?;
        self.tokens.fetch_add(new_tokens.len(), Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(out)
    }
}
