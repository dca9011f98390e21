use alloc::vec::Vec;

use super::{Budget, CacheStats, PrefixMatch, PrefixTrie};
use crate::model::{KvState, ModelBackend, StepOutput};
use crate::{Error, Result, TokenId};

/// State after a prompt has been processed.
#[derive(Debug, Clone)]
pub struct Prefilled {
    pub kv: KvState,
    /// Next-token logits after the last prompt token.
    pub logits: Vec<f32>,
}

/// Something that turns prompts into [`Prefilled`] state, possibly reusing
/// earlier work, and accounts the tokens it computed.
pub trait PromptCache {
    /// Processes `prompt` from scratch or from a cached prefix.
    fn prefill(&mut self, backend: &dyn ModelBackend, prompt: &[TokenId]) -> Result<Prefilled>;

    /// Runs `tokens` on top of `kv`; they always count as computed.
    fn extend(
        &mut self,
        backend: &dyn ModelBackend,
        kv: &KvState,
        tokens: &[TokenId],
    ) -> Result<StepOutput> {
        let out = backend.forward_incremental(kv, tokens)?;
        self.stats_mut().tokens_computed += tokens.len() as u64;
        Ok(out)
    }

    fn stats(&self) -> &CacheStats;

    fn stats_mut(&mut self) -> &mut CacheStats;
}

/// Resumes from a lookup result and finishes the prompt on the backend.
fn complete(
    backend: &dyn ModelBackend,
    prompt: &[TokenId],
    found: PrefixMatch,
    stats: &mut CacheStats,
) -> Result<(Prefilled, bool)> {
    if prompt.is_empty() {
        return Err(Error::Length("cannot prefill an empty prompt".into()));
    }
    let PrefixMatch {
        mut matched_len,
        kv,
        logits,
    } = found;
    if matched_len > 0 {
        stats.hits += 1;
    } else {
        stats.misses += 1;
    }
    if matched_len == prompt.len() {
        if let (Some(kv), Some(logits)) = (kv.as_ref(), logits) {
            stats.tokens_reused += matched_len as u64;
            return Ok((
                Prefilled {
                    kv: kv.clone(),
                    logits,
                },
                false,
            ));
        }
        // the match ends at a split point with no logits; redo the last token
        matched_len -= 1;
    }
    let base = match kv {
        Some(mut kv) if matched_len > 0 => {
            kv.truncate(matched_len);
            kv
        }
        _ => backend.empty_state(),
    };
    let out = backend.forward_incremental(&base, &prompt[matched_len..])?;
    stats.tokens_reused += matched_len as u64;
    stats.tokens_computed += (prompt.len() - matched_len) as u64;
    Ok((
        Prefilled {
            logits: out.logits.last().to_vec(),
            kv: out.kv,
        },
        true,
    ))
}

/// Prompt cache backed by a [`PrefixTrie`] with a token budget.
#[derive(Debug, Clone, Default)]
pub struct PrefixCache {
    trie: PrefixTrie,
    budget: Budget,
    stats: CacheStats,
}

impl PrefixCache {
    pub fn new(budget: Budget) -> Self {
        Self {
            trie: PrefixTrie::new(),
            budget,
            stats: CacheStats::default(),
        }
    }

    pub fn trie(&self) -> &PrefixTrie {
        &self.trie
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    /// Prefills each prefix in order so later prompts can reuse it.
    pub fn warm<S: AsRef<[TokenId]>>(
        &mut self,
        backend: &dyn ModelBackend,
        prefixes: &[S],
    ) -> Result<()> {
        for p in prefixes {
            self.prefill(backend, p.as_ref())?;
        }
        Ok(())
    }

    /// A read-only view with its own statistics, for concurrent use once the
    /// cache is warm.
    pub fn view(&self) -> SharedPrefixView<'_> {
        SharedPrefixView::new(&self.trie)
    }
}

impl PromptCache for PrefixCache {
    fn prefill(&mut self, backend: &dyn ModelBackend, prompt: &[TokenId]) -> Result<Prefilled> {
        let found = self.trie.lookup_longest_prefix(prompt);
        let (out, computed) = complete(backend, prompt, found, &mut self.stats)?;
        if computed {
            let evicted =
                self.trie
                    .insert(prompt, &out.kv, Some(out.logits.clone()), self.budget)?;
            self.stats.evictions += evicted as u64;
        }
        Ok(out)
    }

    fn stats(&self) -> &CacheStats {
        &self.stats
    }

    fn stats_mut(&mut self) -> &mut CacheStats {
        &mut self.stats
    }
}

/// Reuses a frozen trie without modifying it.
#[derive(Debug, Clone)]
pub struct SharedPrefixView<'a> {
    trie: &'a PrefixTrie,
    stats: CacheStats,
}

impl<'a> SharedPrefixView<'a> {
    pub fn new(trie: &'a PrefixTrie) -> Self {
        Self {
            trie,
            stats: CacheStats::default(),
        }
    }

    pub fn into_stats(self) -> CacheStats {
        self.stats
    }
}

impl PromptCache for SharedPrefixView<'_> {
    fn prefill(&mut self, backend: &dyn ModelBackend, prompt: &[TokenId]) -> Result<Prefilled> {
        let found = self.trie.peek_longest_prefix(prompt);
        Ok(complete(backend, prompt, found, &mut self.stats)?.0)
    }

    fn stats(&self) -> &CacheStats {
        &self.stats
    }

    fn stats_mut(&mut self) -> &mut CacheStats {
        &mut self.stats
    }
}

/// No reuse at all: every prompt runs through `forward_full`.
#[derive(Debug, Clone, Default)]
pub struct Uncached {
    stats: CacheStats,
}

impl Uncached {
    pub fn new() -> Self {
        Self::default()
    }
}

impl PromptCache for Uncached {
    fn prefill(&mut self, backend: &dyn ModelBackend, prompt: &[TokenId]) -> Result<Prefilled> {
        if prompt.is_empty() {
            return Err(Error::Length("cannot prefill an empty prompt".into()));
        }
        let out = backend.forward_full(prompt)?;
        self.stats.misses += 1;
        self.stats.tokens_computed += prompt.len() as u64;
        Ok(Prefilled {
            logits: out.logits.last().to_vec(),
            kv: out.kv,
        })
    }

    fn stats(&self) -> &CacheStats {
        &self.stats
    }

    fn stats_mut(&mut self) -> &mut CacheStats {
        &mut self.stats
    }
}

/// Prefills every request in the given order through one [`PrefixCache`].
pub fn run_with_cache<S: AsRef<[TokenId]>>(
    backend: &dyn ModelBackend,
    requests: &[S],
    budget: Budget,
) -> Result<(Vec<Prefilled>, CacheStats)> {
    let mut cache = PrefixCache::new(budget);
    let outputs = requests
        .iter()
        .map(|r| cache.prefill(backend, r.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok((outputs, cache.stats))
}
