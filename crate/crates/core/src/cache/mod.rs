//! Two-level prefix caching.
//!
//! Level one shares the state of a few-shot prefix across every instance of
//! a run; level two shares the state of one context across its candidate
//! continuations. Both fall out of one [`PrefixTrie`]: prompts are prefilled
//! through a [`PromptCache`], which reuses the longest cached prefix and only
//! runs the backend on the remainder.

mod schedule;
mod session;
mod trie;

pub use schedule::{schedule, shared_prefixes, Schedule};
pub use session::{
    run_with_cache, Prefilled, PrefixCache, PromptCache, SharedPrefixView, Uncached,
};
pub use trie::{Budget, NodeId, NodeInfo, PrefixMatch, PrefixTrie};

use serde::{Deserialize, Serialize};

/// Token accounting for a cached run.
///
/// `tokens_computed + tokens_reused` always equals the number of prompt
/// tokens presented to the cache.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub tokens_computed: u64,
    pub tokens_reused: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl CacheStats {
    pub fn tokens_presented(&self) -> u64 {
        self.tokens_computed + self.tokens_reused
    }

    /// Fraction of presented tokens that were computed; 0 for an empty run.
    pub fn computed_fraction(&self) -> f64 {
        match self.tokens_presented() {
            0 => 0.0,
            n => self.tokens_computed as f64 / n as f64,
        }
    }
}

impl core::ops::AddAssign for CacheStats {
    fn add_assign(&mut self, rhs: Self) {
        self.tokens_computed += rhs.tokens_computed;
        self.tokens_reused += rhs.tokens_reused;
        self.hits += rhs.hits;
        self.misses += rhs.misses;
        self.evictions += rhs.evictions;
    }
}

impl core::ops::Add for CacheStats {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}
