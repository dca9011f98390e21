//! Runs per-instance work against a prompt cache, in parallel where the
//! result cannot depend on scheduling.

use deskbox_core::cache::{
    schedule, shared_prefixes, Budget, CacheStats, PrefixCache, PromptCache, Uncached,
};
use deskbox_core::model::ModelBackend;
use deskbox_core::TokenSequence;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePlan {
    /// Every prompt runs from scratch.
    Off,
    /// Prefixes shared by two or more prompts are computed once up front;
    /// instances then run concurrently against the frozen cache.
    Shared,
    /// One LRU-bounded cache, with instances processed one at a time in
    /// lexicographic prompt order.
    Bounded(usize),
}

impl CachePlan {
    pub fn new(enabled: bool, max_cached_tokens: Option<usize>) -> Self {
        match (enabled, max_cached_tokens) {
            (false, _) => CachePlan::Off,
            (true, None) => CachePlan::Shared,
            (true, Some(n)) => CachePlan::Bounded(n),
        }
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))
}

/// Calls `work(i, cache)` for every prompt index and returns the results in
/// input order with the combined cache statistics. `work` must prefill
/// `prompts[i]` through the cache it is given.
///
/// Under [`CachePlan::Shared`], tokens computed while warming are counted as
/// computed, and the same tokens are subtracted from the reuse count, so
/// `tokens_computed + tokens_reused` stays equal to the tokens the instances
/// presented.
pub fn run_planned<T, F>(
    backend: &dyn ModelBackend,
    prompts: &[TokenSequence],
    plan: CachePlan,
    workers: Option<usize>,
    work: F,
) -> Result<(Vec<T>, CacheStats)>
where
    T: Send,
    F: Fn(usize, &mut dyn PromptCache) -> deskbox_core::Result<T> + Sync,
{
    let pool = pool(workers)?;
    match plan {
        CachePlan::Off => {
            let results: Vec<(T, CacheStats)> = pool
                .install(|| {
                    (0..prompts.len())
                        .into_par_iter()
                        .map(|i| {
                            let mut cache = Uncached::new();
                            let out = work(i, &mut cache)?;
                            Ok((out, *cache.stats()))
                        })
                        .collect::<deskbox_core::Result<_>>()
                })
                .map_err(Error::runtime)?;
            Ok(merge(results))
        }
        CachePlan::Shared => {
            let mut cache = PrefixCache::new(Budget::unlimited());
            cache
                .warm(backend, &shared_prefixes(prompts))
                .map_err(Error::runtime)?;
            let warm = *cache.stats();
            let results: Vec<(T, CacheStats)> = pool
                .install(|| {
                    (0..prompts.len())
                        .into_par_iter()
                        .map(|i| {
                            let mut view = cache.view();
                            let out = work(i, &mut view)?;
                            Ok((out, view.into_stats()))
                        })
                        .collect::<deskbox_core::Result<_>>()
                })
                .map_err(Error::runtime)?;
            let (outs, mut stats) = merge(results);
            stats.tokens_computed += warm.tokens_computed;
            stats.tokens_reused -= warm.tokens_computed;
            stats.evictions += warm.evictions;
            Ok((outs, stats))
        }
        CachePlan::Bounded(max_tokens) => {
            let mut cache = PrefixCache::new(Budget::tokens(max_tokens));
            let mut slots: Vec<Option<T>> = (0..prompts.len()).map(|_| None).collect();
            for &i in &schedule(prompts).order {
                slots[i] = Some(work(i, &mut cache).map_err(Error::runtime)?);
            }
            let outs = slots
                .into_iter()
                .map(|s| s.expect("every index is scheduled"))
                .collect();
            Ok((outs, *cache.stats()))
        }
    }
}

fn merge<T>(results: Vec<(T, CacheStats)>) -> (Vec<T>, CacheStats) {
    let mut total = CacheStats::default();
    let outs = results
        .into_iter()
        .map(|(o, s)| {
            total += s;
            o
        })
        .collect();
    (outs, total)
}
