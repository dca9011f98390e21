//! Core algorithms for deskbox, a desk-scale LLM evaluation engine and
//! training-data toolkit.
//!
//! This crate is `no_std` (it needs `alloc`). Everything that touches the
//! filesystem, threads or the command line lives in the `deskbox` crate.
//!
//! - [`model`]: the backend contract and a deterministic toy decoder-only
//!   transformer with incremental decoding.
//! - [`cache`]: radix-trie prefix cache over key/value state, request
//!   scheduling and token accounting.
//! - [`scoring`]: generation, perplexity and option-letter scoring,
//!   self-consistency voting and metrics.
//! - [`dataset`]: example records, prompt templates, few-shot selection and
//!   instance formatting.
//! - [`packing`]: pre-training and instruction packing, mixture sampling.
//! - [`memory`]: per-GPU training memory estimate and minimum-GPU search.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cache;
pub mod dataset;
mod error;
pub mod memory;
pub mod model;
pub mod packing;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};

/// A token id. Valid ids lie in `[0, vocab_size)` of the backend they are fed to.
pub type TokenId = u32;

/// An ordered list of token ids.
pub type TokenSequence = alloc::vec::Vec<TokenId>;
