//! Dataset records, prompt templates, few-shot selection and instance
//! formatting.
//!
//! Parsing files is left to the caller (see the `deskbox` crate); this module
//! validates already-parsed records against a [`DatasetSchema`] and turns
//! them into [`EvalInstance`]s whose few-shot prefix is token-identical
//! across a run.

mod format;
mod record;
mod tokenizer;

pub use format::{
    select_fewshot, EvalInstance, InstanceFormatter, InstanceOptions, PromptTemplate,
};
pub use record::{check_unique_ids, DatasetSchema, EvalMode, FieldValue, RawExample, Split};
pub use tokenizer::{ByteTokenizer, Tokenizer};
