//! Evaluation runs, data packing and GPU memory estimation built on
//! `deskbox-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod pack;
pub mod plan;
pub mod report;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{run_eval, run_eval_with};
pub use report::RunReport;
