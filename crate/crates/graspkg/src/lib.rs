//! File formats, experiment pipelines and the `graspkg` command-line tool
//! built on [`graspkg_core`].
//!
//! - [`layout`]: dataset directories, point-cloud text files, word vectors.
//! - [`votes`]: crowd vote and gold-answer CSV files.
//! - [`config`]: flat `key=value` run configuration with a stable hash.
//! - [`pipeline`]: cross-validation, single-fold training and evaluation,
//!   versioned JSON reports.
//! - [`cli`]: subcommand grammar and handlers.

pub mod cli;
pub mod config;
pub mod error;
pub mod layout;
pub mod pipeline;
pub mod votes;

pub use error::{Error, Result};
