//! A duet recommender: a text-based local model and a knowledge-graph-based
//! global model, trained jointly on click data and fused into one
//! probability.
//!
//! The crate is organized bottom-up:
//!
//! - [`numkit`]: tensors, a per-batch gradient tape, Adam, checkpoints.
//! - [`dataio`]: raw TSV parsing, k-core filtering, splits, vocabulary.
//! - [`localmodel`]: text-CNN item encoder and attention over history.
//! - [`globalmodel`]: unified relation graph, TransR, neighbor aggregation.
//! - [`duet`]: fusion head, alternating training loop.
//! - [`evalkit`]: AUC/MAE/RMSE/F1 and report files.
//! - [`synth`]: synthetic corpus generator with a known Bayes optimum.
//! - [`cli`]: the `duet` binary's subcommands.
//! - [`guide`]: the book's chapters, doctested against this crate.

pub mod cli;
pub mod dataio;
pub mod duet;
pub mod error;
pub mod evalkit;
pub mod globalmodel;
pub mod guide;
pub mod layers;
pub mod localmodel;
pub mod numkit;
pub mod seeds;
pub mod synth;

pub use cli::cli_main;
pub use error::{Error, Result};
