//! Data ingestion and preprocessing: raw file parsing, binarization, k-core
//! filtering, splitting, negative sampling, vocabulary, and the prepared
//! dataset directory.

pub mod parse;
pub mod prepared;
pub mod preprocess;
pub mod vocab;

pub use parse::{load_interactions, load_items_jsonl, load_triples, tokenize};
pub use parse::{RawInteraction, RawItemText, RawTriple};
pub use prepared::{prepare, Dataset, PrepareConfig, PreparedData, Stats};
pub use preprocess::{binarize, kcore_filter, sample_negatives, split, Example};
pub use vocab::{Vocab, PAD, UNK};
