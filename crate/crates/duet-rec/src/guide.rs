//! The guide's chapters as doc pages, one module per chapter, so every
//! fenced code block in `book/` compiles and runs under `cargo test --doc`.
//! The examples can't drift from the library: if an API changes, the book
//! breaks the build.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/local-model.md")]
pub mod local_model {}

#[doc = include_str!("../../../book/src/global-model.md")]
pub mod global_model {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli_guide {}
