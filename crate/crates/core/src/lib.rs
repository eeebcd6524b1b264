//! Graph-to-sequence encoding for text-attributed graphs.
//!
//! A [`graph::GraphStore`] is turned into fixed-shape embedding sequences by
//! one of two templates: the neighborhood-detail template ([`nd`]), which
//! lays out a sampled computational tree with Laplacian positional columns
//! ([`laplacian`]), or the hop-field overview template ([`ho`]), which
//! stacks parameter-free neighbor means. A [`projector`] maps sequence rows
//! into a token-embedding space, [`prompt`] and [`tasks`] assemble
//! instruction prompts around them, and [`trainer`] aligns the projector
//! against a frozen mock decoder. [`seqfile`] and [`cli`] handle
//! serialization and the command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod ho;
pub mod laplacian;
pub mod linalg;
pub mod nd;
pub mod par;
pub mod pipeline;
pub mod projector;
pub mod prompt;
pub mod rng;
pub mod seqfile;
pub mod sequence;
pub mod synth;
pub mod tasks;
pub mod trainer;

mod binio;

pub use error::{Error, Result};
pub use graph::{FeatureMatrix, GraphStore, NodeId};
pub use par::Executor;
pub use sequence::EmbeddingSequence;
