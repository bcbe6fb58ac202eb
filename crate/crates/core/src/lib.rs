//! Fragment-level embeddings for bidirectional image-sentence retrieval.
//!
//! Images are sets of object feature vectors and sentences are sets of
//! dependency triplets. Both are embedded into a shared space where fragment
//! inner products are scores; training combines a fragment alignment
//! objective (optionally with multiple-instance label inference) with a
//! global image-sentence ranking objective.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod objective;
pub mod optim;
pub mod words;

pub use error::{Error, Result};
pub use model::{Corpus, CorpusItem, Dims, ImageFragment, ModelParams, Pair, RelationVocab, SentenceFragment};
pub use objective::{Labels, ObjectiveConfig, ObjectiveMode};
pub use optim::TrainConfig;
pub use words::WordTable;
