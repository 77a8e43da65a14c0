//! Knowledgeable verbalizer engine for prompt-based text classification.
//!
//! Label words are expanded from external knowledge ([`kbstore`]), scored at
//! the masked position by a frozen language model or the synthetic generator
//! ([`scorer`]), pruned and calibrated on an unlabeled support set
//! ([`refine`]), and mapped to labels by averaging or by trained per-word
//! weights ([`predict`], [`train`]). [`pipeline`] wires these into zero-shot
//! and few-shot runs and [`eval`] aggregates the results.

pub mod error;
pub mod eval;
pub mod exec;
pub mod kbstore;
pub mod pipeline;
pub mod predict;
pub mod refine;
pub mod scorer;
pub mod train;

pub use error::{KptError, Result};
pub use exec::Execution;
pub use kbstore::{ClassSpec, KnowledgeGraph, LabelWord, SourceKind, Verbalizer};
pub use predict::VerbalizerWeights;
pub use scorer::{ScoreManifest, ScoreMatrix, WordScoreMatrix};
