//! Masked-position score sources and the piece-to-word collapse.

pub mod dataset;
pub mod matrix;
pub mod synthetic;
pub mod template;
pub mod words;

pub use dataset::{gold_labels, load_dataset, parse_dataset, Instance};
pub use matrix::{load_score_matrix, ManifestWord, ScoreManifest, ScoreMatrix};
pub use synthetic::{
    synthetic_context_free, synthetic_scores, synthetic_scores_for_labels, PlantedTask, SyntheticConfig, SyntheticTask,
};
pub use template::{default_templates, load_template_registry, Template};
pub use words::{bind, restrict_single_token, word_scores, word_scores_with, SingleTokenRestriction, WordScoreMatrix};
