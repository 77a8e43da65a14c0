use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KptError>;

#[derive(Debug, Error)]
pub enum KptError {
    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("source {0} contains no entries")]
    EmptySource(PathBuf),

    #[error("malformed line {0}")]
    MalformedLine(usize),

    #[error("duplicate edge {source_word} -> {target} at line {line}")]
    DuplicateEdge {
        source_word: String,
        target: String,
        line: usize,
    },

    #[error("word {0:?} appears in both the positive and the negative lexicon")]
    ConflictingPolarity(String),

    #[error("class name {0:?} is used by more than one class")]
    AmbiguousClassName(String),

    #[error("invalid class specification: {0}")]
    InvalidClassSpec(String),

    #[error("no {0} source loaded for a class that requires it")]
    MissingSource(&'static str),

    #[error("invalid verbalizer: {0}")]
    InvalidVerbalizer(String),

    #[error("invalid template {id:?}: {reason}")]
    InvalidTemplate { id: String, reason: String },

    #[error("template {0:?} needs text_b but the instance has none")]
    MissingTextB(String),

    #[error("invalid instance at line {line}: {reason}")]
    InvalidInstance { line: usize, reason: String },

    #[error("bad magic bytes in score matrix (expected KPTS)")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("score matrix payload truncated: expected {expected} values, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("score matrix has {0} trailing bytes after the payload")]
    TrailingBytes(usize),

    #[error("score at ({0}, {1}) is outside (0, 1]")]
    OutOfRange(usize, usize),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("word {0:?} is missing from the score manifest")]
    MissingWord(String),

    #[error("class {0:?} has no words left after the single-token filter")]
    EmptyClassAfterFilter(String),

    #[error("support set is empty")]
    EmptySupport,

    #[error("relevance profile is a zero vector")]
    DegenerateProfile,

    #[error("prior entry {0} is not strictly positive")]
    DegeneratePrior(usize),

    #[error("relevance refinement needs at least two classes, got {0}")]
    TooFewClasses(usize),

    #[error("score at ({0}, {1}) is not strictly positive")]
    NonpositiveScore(usize, usize),

    #[error("label {label} is out of range for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("class {class} has {available} labeled instances, need {needed}")]
    InsufficientInstances {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nothing to aggregate")]
    EmptyInput,

    #[error("support size {requested} exceeds the {available} available instances")]
    SupportTooLarge { requested: usize, available: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl KptError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KptError::Io {
            path: path.into(),
            source,
        }
    }
}
