//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {lhs} vs {rhs}")]
    ShapeMismatch { op: String, lhs: String, rhs: String },

    #[error("unknown primitive op '{0}'")]
    UnknownOp(String),

    #[error("backward requires a scalar root, got shape {0}")]
    NonScalarRoot(String),

    #[error("backward already run on this graph")]
    BackwardAlreadyRun,

    #[error("gradient seed shape {seed} does not match tensor shape {tensor}")]
    SeedShapeMismatch { seed: String, tensor: String },

    #[error("non-finite value at parameter {param}, coordinate {coord}")]
    NonFinite { param: usize, coord: usize },

    #[error("lexicon line {line}: {msg}")]
    LexiconParse { line: usize, msg: String },

    #[error("out-of-vocabulary word '{0}'")]
    OovWord(String),

    #[error("no single-letter pronunciation for character '{0}'")]
    OovCharacter(char),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("target vocab size {target} must exceed the base inventory size {inventory}")]
    BpeTargetTooSmall { target: usize, inventory: usize },

    #[error("symbol '{0}' is not in the tokenizer's base inventory")]
    UnknownSymbol(String),

    #[error("unit '{0}' is not in the tokenizer vocabulary")]
    UnknownUnit(String),

    #[error("malformed tokenizer model file: {0}")]
    BpeModelParse(String),

    #[error("frame row {row} does not sum to 1 (log-sum-exp = {lse:.3e})")]
    RowNotNormalized { row: usize, lse: f64 },

    #[error("target of length {target_len} needs at least {required} frames, lattice has {got}")]
    CtcInfeasible {
        target_len: usize,
        required: usize,
        got: usize,
    },

    #[error("target label {label} out of range for vocabulary size {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },

    #[error("empty target sequence")]
    EmptyTarget,

    #[error("lattice too large to enumerate: (V+1)^T = {paths:.3e} paths")]
    LatticeTooLarge { paths: f64 },

    #[error("target has zero probability under the lattice")]
    ZeroProbabilityTarget,

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("split sizes {0:?} would leave an empty split")]
    EmptySplit([usize; 3]),

    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadSplitRatios([f64; 3]),

    #[error("character '{0}' is not covered by the decoder vocabulary")]
    UncoveredChar(char),

    #[error("token index {0} is not a plain-text token")]
    InvalidTokenIndex(usize),

    #[error("context overflow: need {needed} positions, decoder supports {max}")]
    ContextOverflow { needed: usize, max: usize },

    #[error("missing artifact for stage '{0}'")]
    MissingArtifact(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
