use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("token id {id} is out of range for a vocabulary of {vocab_size}")]
    InvalidTokenId { id: u32, vocab_size: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("no embedding for token id {0} and no UNK fallback")]
    MissingEmbedding(u32),
    #[error("embedding for token id {0} has zero norm")]
    ZeroNormEmbedding(u32),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    EmbeddingDimension { expected: usize, got: usize },
    #[error("unknown class {class} (classifier has {num_classes} classes)")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("labels do not cover every line ({labels} labels for {lines} lines)")]
    LabelCount { labels: usize, lines: usize },
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("position {position} out of range for length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("position {0} is frozen")]
    FrozenPosition(usize),
    #[error("sequence has no revisable position")]
    NoRevisablePosition,
    #[error("prompt of length {prompt} leaves nothing to generate at total length {length}")]
    PromptTooLong { prompt: usize, length: usize },
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
    #[error("epochs must be at least 1")]
    InvalidEpochs,
    #[error("chain count must be at least 1")]
    InvalidChainCount,
    #[error("state space of {states} sequences exceeds the limit of {limit}")]
    SpaceTooLarge { states: u128, limit: u128 },
    #[error("sample list is empty")]
    EmptySamples,
    #[error("distribution is invalid: {0}")]
    InvalidDistribution(String),
    #[error("every sample is shorter than n = {0}")]
    NoNgrams(usize),
    #[error("expert `{name}` failed: {source}")]
    Expert { name: String, source: Box<Error> },
    #[error("model evaluation failed: {0}")]
    Model(String),
}
