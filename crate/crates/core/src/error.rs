use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    /// A corpus invariant failed; `pair_id` names the offending pair.
    #[error("pair `{pair_id}`: {rule}")]
    Corpus { pair_id: String, rule: String },

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("invalid model spec: {0}")]
    ModelSpec(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("sequence of {len} tokens exceeds the context length {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("trial `{0}`: question span is empty")]
    EmptyQuestionSpan(String),

    #[error("capture format: {0}")]
    CaptureFormat(String),

    /// Two answer candidates of one question start with the same token.
    #[error("trial `{trial_id}`: candidates `{a}` and `{b}` share first token {token}")]
    CandidateCollision {
        trial_id: String,
        a: String,
        b: String,
        token: u32,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("{0}")]
    Analysis(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures in reading, writing or configuring inputs, as
    /// opposed to failures of the analysis itself.
    pub fn is_io_or_config(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Json { .. }
                | Error::ModelSpec(_)
                | Error::Checkpoint(_)
                | Error::MissingTensor(_)
                | Error::ShapeMismatch { .. }
                | Error::CaptureFormat(_)
                | Error::Tokenizer(_)
        )
    }
}
