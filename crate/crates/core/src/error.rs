use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown token at byte {position} in {text:?}")]
    UnknownToken { text: String, position: usize },

    #[error("invalid SMILES {0:?}")]
    InvalidSmiles(String),

    #[error("unsupported atom {atom:?} in {smiles:?}")]
    UnsupportedAtom { smiles: String, atom: String },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("inter-decoder divergence needs at least two decoders")]
    SingleDecoder,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
