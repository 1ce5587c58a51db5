use std::path::PathBuf;

/// Errors produced across the extraction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Corpus { line: usize, message: String },

    #[error("invalid span set: {0}")]
    Span(String),

    #[error("illegal label sequence at position {position}: {detail}")]
    IllegalLabels { position: usize, detail: String },

    #[error("empty emission matrix")]
    EmptyEmissions,

    #[error("invalid url {url:?}: {reason}")]
    Url { url: String, reason: String },

    #[error("sequence of {len} positions exceeds max_seq_len {max}; split the document into chunks")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter file: {0}")]
    ParamFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training: {0}")]
    Training(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
