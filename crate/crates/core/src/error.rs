use thiserror::Error;

/// Broad failure category, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Insufficient,
    Curation,
    Evaluation,
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error("referential error: {0}")]
    Referential(String),

    #[error("invalid record {record}: {message}")]
    Record { record: String, message: String },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient raters: need at least {needed}, found {found}")]
    InsufficientRaters { needed: usize, found: usize },

    #[error("empty report: {0}")]
    EmptyReport(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("coverage error: {context}; uncovered images: {}", images.join(", "))]
    Coverage { context: String, images: Vec<String> },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. }
            | Error::Referential(_)
            | Error::Record { .. }
            | Error::Vocabulary(_)
            | Error::Consistency(_)
            | Error::Io(_) => ErrorKind::Parse,
            Error::InsufficientData(_)
            | Error::InsufficientRaters { .. }
            | Error::EmptyReport(_) => ErrorKind::Insufficient,
            Error::UnknownAnnotator(_) | Error::Coverage { .. } => ErrorKind::Curation,
            Error::Input(_) => ErrorKind::Evaluation,
            Error::Config(_) => ErrorKind::Config,
        }
    }

    pub(crate) fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            position: position.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::parse(format!("line {}, column {}", e.line(), e.column()), e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
