use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: file contains no records")]
    EmptyFile { path: PathBuf },

    #[error("duplicate entry_id {0:?}")]
    DuplicateId(String),

    #[error("unknown label {0:?} (expected \"desired\" or \"undesired\")")]
    InvalidLabel(String),

    #[error("conflicting labels for entry_id {0:?}")]
    ConflictingLabel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("entry {0:?} has no recorded code fix and cannot be scored")]
    Unscorable(String),

    #[error("context overflow: {needed} tokens needed, limit is {limit}")]
    ContextOverflow { needed: usize, limit: usize },

    #[error("transport error from backend {backend:?}: {message}")]
    Transport { backend: String, message: String },

    #[error("protocol error from backend {backend:?}: {message}")]
    Protocol { backend: String, message: String },

    #[error("entry {entry_id:?}: {source}")]
    Entry {
        entry_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unparseable judge output {0:?}")]
    JudgeParse(String),

    #[error("unknown entry_id {0:?}")]
    UnknownEntry(String),

    #[error("no verdict for labeled entry_id {0:?}")]
    MissingVerdict(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Attach the corpus entry that was being processed.
    pub fn for_entry(self, entry_id: &str) -> Self {
        match self {
            e @ Error::Entry { .. } => e,
            other => Error::Entry {
                entry_id: entry_id.to_string(),
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, looking through entry tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Entry { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self.root(), Error::Transport { .. })
    }
}
