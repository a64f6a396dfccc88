use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// One located problem found while loading or validating corpus files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: PathBuf,
    /// 1-based line number for text files, byte offset for binary files.
    pub location: Option<Location>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(u64),
}

impl Diagnostic {
    pub fn new(file: impl Into<PathBuf>, location: Option<Location>, message: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            location,
            message: message.into(),
        }
    }

    pub fn at_line(file: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Self::new(file, Some(Location::Line(line)), message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file.display())?;
        match self.location {
            Some(Location::Line(n)) => write!(f, ":{n}")?,
            Some(Location::Offset(o)) => write!(f, "@{o}")?,
            None => {}
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}@{offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// A text file or corpus failed validation; carries every problem found.
    #[error("{}", render_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("utterance {utterance}: {source}")]
    Utterance {
        utterance: String,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn render_diagnostics(diags: &[Diagnostic]) -> String {
    match diags {
        [] => "invalid input".to_string(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (and {} more problems)", rest.len()),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn for_utterance(self, utterance: &str) -> Self {
        Error::Utterance {
            utterance: utterance.to_string(),
            source: Box::new(self),
        }
    }

    /// Diagnostics carried by this error, if it is a validation failure.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            Error::Invalid(d) => d.clone(),
            Error::Format { path, offset, message } => vec![Diagnostic::new(
                path.clone(),
                Some(Location::Offset(*offset)),
                message.clone(),
            )],
            Error::Utterance { source, .. } => source.diagnostics(),
            _ => Vec::new(),
        }
    }

    /// True when the failure is a problem with the inputs rather than the
    /// environment (maps to exit code 1 in the CLI).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Invalid(_) | Error::Format { .. } | Error::Dimension(_) | Error::InvalidArgument(_) => true,
            Error::Utterance { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
