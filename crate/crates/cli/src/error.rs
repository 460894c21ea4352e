use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}line {line}, column {column}: {message}", Located(path.as_deref()))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid scenario field `{field}`: {message}")]
    Semantic { field: String, message: String },

    #[error("cannot write {}: {message}", path.display())]
    Output { path: PathBuf, message: String },

    #[error("run aborted: {0}")]
    Aborted(String),
}

struct Located<'a>(Option<&'a Path>);

impl fmt::Display for Located<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(p) => write!(f, "{}: ", p.display()),
            None => Ok(()),
        }
    }
}

impl CliError {
    pub(crate) fn at(self, file: &Path) -> Self {
        match self {
            Self::Parse {
                line,
                column,
                message,
                ..
            } => Self::Parse {
                path: Some(file.to_path_buf()),
                line,
                column,
                message,
            },
            other => other,
        }
    }
}
