use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] srforge_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A config file that failed to parse or validate.
    #[error("{path}:{line}:{column}: {msg}")]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stage name for the `error[stage]:` diagnostic prefix.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Core(e) => e.stage(),
            Error::Config { .. } => Some("config"),
            Error::Usage(_) => Some("usage"),
            _ => None,
        }
    }

    /// One line: `error[stage]: message`.
    pub fn diagnostic(&self, fallback_stage: &str) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.stage().unwrap_or(fallback_stage))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
