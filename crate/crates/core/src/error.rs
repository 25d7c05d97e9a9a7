use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("undefined normalized correlation: {0}")]
    UndefinedNc(&'static str),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no usable images in {0}")]
    EmptyCorpus(PathBuf),

    #[error("attack {attack}: {source}")]
    Attack {
        attack: String,
        #[source]
        source: Box<Error>,
    },

    #[error("jpeg codec: {0}")]
    Codec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input data rather than bad invocation.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Corrupt(_)
            | Error::Incompatible(_)
            | Error::Image { .. }
            | Error::EmptyCorpus(_)
            | Error::Codec(_)
            | Error::Io(_) => true,
            Error::Attack { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
