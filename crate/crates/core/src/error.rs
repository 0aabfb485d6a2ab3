use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("scene contains no Gaussians")]
    EmptyScene,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("pixel ({x}, {y}) has more than {cap} blend records")]
    WeightOverflow { x: u32, y: u32, cap: usize },

    #[error("non-finite loss at iteration {iteration}: {terms}")]
    NonFinite { iteration: usize, terms: String },

    #[error("clicked pixel is background (accumulated opacity {opacity:.3})")]
    BackgroundClick { opacity: f32 },

    #[error("no confident cluster match (best similarity {similarity:.3})")]
    NoConfidentMatch { similarity: f32 },
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
