use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Error, Debug)]
pub enum GeError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("training failed at step {step}: {msg}")]
    Training { step: usize, msg: String },
    #[error("solver failed at restart {restart}, step {step}: {msg}")]
    Solver {
        restart: usize,
        step: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GeError>;
