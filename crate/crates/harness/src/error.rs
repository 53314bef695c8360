use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("run diverged: {0}")]
    Diverged(String),

    #[error("detection failed: {0}")]
    Detection(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Core(#[from] eseize_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
