use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("initial distribution has zero mass at (state {state}, action {action}); an exploratory start distribution is required")]
    NotExploratory { state: usize, action: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
