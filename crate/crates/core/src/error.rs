use thiserror::Error;

pub type Result<T, E = FanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FanError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl FanError {
    /// Process exit status for this error class: 1 usage/configuration,
    /// 2 data or format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            FanError::Config(_) => 1,
            FanError::Dimension(_)
            | FanError::Index(_)
            | FanError::Format(_)
            | FanError::Schema(_)
            | FanError::Data(_)
            | FanError::Io(_) => 2,
            FanError::Domain(_) | FanError::Numeric(_) => 3,
        }
    }
}
