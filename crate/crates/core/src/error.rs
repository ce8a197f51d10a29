use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("singular point: {0}")]
    Singular(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("profile geometry error: {0}")]
    Geometry(String),
    #[error("measure-sign error: {0}")]
    MeasureSign(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("step-size error: {0}")]
    StepSize(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}
