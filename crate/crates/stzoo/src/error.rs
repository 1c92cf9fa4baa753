use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum StzooError {
    #[error(transparent)]
    Core(#[from] stzoo_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("missing frame file {0}")]
    MissingFrame(PathBuf),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("checkpoint was saved for {found} but {requested} was requested (pass --force-spec to override)")]
    SpecMismatch { requested: String, found: String },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StzooError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> StzooError {
    let path = path.into();
    move |source| StzooError::Io { path, source }
}
