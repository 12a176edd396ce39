use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WsiError {
    #[error(transparent)]
    Core(#[from] wsi_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("corrupt slide at {}: {msg}", path.display())]
    CorruptSlide { path: PathBuf, msg: String },
    #[error("adapter error: {msg} (line: {line:?})")]
    Adapter { msg: String, line: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed on {slide}: {source}")]
    Stage {
        stage: &'static str,
        slide: String,
        #[source]
        source: Box<WsiError>,
    },
}

pub type Result<T> = std::result::Result<T, WsiError>;

impl WsiError {
    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        WsiError::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    pub fn in_stage(self, stage: &'static str, slide: impl Into<String>) -> Self {
        match self {
            already @ WsiError::Stage { .. } => already,
            other => WsiError::Stage { stage, slide: slide.into(), source: Box::new(other) },
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for bad or
    /// unreadable data, 4 for a failed pipeline stage.
    pub fn exit_code(&self) -> i32 {
        use wsi_core::Error as E;
        match self {
            WsiError::Stage { .. } => 4,
            WsiError::Config(_) | WsiError::Core(E::Config(_) | E::Schema { .. }) => 2,
            _ => 3,
        }
    }
}

/// Attaches `path` to an I/O error.
pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> WsiError + '_ {
    move |source| WsiError::Io { path: path.to_path_buf(), source }
}
