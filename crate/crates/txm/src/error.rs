use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] txm_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    /// Short stable identifier used in the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) => match e {
                txm_core::Error::InvalidConfig(_) => "invalid-config",
                txm_core::Error::ShapeMismatch(_) => "shape-mismatch",
                txm_core::Error::OutOfRange(_) => "out-of-range",
                txm_core::Error::NegativeLineIntegral { .. } => "negative-line-integral",
                txm_core::Error::EmptyMask => "empty-mask",
                txm_core::Error::NoRecordedForward => "no-recorded-forward",
                txm_core::Error::NonFiniteLoss { .. } => "non-finite-loss",
            },
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Config(_) => "invalid-config",
            Error::Usage(_) => "usage",
            Error::Stage { source, .. } => source.kind(),
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    /// Process exit status: 2 for bad invocations and configs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" | "invalid-config" => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Error {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}

/// Tag errors from a pipeline stage with its name.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, source: Box::new(e.into()) })
    }
}
