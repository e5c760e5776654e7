use thiserror::Error;

/// Errors produced by the load-flow and mixture machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("case parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing section `{0}` in case file")]
    MissingSection(&'static str),

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("AC power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("imbalance {p_delta:.6} p.u. exceeds regulation capacity {p_delta_max:.6} p.u.")]
    CapacityExceeded { p_delta: f64, p_delta_max: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("too few samples: {n} rows for {components} components in {dim} dimensions")]
    TooFewSamples { n: usize, components: usize, dim: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("{0}")]
    Stats(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True when the error stems from user-supplied input rather than a numerical failure.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::MissingSection(_)
            | Error::InvalidCase(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::NotPsd { .. } => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
