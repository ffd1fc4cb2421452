use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value{}: {what}", task.map(|t| format!(" in task {t}")).unwrap_or_default())]
    NonFinite { task: Option<usize>, what: String },

    #[error("degenerate gradient for task {task}: norm {norm:e} <= {eps:e}")]
    DegenerateGradient { task: usize, norm: f64, eps: f64 },

    #[error("gradient set too adversarial for bargaining: (Kw)_{task} = {value:e}")]
    ConflictDegeneracy { task: usize, value: f64 },

    #[error("training diverged at step {step}: {reason}; last losses {losses:?}")]
    Diverged {
        step: usize,
        reason: String,
        losses: Vec<f64>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 1 for everything else.
    pub fn malformed(path: impl AsRef<std::path::Path>, reason: impl ToString) -> Self {
        Error::Malformed {
            path: path.as_ref().display().to_string(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Malformed { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
