use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("input too short: need at least {needed} {unit}, got {got}")]
    TooShort {
        needed: usize,
        got: usize,
        unit: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unresolved id `{0}`")]
    Lookup(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("degenerate value: {0}")]
    Degenerate(String),

    #[error("naming collision: {0}")]
    Naming(String),

    #[error("{count} item(s) failed, listed in {}", list.display())]
    ItemFailures { count: usize, list: PathBuf },

    #[error("missing upstream artifact {}", .0.display())]
    Dependency(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 dependency.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Dependency(_) => 3,
            _ => 2,
        }
    }
}
