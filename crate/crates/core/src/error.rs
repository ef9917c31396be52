use std::fmt;

/// Pipeline stage an error surfaced in; used to tag CLI failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Config,
    Load,
    Preprocess,
    Filters,
    Features,
    Weights,
    Activations,
    Solve,
    Evaluate,
    Io,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Phase::Config => "config",
            Phase::Load => "load",
            Phase::Preprocess => "preprocess",
            Phase::Filters => "filters",
            Phase::Features => "features",
            Phase::Weights => "weights",
            Phase::Activations => "activations",
            Phase::Solve => "solve",
            Phase::Evaluate => "evaluate",
            Phase::Io => "io",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("[{phase}] {source}")]
    Phase {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Phase this error was tagged with, if any.
    pub fn phase(&self) -> Option<Phase> {
        match self {
            Error::Phase { phase, .. } => Some(*phase),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attach a pipeline phase to an error result.
pub trait PhaseContext<T> {
    fn phase(self, phase: Phase) -> Result<T>;
}

impl<T> PhaseContext<T> for Result<T> {
    fn phase(self, phase: Phase) -> Result<T> {
        self.map_err(|e| match e {
            tagged @ Error::Phase { .. } => tagged,
            other => Error::Phase {
                phase,
                source: Box::new(other),
            },
        })
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
