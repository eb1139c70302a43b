use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path} line {line}: {msg}")]
    Csv { path: String, line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("relation `{rel}`: attributes do not lie on a single root-to-leaf path (offending: {var})")]
    NotOnPath { rel: String, var: String },
    #[error("relation `{0}` is not sorted for the variable order")]
    NotSorted(String),
    #[error("functional dependency violated: {f} -> {c}: category `{cat}` maps to both `{v1}` and `{v2}`")]
    FdViolation { f: String, c: String, cat: String, v1: String, v2: String },
    #[error("functional dependency {f} -> {c}: no relation contains both variables")]
    FdNotHoused { f: String, c: String },
    #[error("invalid fd catalog: {0}")]
    FdCatalog(String),
    #[error("missing aggregate for monomial {0}")]
    MissingMonomial(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty join: the feature extraction query has no result rows")]
    EmptyJoin,
    #[error("solver diverged: {0}")]
    Diverged(String),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("line search failed to decrease the objective after {0} halvings")]
    LineSearchStuck(usize),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("eigen solver: {0}")]
    Eigen(String),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
