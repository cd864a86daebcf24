use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate covariate: all values equal")]
    DegenerateCovariate,

    #[error("singular normal matrix for learner {learner}: pivot {pivot:.3e} below tolerance")]
    SingularLearner { learner: usize, pivot: f64 },

    #[error("matrix is singular or not positive definite (pivot {pivot:.3e})")]
    Singular { pivot: f64 },

    #[error("response is not centered (mean {0:.3e})")]
    NotCentered(f64),

    #[error("zero variance")]
    ZeroVariance,

    #[error("rank deficient design: rank {rank} with {n} observations")]
    RankDeficient { rank: usize, n: usize },

    #[error("empty basis: test columns lie in the span of the remaining model")]
    EmptyBasis,

    #[error("infeasible: observation violates polyhedron row {row}")]
    Infeasible { row: usize },

    #[error("degenerate truncation: interval carries no probability mass")]
    DegenerateTruncation,

    #[error("no accepted samples; increase B or widen search")]
    NoAcceptedSamples,

    #[error("Monte Carlo degenerate: weights underflow")]
    MonteCarloDegenerate,

    #[error("oracle is not self-congruent at the observed response")]
    NotSelfCongruent,

    #[error("value {value} outside basis support [{lo}, {hi}]")]
    OutsideSupport { value: f64, lo: f64, hi: f64 },

    #[error("unsupported learner: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
