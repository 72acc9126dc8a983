use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("sample size n = {n} is smaller than dimension p = {p}")]
    DegenerateSample { n: usize, p: usize },

    #[error("unbiased risk estimate requires n >= p + 1 (n = {n}, p = {p})")]
    Regime { n: usize, p: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not symmetric (max |S - S^T| = {0:e})")]
    NotSymmetric(f64),

    #[error("eigenvalue {index} is not strictly positive ({value:e})")]
    DegenerateSpectrum { index: usize, value: f64 },

    #[error("near-degenerate spectrum: eigenvalues {index} and {} are {gap:e} apart", index + 1)]
    NearDegenerate { index: usize, gap: f64 },

    #[error("rank {rank} is out of range for dimension {p}")]
    RankOutOfRange { rank: usize, p: usize },

    #[error("noise denominator B = {0:e} is numerically zero")]
    IllPosedDenominator(f64),

    #[error("truth matrix is singular or not positive definite")]
    SingularTruth,

    #[error("eigenvalue {0} lies inside the noise bulk")]
    BelowBulk(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for failures caused by bad input or configuration rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::DegenerateSample { .. }
                | Error::Regime { .. }
                | Error::Shape(_)
                | Error::NotSymmetric(_)
                | Error::RankOutOfRange { .. }
                | Error::Domain(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
