use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("indefinite operator: eigenvalue {eigenvalue:.6e} below tolerance {tolerance:.3e}")]
    IndefiniteOperator { eigenvalue: f64, tolerance: f64 },

    #[error("function undefined at eigenvalue {eigenvalue:.6e}")]
    UndefinedAt { eigenvalue: f64 },

    #[error("divergent time integral: kernel contribution {magnitude:.3e} at vertex {vertex}")]
    DivergentIntegral { vertex: usize, magnitude: f64 },

    #[error("quadrature truncation estimate {estimate:.3e} exceeds tolerance {tolerance:.3e}")]
    QuadratureTruncation { estimate: f64, tolerance: f64 },

    #[error("exact engine unavailable: {0}")]
    EngineUnavailable(String),

    #[error("level too small: Omega covers the whole manifold; minimal admissible level {min_level:.6e}")]
    LevelTooSmall { min_level: f64 },

    #[error("functional is not positively homogeneous (relative defect {defect:.3e})")]
    NotHomogeneous { defect: f64 },

    #[error("positivity violated: heat kernel value {value:.3e}")]
    PositivityViolated { value: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidManifold(_) => "invalid_manifold",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::IndefiniteOperator { .. } => "indefinite_operator",
            Error::UndefinedAt { .. } => "undefined_at",
            Error::DivergentIntegral { .. } => "divergent_integral",
            Error::QuadratureTruncation { .. } => "quadrature_truncation",
            Error::EngineUnavailable(_) => "engine_unavailable",
            Error::LevelTooSmall { .. } => "level_too_small",
            Error::NotHomogeneous { .. } => "not_homogeneous",
            Error::PositivityViolated { .. } => "positivity_violated",
            Error::UnknownScenario(_) => "unknown_scenario",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// True for errors raised by a numerical guard (divergence, indefiniteness, truncation).
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::IndefiniteOperator { .. }
                | Error::DivergentIntegral { .. }
                | Error::QuadratureTruncation { .. }
                | Error::UndefinedAt { .. }
                | Error::PositivityViolated { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
