use thiserror::Error;

/// Errors raised by ingestion, estimation and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate observation for country `{country}` at period `{period}`")]
    Conflict { country: String, period: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("period `{0}` has zero total import value")]
    DegeneratePeriod(String),

    #[error(
        "demeaning did not converge after {iterations} sweeps (max residual mean {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular design: column `{column}` is linearly dependent on earlier columns")]
    SingularDesign { column: String },

    #[error("under-identified: {instruments} instruments for {regressors} regressors")]
    UnderIdentified {
        instruments: usize,
        regressors: usize,
    },

    #[error("weak design: {0}")]
    WeakDesign(String),

    #[error("singular transform: {0}")]
    SingularTransform(String),

    #[error("analytic gradient disagrees with finite differences (max relative error {0:e})")]
    GradientMismatch(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("degenerate augmentation: control-function residuals are collinear with the design")]
    DegenerateAugmentation,

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("moment regression has complex roots (alpha1 = {alpha1}, alpha2 = {alpha2})")]
    ComplexRoots { alpha1: f64, alpha2: f64 },

    #[error("singular recovery: 1 + kappa*omega = {0:e} is numerically zero")]
    SingularRecovery(f64),

    #[error("multicollinearity: {0}")]
    Multicollinearity(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable snake_case tag used in structured (JSON) error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Conflict { .. } => "conflict",
            Error::Dimension(_) => "dimension",
            Error::DegeneratePeriod(_) => "degenerate_period",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularDesign { .. } => "singular_design",
            Error::UnderIdentified { .. } => "under_identified",
            Error::WeakDesign(_) => "weak_design",
            Error::SingularTransform(_) => "singular_transform",
            Error::GradientMismatch(_) => "gradient_mismatch",
            Error::DegenerateFit(_) => "degenerate_fit",
            Error::DegenerateAugmentation => "degenerate_augmentation",
            Error::NotApplicable(_) => "not_applicable",
            Error::ComplexRoots { .. } => "complex_roots",
            Error::SingularRecovery(_) => "singular_recovery",
            Error::Multicollinearity(_) => "multicollinearity",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status for this error: 2 input/arguments,
    /// 3 dimension or compatibility, 4 numerical singularity, 5 estimation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Conflict { .. }
            | Error::InvalidConfig(_)
            | Error::Io(_) => 2,
            Error::Dimension(_) | Error::DegeneratePeriod(_) | Error::NotApplicable(_) => 3,
            Error::NonConvergence { .. }
            | Error::SingularDesign { .. }
            | Error::UnderIdentified { .. }
            | Error::WeakDesign(_)
            | Error::SingularTransform(_)
            | Error::GradientMismatch(_)
            | Error::SingularRecovery(_)
            | Error::Multicollinearity(_) => 4,
            Error::DegenerateFit(_)
            | Error::DegenerateAugmentation
            | Error::ComplexRoots { .. } => 5,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
