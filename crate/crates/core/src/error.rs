use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Estimator step that raised an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Stage1Weights,
    Stage1Solve,
    Stage2Build,
    Stage2Solve,
    Recover,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Stage1Weights => "stage-one weighting",
            Stage::Stage1Solve => "stage-one solve",
            Stage::Stage2Build => "stage-two construction",
            Stage::Stage2Solve => "stage-two solve",
            Stage::Recover => "parameter recovery",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance is not positive semidefinite (pivot {pivot:e} at index {index})")]
    NotPsd { index: usize, pivot: f64 },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("Fisher information is singular (condition number {0:e})")]
    SingularFim(f64),

    #[error("speed derivative column is zero; projection undefined")]
    DegenerateProjection,

    #[error("stage-one weighting matrix is singular: {0}")]
    SingularWeighting(String),

    #[error("normal matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("squared speed estimate is not positive ({0:e})")]
    NonPositiveSpeedSquare(f64),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("{0}")]
    Config(String),

    #[error("{stage}: {source}")]
    InStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: Stage) -> Error {
        Error::InStage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InStage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::InStage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// True for input/configuration problems, false for numerical failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self.root(),
            Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch(_)
        )
    }
}
