use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("matrix is not skew-symmetric (asymmetry ratio {ratio:.3e})")]
    NotSkewSymmetric { ratio: f64 },

    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    NearPiRotation { angle: f64 },

    #[error("line endpoints coincide")]
    DegenerateLine,

    #[error("intrinsic matrix is singular or malformed")]
    SingularIntrinsics,

    #[error("point depth {depth:.3e} is not in front of the camera")]
    BehindCamera { depth: f64 },

    #[error("projected line has vanishing direction components")]
    DegenerateProjectedLine,

    #[error("no correspondences supplied")]
    EmptyInput,

    #[error("{mode} mode needs more correspondences (points: {n_points}, lines: {n_lines})")]
    InsufficientCorrespondences {
        mode: &'static str,
        n_points: usize,
        n_lines: usize,
    },

    #[error("Gram matrix is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditionedGram { condition: f64 },

    #[error("smallest eigenvalue is repeated (gap {gap:.3e})")]
    RepeatedSmallestEigenvalue { gap: f64 },

    #[error("matrix is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("pose is underdetermined with {n_points} points and {n_lines} lines")]
    Underdetermined { n_points: usize, n_lines: usize },

    #[error("Gauss-Newton normal equations are singular (condition {condition:.3e})")]
    SingularNormalEquations { condition: f64 },

    #[error("orthonormality constraints are rank deficient")]
    RankDeficientConstraints,

    #[error("projected Fisher information is singular (condition {condition:.3e})")]
    SingularProjectedFisher { condition: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl PoseError {
    /// True for errors caused by the amount of input data rather than its numerics.
    pub fn is_underdetermined(&self) -> bool {
        matches!(
            self,
            PoseError::Underdetermined { .. }
                | PoseError::InsufficientCorrespondences { .. }
                | PoseError::EmptyInput
        )
    }
}

pub type Result<T> = std::result::Result<T, PoseError>;
