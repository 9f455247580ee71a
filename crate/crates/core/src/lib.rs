//! Consistent and asymptotically efficient camera pose estimation from point
//! and line correspondences.
//!
//! The estimator runs in two steps. A bias-eliminated linear solve on the
//! Gram matrix of the linear constraints gives a consistent pose, and a single
//! Gauss-Newton step on the whitened reprojection residuals refines it.

pub mod camera;
pub mod crb;
pub mod dlt;
pub mod error;
pub mod montecarlo;
pub mod pipeline;
pub mod refine;
pub mod so3;
pub mod solver;
pub mod synth;
pub mod variance;

pub use camera::{CameraIntrinsics, LineCorrespondence, NoiseModel, PointCorrespondence};
pub use crb::{constrained_crb, crb_at, fisher_information, CrbResult};
pub use dlt::{DltMode, DltSystem};
pub use error::{PoseError, Result};
pub use pipeline::estimate;
pub use refine::gn_step;
pub use so3::{PluckerLine, Pose};
pub use solver::{consistent_estimate, EstimateReport, EstimatorConfig, NoiseVariances, VarianceStrategy};
pub use synth::{Family, Scene, SceneConfig};
pub use variance::VarianceEstimate;
