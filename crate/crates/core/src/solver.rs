//! First step of the estimator: bias elimination on the Gram matrix, the
//! smallest eigenvector of the corrected matrix, and recovery of `(R, t)`
//! from it.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::camera::{LineCorrespondence, PointCorrespondence};
use crate::dlt::{build_system, DltMode, DltSystem};
use crate::error::{PoseError, Result};
use crate::so3::{is_rotation, vee_skew_part, Pose};
use crate::variance::{check_counts, estimate_sigma2, VarianceEstimate};

/// Unit-norm parameter vector extracted from a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub v: DVector<f64>,
    pub mode: DltMode,
}

impl ThetaVector {
    pub fn new(v: DVector<f64>, mode: DltMode) -> Result<Self> {
        if v.len() != mode.dim() {
            return Err(PoseError::InvalidArgument(format!(
                "{} mode expects a {}-vector, got {}",
                mode,
                mode.dim(),
                v.len()
            )));
        }
        Ok(Self { v, mode })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecoveryDiagnostics {
    pub scale_s: f64,
    pub sign_d: f64,
    pub smallest_eig: f64,
    pub eig_gap: f64,
    /// Relative asymmetry of `E·Rᵀ` before its skew part was taken; zero in point mode.
    pub skew_asymmetry: f64,
}

/// Smallest eigenpair of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallestEigen {
    pub vector: DVector<f64>,
    pub value: f64,
    pub gap: f64,
}

/// `Q − σ̂²·Q̃`, symmetrized.
pub fn eliminate_bias(sys: &DltSystem, sigma2_hat: f64) -> DMatrix<f64> {
    let mut m = &sys.q - &sys.q_tilde_sum * sigma2_hat;
    let t = m.transpose();
    m += t;
    m *= 0.5;
    m
}

/// Unit eigenvector of the algebraically smallest eigenvalue.
///
/// The sign is fixed so that the largest-magnitude component is positive.
pub fn smallest_unit_eigvec(m: &DMatrix<f64>) -> Result<SmallestEigen> {
    let eig = m.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let value = eig.eigenvalues[idx[0]];
    let gap = if idx.len() > 1 {
        eig.eigenvalues[idx[1]] - value
    } else {
        f64::INFINITY
    };
    if gap < 1e-12 * m.norm() {
        return Err(PoseError::RepeatedSmallestEigenvalue { gap });
    }
    let mut vector = eig.eigenvectors.column(idx[0]).normalize();
    let imax = vector.iamax();
    if vector[imax] < 0.0 {
        vector.neg_mut();
    }
    Ok(SmallestEigen { vector, value, gap })
}

fn reshape3(theta9: &[f64]) -> Matrix3<f64> {
    Matrix3::from_column_slice(&theta9[..9])
}

/// Scale-and-sign corrected projection of a 9-vector onto SO(3).
///
/// Returns `(R, s, d)` where `s` is the mean singular value and `d = det(UVᵀ)`.
pub fn recover_rotation(theta9: &[f64]) -> Result<(Matrix3<f64>, f64, f64)> {
    let r1 = reshape3(theta9);
    let sv = r1.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin >= 1e-12 * smax) || smax == 0.0 {
        return Err(PoseError::RankDeficient {
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let s = sv.sum() / 3.0;
    let r2 = r1 / s;
    let svd = r2.svd(true, true);
    let uvt = svd.u.unwrap() * svd.v_t.unwrap();
    let d = uvt.determinant().signum();
    Ok((uvt * d, s, d))
}

/// Projects a 9-vector onto the essential manifold: singular values `(t, t, 0)`.
pub fn recover_essential(theta9: &[f64]) -> Matrix3<f64> {
    let e1 = reshape3(theta9);
    let svd = e1.svd(true, true);
    let sv = svd.singular_values;
    // nalgebra sorts singular values in descending order
    let t = 0.5 * (sv[0] + sv[1]);
    svd.u.unwrap() * Matrix3::from_diagonal(&Vector3::new(t, t, 0.0)) * svd.v_t.unwrap()
}

/// `t` from `E·Rᵀ = t^`, taking the skew-symmetric part of the noisy product.
///
/// Also returns `‖M + Mᵀ‖_F / ‖M‖_F`, which is zero on exact input.
fn translation_from_essential(e: &Matrix3<f64>, r: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let m = e * r.transpose();
    let scale = m.norm();
    let asym = if scale > 0.0 {
        (m + m.transpose()).norm() / scale
    } else {
        0.0
    };
    (vee_skew_part(&m), asym)
}

fn expect_mode(theta: &ThetaVector, mode: DltMode) -> Result<()> {
    if theta.mode != mode || theta.v.len() != mode.dim() {
        return Err(PoseError::InvalidArgument(format!(
            "expected a {} parameter vector, got {}",
            mode, theta.mode
        )));
    }
    Ok(())
}

fn diagnostics(s: f64, d: f64, skew_asymmetry: f64) -> RecoveryDiagnostics {
    RecoveryDiagnostics {
        scale_s: s,
        sign_d: d,
        skew_asymmetry,
        ..Default::default()
    }
}

pub fn recover_pose_point(theta: &ThetaVector) -> Result<(Pose, RecoveryDiagnostics)> {
    expect_mode(theta, DltMode::PointOnly)?;
    let v = theta.v.as_slice();
    let (r, s, d) = recover_rotation(&v[..9])?;
    let t = Vector3::new(v[9], v[10], v[11]) * (d / s);
    Ok((Pose::new(r, t), diagnostics(s, d, 0.0)))
}

pub fn recover_pose_line(theta: &ThetaVector) -> Result<(Pose, RecoveryDiagnostics)> {
    expect_mode(theta, DltMode::LineOnly)?;
    let (r, s, d) = recover_rotation(&theta.v.as_slice()[..9])?;
    let scaled = &theta.v * (d / s);
    let e = recover_essential(&scaled.as_slice()[9..18]);
    let (t, asym) = translation_from_essential(&e, &r);
    Ok((Pose::new(r, t), diagnostics(s, d, asym)))
}

/// Translation is the average of the point block and the essential-matrix block.
pub fn recover_pose_combined(theta: &ThetaVector) -> Result<(Pose, RecoveryDiagnostics)> {
    expect_mode(theta, DltMode::Combined)?;
    let (r, s, d) = recover_rotation(&theta.v.as_slice()[..9])?;
    let scaled = &theta.v * (d / s);
    let t1 = Vector3::new(scaled[18], scaled[19], scaled[20]);
    let e = recover_essential(&scaled.as_slice()[9..18]);
    let (t2, asym) = translation_from_essential(&e, &r);
    Ok((Pose::new(r, (t1 + t2) * 0.5), diagnostics(s, d, asym)))
}

pub fn recover_pose(theta: &ThetaVector) -> Result<(Pose, RecoveryDiagnostics)> {
    match theta.mode {
        DltMode::PointOnly => recover_pose_point(theta),
        DltMode::LineOnly => recover_pose_line(theta),
        DltMode::Combined => recover_pose_combined(theta),
    }
}

/// Chooses which correspondences feed the first step.
///
/// 1. `n ≥ 2, m ≥ 5, n + m ≥ 11` → combined
/// 2. `n ≥ 6, m < 5` → points only
/// 3. `m ≥ 9, n < 2` → lines only
/// 4. anything else is underdetermined
pub fn select_mode(n_points: usize, n_lines: usize) -> Result<DltMode> {
    let (n, m) = (n_points, n_lines);
    if n >= 2 && m >= 5 && n + m >= 11 {
        Ok(DltMode::Combined)
    } else if n >= 6 && m < 5 {
        Ok(DltMode::PointOnly)
    } else if m >= 9 && n < 2 {
        Ok(DltMode::LineOnly)
    } else {
        Err(PoseError::Underdetermined {
            n_points: n,
            n_lines: m,
        })
    }
}

/// How the noise variance used for bias elimination and weighting is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum VarianceStrategy {
    /// One estimate from the system the dispatcher selected.
    #[default]
    Shared,
    /// Separate point and line estimates, each from its own single-source system
    /// when that source has enough correspondences.
    Split,
    /// Caller-supplied variance. `Fixed(0.0)` disables bias elimination.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub variance: VarianceStrategy,
    /// Gauss-Newton iterations after the first step; the estimator uses one.
    pub gn_iterations: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            variance: VarianceStrategy::Shared,
            gn_iterations: 1,
        }
    }
}

impl EstimatorConfig {
    pub fn first_step_only(mut self) -> Self {
        self.gn_iterations = 0;
        self
    }

    pub fn without_bias_elimination(mut self) -> Self {
        self.variance = VarianceStrategy::Fixed(0.0);
        self
    }
}

/// Noise variances used downstream, one per measurement type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseVariances {
    pub point: f64,
    pub line: f64,
}

impl NoiseVariances {
    pub fn shared(sigma2: f64) -> Self {
        Self {
            point: sigma2,
            line: sigma2,
        }
    }
}

/// Result of the first step, optionally extended by the refiner.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub mode: DltMode,
    /// Variance used for bias elimination in the selected mode.
    pub sigma2_hat: f64,
    /// Estimates from the variance estimator, if it ran.
    pub variance: Option<VarianceEstimate>,
    pub noise: NoiseVariances,
    pub theta: ThetaVector,
    pub first_step: Pose,
    pub diagnostics: RecoveryDiagnostics,
    pub refined: Option<Pose>,
    /// Norm of the last Gauss-Newton step `[s; δt]`.
    pub gn_step_norm: Option<f64>,
}

impl EstimateReport {
    /// Refined pose when available, otherwise the first-step pose.
    pub fn pose(&self) -> &Pose {
        self.refined.as_ref().unwrap_or(&self.first_step)
    }
}

fn single_source_sigma2(mode: DltMode, points: &[PointCorrespondence], lines: &[LineCorrespondence]) -> Option<f64> {
    let (n, m) = match mode {
        DltMode::PointOnly => (points.len(), 0),
        DltMode::LineOnly => (0, lines.len()),
        DltMode::Combined => unreachable!(),
    };
    check_counts(mode, n, m).ok()?;
    let sys = build_system(mode, points, lines).ok()?;
    estimate_sigma2(&sys).ok().map(|v| v.sigma2_hat)
}

/// The bias-eliminated, consistent first-step estimate.
pub fn consistent_estimate(
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    config: &EstimatorConfig,
) -> Result<EstimateReport> {
    let mode = select_mode(points.len(), lines.len())?;
    let sys = build_system(mode, points, lines)?;

    let (sigma2_hat, variance, noise) = match config.variance {
        VarianceStrategy::Fixed(s) => {
            if !(s >= 0.0) {
                return Err(PoseError::InvalidArgument(format!(
                    "fixed variance must be non-negative, got {s}"
                )));
            }
            (s, None, NoiseVariances::shared(s))
        }
        VarianceStrategy::Shared => {
            let v = estimate_sigma2(&sys)?;
            (v.sigma2_hat, Some(v), NoiseVariances::shared(v.sigma2_hat))
        }
        VarianceStrategy::Split => {
            let v = estimate_sigma2(&sys)?;
            let point = single_source_sigma2(DltMode::PointOnly, points, lines).unwrap_or(v.sigma2_hat);
            let line = single_source_sigma2(DltMode::LineOnly, points, lines).unwrap_or(v.sigma2_hat);
            (v.sigma2_hat, Some(v), NoiseVariances { point, line })
        }
    };

    let corrected = eliminate_bias(&sys, sigma2_hat);
    let eig = smallest_unit_eigvec(&corrected)?;
    let theta = ThetaVector::new(eig.vector, mode)?;
    let (pose, mut diag) = recover_pose(&theta)?;
    debug_assert!(is_rotation(&pose.rotation));
    diag.smallest_eig = eig.value;
    diag.eig_gap = eig.gap;

    Ok(EstimateReport {
        mode,
        sigma2_hat,
        variance,
        noise,
        theta,
        first_step: pose,
        diagnostics: diag,
        refined: None,
        gn_step_norm: None,
    })
}
