//! Noise variance from the Gram pencil: `σ̂² = 1/μ_max` where `μ_max` is the
//! largest generalized eigenvalue of `Q̃·v = μ·Q·v`.

use nalgebra::DMatrix;

use crate::dlt::{DltMode, DltSystem};
use crate::error::{PoseError, Result};

/// Largest admissible ratio `λ_max / λ₂` of the Gram matrix.
pub const MAX_GRAM_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub sigma2_hat: f64,
    /// Largest generalized eigenvalue `μ_max` of the pencil `(Q̃, Q)`.
    pub lambda_max: f64,
    pub mode: DltMode,
    /// Set when rounding produced `μ_max ≤ 0` and the estimate was clamped to zero.
    pub clamped: bool,
}

/// Minimum correspondence counts for a nonsingular Gram matrix in each mode.
pub fn check_counts(mode: DltMode, n_points: usize, n_lines: usize) -> Result<()> {
    let ok = match mode {
        DltMode::PointOnly => n_points >= 6,
        DltMode::LineOnly => n_lines >= 9,
        DltMode::Combined => n_points >= 2 && n_lines >= 5 && n_points + n_lines >= 11,
    };
    if ok {
        Ok(())
    } else {
        Err(PoseError::InsufficientCorrespondences {
            mode: mode.name(),
            n_points,
            n_lines,
        })
    }
}

pub fn estimate_sigma2(sys: &DltSystem) -> Result<VarianceEstimate> {
    check_counts(sys.mode, sys.n_points, sys.n_lines)?;
    let mu = largest_generalized_eigenvalue(&sys.q_tilde_sum, &sys.q)?;
    let (sigma2_hat, clamped) = if mu > 0.0 { (1.0 / mu, false) } else { (0.0, true) };
    Ok(VarianceEstimate {
        sigma2_hat,
        lambda_max: mu,
        mode: sys.mode,
        clamped,
    })
}

/// `μ_max` of `B·v = μ·A·v` for symmetric `B` and symmetric positive (semi)definite `A`.
///
/// `A` is diagonalized as `VΛVᵀ` and the problem reduced to the symmetric matrix
/// `Λ^{-1/2}VᵀBVΛ^{-1/2}`. A single near-null direction of `A` is expected on
/// noise-free data; its eigenvalue is floored at `ε·λ_max`, which pushes `μ_max`
/// towards infinity rather than failing. Two or more null directions mean the
/// geometry is degenerate.
pub fn largest_generalized_eigenvalue(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let eig = a.clone().symmetric_eigen();
    let d = a.nrows();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let lmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lmax > 0.0) {
        return Err(PoseError::IllConditionedGram {
            condition: f64::INFINITY,
        });
    }
    let mut sorted = vals.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let second = sorted[1.min(d - 1)];
    if second < lmax / MAX_GRAM_CONDITION {
        return Err(PoseError::IllConditionedGram {
            condition: if second > 0.0 { lmax / second } else { f64::INFINITY },
        });
    }
    let floor = lmax * f64::EPSILON;
    for v in vals.iter_mut() {
        *v = v.max(floor);
    }
    let vtbv = eig.eigenvectors.transpose() * b * &eig.eigenvectors;
    let mut w = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            w[(i, j)] = vtbv[(i, j)] / (vals[i] * vals[j]).sqrt();
        }
    }
    let wt = w.transpose();
    w = (w + wt) * 0.5;
    Ok(w
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max))
}
