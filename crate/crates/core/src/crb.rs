//! Cramér-Rao lower bound for `θ = vec([R t])` under the orthonormality
//! constraints on `R`.

use nalgebra::{Matrix2x3, RowVector3, SMatrix, SVector, Vector3};

use crate::camera::{project_line, LineCorrespondence, PointCorrespondence, DEPTH_EPS};
use crate::error::{PoseError, Result};
use crate::so3::{hat, Pose};

pub type Matrix12 = SMatrix<f64, 12, 12>;
pub type Vector12 = SVector<f64, 12>;
type Matrix2x12 = SMatrix<f64, 2, 12>;
type Matrix3x9 = SMatrix<f64, 3, 9>;

/// Largest admissible condition number of the projected Fisher information.
pub const MAX_PROJECTED_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct CrbResult {
    pub fisher: Matrix12,
    /// Constrained bound `U(UᵀFU)⁻¹Uᵀ`.
    pub constrained: Matrix12,
    pub trace_bound: f64,
    /// Trace of the rotation block (first nine entries of `θ`).
    pub rotation_trace: f64,
    pub translation_trace: f64,
}

pub fn theta_of(pose: &Pose) -> Vector12 {
    let mut th = Vector12::zeros();
    th.fixed_rows_mut::<9>(0).copy_from_slice(pose.rotation.as_slice());
    th.fixed_rows_mut::<3>(9).copy_from(&pose.translation);
    th
}

/// `vᵀ ⊗ I₃`, so that `(vᵀ ⊗ I₃)·vec(R) = R·v`.
fn kron_row_identity(v: &Vector3<f64>) -> Matrix3x9 {
    let mut out = Matrix3x9::zeros();
    for c in 0..3 {
        for r in 0..3 {
            out[(r, 3 * c + r)] = v[c];
        }
    }
    out
}

/// `∂r/∂θ` of the point residual `x − h(R·X + t)`.
pub fn point_theta_jacobian(pose: &Pose, c: &PointCorrespondence) -> Result<Matrix2x12> {
    let u = pose.transform(&c.world);
    let den = u.z;
    if den <= DEPTH_EPS {
        return Err(PoseError::BehindCamera { depth: den });
    }
    let e3 = RowVector3::new(0.0, 0.0, 1.0);
    let e = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let dr_du = (u.xy() * e3 - e * den) / (den * den);
    let mut j = Matrix2x12::zeros();
    j.fixed_view_mut::<2, 9>(0, 0).copy_from(&(dr_du * kron_row_identity(&c.world)));
    j.fixed_view_mut::<2, 3>(0, 9).copy_from(&dr_du);
    Ok(j)
}

/// `∂r/∂θ` of the line residual `[pʰ qʰ]ᵀ(R·m + t^·R·d)`.
pub fn line_theta_jacobian(pose: &Pose, c: &LineCorrespondence) -> Matrix2x12 {
    let rows = c.image_rows();
    let m = &c.world.moment;
    let d = &c.world.direction;
    let d_vec_r = kron_row_identity(m) + hat(&pose.translation) * kron_row_identity(d);
    let d_t = -hat(&(pose.rotation * d));
    let mut j = Matrix2x12::zeros();
    j.fixed_view_mut::<2, 9>(0, 0).copy_from(&(rows * d_vec_r));
    j.fixed_view_mut::<2, 3>(0, 9).copy_from(&(rows * d_t));
    j
}

/// Fisher information of `θ` at `pose`.
///
/// Line weights and the line Jacobian use the supplied image observations, so
/// for a bound on synthetic data pass the noise-free ones.
pub fn fisher_information(
    pose: &Pose,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    sigma2: f64,
) -> Result<Matrix12> {
    if !(sigma2 > 0.0) {
        return Err(PoseError::InvalidArgument(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    if points.is_empty() && lines.is_empty() {
        return Err(PoseError::EmptyInput);
    }
    let mut f = Matrix12::zeros();
    for c in points {
        let j = point_theta_jacobian(pose, c)?;
        f += j.transpose() * j / sigma2;
    }
    for c in lines {
        let l = project_line(pose, &c.world);
        let n2 = l.x * l.x + l.y * l.y;
        if n2.sqrt() <= 1e-12 {
            return Err(PoseError::DegenerateProjectedLine);
        }
        let j = line_theta_jacobian(pose, c);
        f += j.transpose() * j / (sigma2 * n2);
    }
    Ok(f)
}

/// Jacobian of the six constraints `cᵢᵀcⱼ = δᵢⱼ (i ≤ j)` on the columns of `R`.
pub fn constraint_jacobian(theta: &Vector12) -> SMatrix<f64, 6, 12> {
    let c: [Vector3<f64>; 3] = [
        theta.fixed_rows::<3>(0).into_owned(),
        theta.fixed_rows::<3>(3).into_owned(),
        theta.fixed_rows::<3>(6).into_owned(),
    ];
    let mut h = SMatrix::<f64, 6, 12>::zeros();
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
    for (row, &(i, j)) in pairs.iter().enumerate() {
        if i == j {
            h.fixed_view_mut::<1, 3>(row, 3 * i).copy_from(&(c[i].transpose() * 2.0));
        } else {
            h.fixed_view_mut::<1, 3>(row, 3 * i).copy_from(&c[j].transpose());
            h.fixed_view_mut::<1, 3>(row, 3 * j).copy_from(&c[i].transpose());
        }
    }
    h
}

/// Orthonormal basis of the null space of `H`.
pub fn constraint_null_basis(h: &SMatrix<f64, 6, 12>) -> Result<SMatrix<f64, 12, 6>> {
    let eig = (h.transpose() * h).symmetric_eigen();
    let mut idx: Vec<usize> = (0..12).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let top = eig.eigenvalues[idx[11]];
    if !(top > 0.0) || eig.eigenvalues[idx[6]] < 1e-12 * top {
        return Err(PoseError::RankDeficientConstraints);
    }
    let mut u = SMatrix::<f64, 12, 6>::zeros();
    for (k, &i) in idx.iter().take(6).enumerate() {
        u.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok(u)
}

/// `U(UᵀFU)⁻¹Uᵀ` for a given orthonormal basis `U`.
pub fn constrained_bound_with_basis(fisher: &Matrix12, u: &SMatrix<f64, 12, 6>) -> Result<Matrix12> {
    let p = u.transpose() * fisher * u;
    let p = (p + p.transpose()) * 0.5;
    let ev = p.symmetric_eigenvalues();
    let (emax, emin) = (ev.max(), ev.min());
    let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };
    if !(condition <= MAX_PROJECTED_CONDITION) {
        return Err(PoseError::SingularProjectedFisher { condition });
    }
    let inv = p
        .cholesky()
        .ok_or(PoseError::SingularProjectedFisher { condition })?
        .inverse();
    Ok(u * inv * u.transpose())
}

pub fn constrained_crb(fisher: &Matrix12, theta: &Vector12) -> Result<CrbResult> {
    let u = constraint_null_basis(&constraint_jacobian(theta))?;
    let constrained = constrained_bound_with_basis(fisher, &u)?;
    let rotation_trace = (0..9).map(|i| constrained[(i, i)]).sum::<f64>();
    let translation_trace = (9..12).map(|i| constrained[(i, i)]).sum::<f64>();
    Ok(CrbResult {
        fisher: *fisher,
        constrained,
        trace_bound: rotation_trace + translation_trace,
        rotation_trace,
        translation_trace,
    })
}

/// Fisher information and constrained bound at `pose` in one call.
pub fn crb_at(
    pose: &Pose,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    sigma2: f64,
) -> Result<CrbResult> {
    let f = fisher_information(pose, points, lines, sigma2)?;
    constrained_crb(&f, &theta_of(pose))
}
