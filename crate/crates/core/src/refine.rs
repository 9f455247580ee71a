//! One-step Gauss-Newton refinement on SO(3) × ℝ³.
//!
//! The perturbation is `R = R̂·exp(s^)`, `t = t̂ + δt`, linearized at `s = 0`.
//! Residuals are whitened: points by `σ_p`, lines by `σ_l·‖[l̄]₁:₂‖` evaluated at
//! the linearization pose, with the derivative of that weight included in the
//! line Jacobian.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, RowVector3, SMatrix, Vector3, Vector6};

use crate::camera::{point_residual, project_line, LineCorrespondence, PointCorrespondence, DEPTH_EPS};
use crate::error::{PoseError, Result};
use crate::so3::{exp_so3, hat, Pose};
use crate::solver::NoiseVariances;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

/// Largest admissible condition number of `JᵀJ`.
pub const MAX_NORMAL_CONDITION: f64 = 1e14;

/// Variance used for whitening when the supplied one is not positive.
///
/// A common scale on every residual cancels in the step, so any positive value
/// gives the same update when all variances are clamped together.
pub const SIGMA2_FLOOR: f64 = 1e-24;

/// `∂vec(exp(s^))/∂s` at `s = 0`: column `k` is `vec(e_k^)`.
pub fn psi_at_zero() -> SMatrix<f64, 9, 3> {
    let mut psi = SMatrix::<f64, 9, 3>::zeros();
    for k in 0..3 {
        let h = hat(&Vector3::ith(k, 1.0));
        psi.column_mut(k).copy_from_slice(h.as_slice());
    }
    psi
}

/// `∂r/∂[s; δt]` of the unwhitened point residual `x − h(R̂·exp(s^)·X + t)`.
pub fn point_jacobian_block(pose: &Pose, c: &PointCorrespondence) -> Result<Matrix2x6> {
    let u = pose.transform(&c.world);
    let den = u.z;
    if den <= DEPTH_EPS {
        return Err(PoseError::BehindCamera { depth: den });
    }
    let num = u.xy();
    let e3 = RowVector3::new(0.0, 0.0, 1.0);
    let e = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let dr_du = (num * e3 - e * den) / (den * den);
    let du_ds = -pose.rotation * hat(&c.world);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dr_du * du_ds));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dr_du);
    Ok(j)
}

/// `∂l̄/∂[s; δt]` of the projected line `R·m + t^·R·d`.
fn line_projection_jacobian(pose: &Pose, c: &LineCorrespondence) -> SMatrix<f64, 3, 6> {
    let r = &pose.rotation;
    let m = &c.world.moment;
    let d = &c.world.direction;
    let th = hat(&pose.translation);
    let g_s = -(r * hat(m) + th * r * hat(d));
    let g_t = -hat(&(r * d));
    let mut g = SMatrix::<f64, 3, 6>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&g_s);
    g.fixed_view_mut::<3, 3>(0, 3).copy_from(&g_t);
    g
}

fn line_block(
    pose: &Pose,
    c: &LineCorrespondence,
    sigma2: f64,
    with_weight_term: bool,
) -> Result<(Matrix2x6, nalgebra::Vector2<f64>)> {
    let l = project_line(pose, &c.world);
    let n = l.xy().norm();
    if n <= 1e-12 {
        return Err(PoseError::DegenerateProjectedLine);
    }
    let sigma = sigma2.sqrt();
    let sigma_j = sigma * n;
    let rows = c.image_rows();
    let r = rows * l;
    let g = line_projection_jacobian(pose, c);
    let mut j = rows * g / sigma_j;
    if with_weight_term {
        let d_inv = -(l.xy().transpose() * g.fixed_rows::<2>(0)) / (sigma * n * n * n);
        j += r * d_inv;
    }
    Ok((j, r / sigma_j))
}

/// Jacobian of the whitened line residual `r_j / σ_j`, with `σ_j` depending on the pose.
pub fn line_jacobian_block(pose: &Pose, c: &LineCorrespondence, sigma2: f64) -> Result<Matrix2x6> {
    Ok(line_block(pose, c, sigma2, true)?.0)
}

/// Stacked whitened residuals and Jacobian at one linearization pose.
#[derive(Debug, Clone, PartialEq)]
pub struct GnSystem {
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

fn floor_sigma2(s: f64) -> f64 {
    if s > SIGMA2_FLOOR {
        s
    } else {
        SIGMA2_FLOOR
    }
}

pub fn build_gn_system(
    pose: &Pose,
    noise: &NoiseVariances,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
) -> Result<GnSystem> {
    let rows = 2 * (points.len() + lines.len());
    if rows == 0 {
        return Err(PoseError::EmptyInput);
    }
    let sp = floor_sigma2(noise.point).sqrt();
    let sl2 = floor_sigma2(noise.line);
    let mut jacobian = DMatrix::zeros(rows, 6);
    let mut residual = DVector::zeros(rows);
    let mut row = 0;
    for c in points {
        let j = point_jacobian_block(pose, c)? / sp;
        let r = point_residual(pose, c)? / sp;
        jacobian.fixed_view_mut::<2, 6>(row, 0).copy_from(&j);
        residual.fixed_rows_mut::<2>(row).copy_from(&r);
        row += 2;
    }
    for c in lines {
        let (j, r) = line_block(pose, c, sl2, true)?;
        jacobian.fixed_view_mut::<2, 6>(row, 0).copy_from(&j);
        residual.fixed_rows_mut::<2>(row).copy_from(&r);
        row += 2;
    }
    Ok(GnSystem { jacobian, residual })
}

impl GnSystem {
    /// Least-squares step `δ = −(JᵀJ)⁻¹Jᵀr`, solved through a QR factorization of `J`.
    pub fn solve(&self) -> Result<Vector6<f64>> {
        if self.jacobian.nrows() < 6 {
            return Err(PoseError::SingularNormalEquations {
                condition: f64::INFINITY,
            });
        }
        let qr = self.jacobian.clone().qr();
        let r: Matrix6 = qr.r().fixed_view::<6, 6>(0, 0).into_owned();
        let sv = r.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
        if !(condition <= MAX_NORMAL_CONDITION) {
            return Err(PoseError::SingularNormalEquations { condition });
        }
        let mut rhs = -self.residual.clone();
        qr.q_tr_mul(&mut rhs);
        let b = Vector6::from_iterator(rhs.iter().take(6).copied());
        r.solve_upper_triangular(&b)
            .ok_or(PoseError::SingularNormalEquations { condition })
    }
}

type Matrix6 = SMatrix<f64, 6, 6>;

/// Applies `[s; δt]` to a pose: `R·exp(s^)`, `t + δt`.
pub fn apply_step(pose: &Pose, step: &Vector6<f64>) -> Pose {
    let s = Vector3::new(step[0], step[1], step[2]);
    let dt = Vector3::new(step[3], step[4], step[5]);
    let r: Matrix3<f64> = pose.rotation * exp_so3(&s);
    Pose::new(r, pose.translation + dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnOutcome {
    pub pose: Pose,
    pub step: Vector6<f64>,
}

/// A single Gauss-Newton update from `init`.
pub fn gn_step(
    init: &Pose,
    noise: &NoiseVariances,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
) -> Result<GnOutcome> {
    let sys = build_gn_system(init, noise, points, lines)?;
    let step = sys.solve()?;
    Ok(GnOutcome {
        pose: apply_step(init, &step),
        step,
    })
}

/// Repeated Gauss-Newton updates, stopping early once the step is below `tol`.
pub fn gn_refine(
    init: &Pose,
    noise: &NoiseVariances,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    iterations: usize,
    tol: f64,
) -> Result<GnOutcome> {
    let mut out = GnOutcome {
        pose: *init,
        step: Vector6::zeros(),
    };
    for _ in 0..iterations {
        out = gn_step(&out.pose, noise, points, lines)?;
        if out.step.norm() < tol {
            break;
        }
    }
    Ok(out)
}
