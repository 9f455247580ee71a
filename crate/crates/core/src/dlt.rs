//! Stacked homogeneous linear systems `A·θ ≈ 0` for point, line and combined
//! correspondences, their normalized Gram matrices `Q = AᵀA/N`, and the noise
//! templates `Q̃` with `E[Q] = Q° + σ²·Q̃`.
//!
//! Parameter layouts (column-major `vec`):
//! - point:    `θ = vec([R  t])`            (12)
//! - line:     `θ = vec([R  t^R])`          (18)
//! - combined: `θ = vec([R  t^R  t])`       (21)

use std::fmt;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::camera::{LineCorrespondence, PointCorrespondence};
use crate::error::{PoseError, Result};
use crate::so3::{hat, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DltMode {
    PointOnly,
    LineOnly,
    Combined,
}

impl DltMode {
    pub fn dim(self) -> usize {
        match self {
            DltMode::PointOnly => 12,
            DltMode::LineOnly => 18,
            DltMode::Combined => 21,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DltMode::PointOnly => "point",
            DltMode::LineOnly => "line",
            DltMode::Combined => "combined",
        }
    }

    /// The exact parameter vector of `pose` in this mode's layout (unnormalized).
    pub fn theta(self, pose: &Pose) -> DVector<f64> {
        let r = &pose.rotation;
        let t = &pose.translation;
        let e = hat(t) * r;
        let mut v = DVector::zeros(self.dim());
        v.rows_mut(0, 9).copy_from_slice(r.as_slice());
        match self {
            DltMode::PointOnly => v.rows_mut(9, 3).copy_from_slice(t.as_slice()),
            DltMode::LineOnly => v.rows_mut(9, 9).copy_from_slice(e.as_slice()),
            DltMode::Combined => {
                v.rows_mut(9, 9).copy_from_slice(e.as_slice());
                v.rows_mut(18, 3).copy_from_slice(t.as_slice());
            }
        }
        v
    }
}

impl fmt::Display for DltMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Regressor, Gram matrix and bias template for one estimation mode.
#[derive(Debug, Clone)]
pub struct DltSystem {
    pub mode: DltMode,
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_tilde_sum: DMatrix<f64>,
    pub n_points: usize,
    pub n_lines: usize,
}

impl DltSystem {
    pub fn dim(&self) -> usize {
        self.mode.dim()
    }
}

/// The two retained rows of `x^∧` for `x = [u, v, 1]`.
fn point_cross_rows(c: &PointCorrespondence) -> [Vector3<f64>; 2] {
    let (u, v) = (c.image.x, c.image.y);
    [Vector3::new(0.0, -1.0, v), Vector3::new(1.0, 0.0, -u)]
}

/// Writes the 12 point-mode coefficients of `row·[X̄  I₃]` through a column map.
fn write_point_row(
    a: &mut DMatrix<f64>,
    row: usize,
    h: &Vector3<f64>,
    x: &Vector3<f64>,
    col: impl Fn(usize) -> usize,
) {
    let xh = [x.x, x.y, x.z, 1.0];
    for (c, xc) in xh.iter().enumerate() {
        for r in 0..3 {
            a[(row, col(3 * c + r))] = xc * h[r];
        }
    }
}

fn write_line_row(a: &mut DMatrix<f64>, row: usize, h: &Vector3<f64>, l: &[f64; 6]) {
    for (c, lc) in l.iter().enumerate() {
        for r in 0..3 {
            a[(row, 3 * c + r)] = lc * h[r];
        }
    }
}

fn line_vec(c: &LineCorrespondence) -> [f64; 6] {
    let m = c.world.moment;
    let d = c.world.direction;
    [m.x, m.y, m.z, d.x, d.y, d.z]
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn gram(a: &DMatrix<f64>, normalizer: usize) -> DMatrix<f64> {
    let mut q = a.tr_mul(a);
    q /= normalizer as f64;
    symmetrize(&mut q);
    q
}

fn combined_col(k: usize) -> usize {
    if k < 9 {
        k
    } else {
        k + 9
    }
}

/// Adds `(2/N)·Σ X^h X^hᵀ ⊗ e₃e₃ᵀ` into `qt` through a column map.
fn add_point_template(
    qt: &mut DMatrix<f64>,
    points: &[PointCorrespondence],
    normalizer: usize,
    col: impl Fn(usize) -> usize,
) {
    let mut s = nalgebra::Matrix4::<f64>::zeros();
    for c in points {
        let xh = nalgebra::Vector4::new(c.world.x, c.world.y, c.world.z, 1.0);
        s += xh * xh.transpose();
    }
    let w = 2.0 / normalizer as f64;
    for i in 0..4 {
        for j in 0..4 {
            qt[(col(3 * i + 2), col(3 * j + 2))] += w * s[(i, j)];
        }
    }
}

/// Adds `(2/N)·Σ L Lᵀ ⊗ (e₁e₁ᵀ + e₂e₂ᵀ)` into the first 18 columns of `qt`.
fn add_line_template(qt: &mut DMatrix<f64>, lines: &[LineCorrespondence], normalizer: usize) {
    let mut s = nalgebra::Matrix6::<f64>::zeros();
    for c in lines {
        let l = c.world.to_vector();
        s += l * l.transpose();
    }
    let w = 2.0 / normalizer as f64;
    for i in 0..6 {
        for j in 0..6 {
            for r in 0..2 {
                qt[(3 * i + r, 3 * j + r)] += w * s[(i, j)];
            }
        }
    }
}

pub fn build_point_system(points: &[PointCorrespondence]) -> Result<DltSystem> {
    if points.is_empty() {
        return Err(PoseError::EmptyInput);
    }
    let n = points.len();
    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, c) in points.iter().enumerate() {
        for (k, h) in point_cross_rows(c).iter().enumerate() {
            write_point_row(&mut a, 2 * i + k, h, &c.world, |j| j);
        }
    }
    let mut qt = DMatrix::zeros(12, 12);
    add_point_template(&mut qt, points, n, |j| j);
    Ok(DltSystem {
        mode: DltMode::PointOnly,
        q: gram(&a, n),
        a,
        q_tilde_sum: qt,
        n_points: n,
        n_lines: 0,
    })
}

pub fn build_line_system(lines: &[LineCorrespondence]) -> Result<DltSystem> {
    if lines.is_empty() {
        return Err(PoseError::EmptyInput);
    }
    let m = lines.len();
    let mut a = DMatrix::zeros(2 * m, 18);
    for (j, c) in lines.iter().enumerate() {
        let l = line_vec(c);
        let rows = c.image_rows();
        for k in 0..2 {
            let h = rows.row(k).transpose();
            write_line_row(&mut a, 2 * j + k, &h, &l);
        }
    }
    let mut qt = DMatrix::zeros(18, 18);
    add_line_template(&mut qt, lines, m);
    Ok(DltSystem {
        mode: DltMode::LineOnly,
        q: gram(&a, m),
        a,
        q_tilde_sum: qt,
        n_points: 0,
        n_lines: m,
    })
}

/// Point rows occupy columns 1–9 and 19–21, line rows columns 1–18.
pub fn build_combined_system(
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
) -> Result<DltSystem> {
    if points.is_empty() || lines.is_empty() {
        return Err(PoseError::EmptyInput);
    }
    let (n, m) = (points.len(), lines.len());
    let mut a = DMatrix::zeros(2 * (n + m), 21);
    for (i, c) in points.iter().enumerate() {
        for (k, h) in point_cross_rows(c).iter().enumerate() {
            write_point_row(&mut a, 2 * i + k, h, &c.world, combined_col);
        }
    }
    for (j, c) in lines.iter().enumerate() {
        let l = line_vec(c);
        let rows = c.image_rows();
        for k in 0..2 {
            let h = rows.row(k).transpose();
            write_line_row(&mut a, 2 * (n + j) + k, &h, &l);
        }
    }
    let mut qt = DMatrix::zeros(21, 21);
    add_point_template(&mut qt, points, n + m, combined_col);
    add_line_template(&mut qt, lines, n + m);
    Ok(DltSystem {
        mode: DltMode::Combined,
        q: gram(&a, n + m),
        a,
        q_tilde_sum: qt,
        n_points: n,
        n_lines: m,
    })
}

/// Builds the system for `mode` from whichever inputs that mode consumes.
pub fn build_system(
    mode: DltMode,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
) -> Result<DltSystem> {
    match mode {
        DltMode::PointOnly => build_point_system(points),
        DltMode::LineOnly => build_line_system(lines),
        DltMode::Combined => build_combined_system(points, lines),
    }
}
