//! Pinhole projection, correspondences and the weighted residuals of the
//! maximum-likelihood pose problem.
//!
//! All 2D quantities are normalized image coordinates (focal length 1).

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{PoseError, Result};
use crate::so3::{hat, normalize_line_endpoints, PluckerLine, Pose};

/// Points at or closer than this depth are treated as behind the camera.
pub const DEPTH_EPS: f64 = 1e-9;

/// Upper-triangular calibration matrix in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
}

impl CameraIntrinsics {
    pub fn new(k: Matrix3<f64>) -> Result<Self> {
        let lower_ok = k[(1, 0)] == 0.0 && k[(2, 0)] == 0.0 && k[(2, 1)] == 0.0;
        if !lower_ok || k[(2, 2)] != 1.0 || !(k[(0, 0)] > 0.0) || !(k[(1, 1)] > 0.0) {
            return Err(PoseError::SingularIntrinsics);
        }
        let k_inv = k.try_inverse().ok_or(PoseError::SingularIntrinsics)?;
        Ok(Self { k, k_inv })
    }

    pub fn from_focal(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }

    /// First two rows of `K⁻¹·[x; 1]`.
    pub fn normalize_pixel(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let h = self.k_inv * Vector3::new(px.x, px.y, 1.0);
        Vector2::new(h.x, h.y)
    }

    pub fn to_pixel(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let h = self.k * Vector3::new(x.x, x.y, 1.0);
        Vector2::new(h.x, h.y)
    }

    /// Converts a pixel standard deviation into a normalized-coordinate variance.
    pub fn sigma2_from_pixels(&self, sigma_px: f64) -> f64 {
        let s = sigma_px / self.fx();
        s * s
    }
}

/// A 3D world point and its normalized image observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCorrespondence {
    pub world: Vector3<f64>,
    pub image: Vector2<f64>,
}

impl PointCorrespondence {
    pub fn new(world: Vector3<f64>, image: Vector2<f64>) -> Self {
        Self { world, image }
    }
}

/// A 3D line (two points on it) and two observed image points on its projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineCorrespondence {
    pub world: PluckerLine,
    pub endpoints: (Vector3<f64>, Vector3<f64>),
    pub image_p: Vector2<f64>,
    pub image_q: Vector2<f64>,
}

impl LineCorrespondence {
    pub fn new(
        p_world: Vector3<f64>,
        q_world: Vector3<f64>,
        image_p: Vector2<f64>,
        image_q: Vector2<f64>,
    ) -> Result<Self> {
        if (image_p - image_q).norm() <= 1e-9 {
            return Err(PoseError::DegenerateLine);
        }
        Ok(Self {
            world: PluckerLine::from_endpoints(&p_world, &q_world)?,
            endpoints: (p_world, q_world),
            image_p,
            image_q,
        })
    }

    /// Same correspondence with the 3D endpoints moved to √3 separation.
    pub fn normalized(&self) -> Result<Self> {
        let (p, q) = normalize_line_endpoints(&self.endpoints.0, &self.endpoints.1)?;
        Self::new(p, q, self.image_p, self.image_q)
    }

    /// `[pʰ qʰ]ᵀ`, the 2×3 matrix of homogeneous image endpoints.
    pub fn image_rows(&self) -> Matrix2x3<f64> {
        Matrix2x3::new(
            self.image_p.x,
            self.image_p.y,
            1.0,
            self.image_q.x,
            self.image_q.y,
            1.0,
        )
    }
}

/// Isotropic measurement noise `N(0, σ²I₂)` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(PoseError::InvalidArgument(format!(
                "noise variance must be non-negative, got {sigma2}"
            )));
        }
        Ok(Self { sigma2 })
    }

    pub fn from_pixels(sigma_px: f64, intrinsics: &CameraIntrinsics) -> Result<Self> {
        Self::new(intrinsics.sigma2_from_pixels(sigma_px))
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Perspective projection `E(RX+t) / e₃ᵀ(RX+t)`.
pub fn project_point(pose: &Pose, x: &Vector3<f64>) -> Result<Vector2<f64>> {
    let c = pose.transform(x);
    if c.z <= DEPTH_EPS {
        return Err(PoseError::BehindCamera { depth: c.z });
    }
    Ok(Vector2::new(c.x / c.z, c.y / c.z))
}

/// Unnormalized image line `[R  t^R]·L`.
pub fn project_line(pose: &Pose, line: &PluckerLine) -> Vector3<f64> {
    pose.rotation * line.moment + hat(&pose.translation) * (pose.rotation * line.direction)
}

/// `x − h(X)`.
pub fn point_residual(pose: &Pose, c: &PointCorrespondence) -> Result<Vector2<f64>> {
    Ok(c.image - project_point(pose, &c.world)?)
}

/// Incidence residual `[pʰ qʰ]ᵀ·l̄`.
pub fn line_residual(pose: &Pose, c: &LineCorrespondence) -> Vector2<f64> {
    c.image_rows() * project_line(pose, &c.world)
}

/// Variance `σ²‖[l̄]₁:₂‖²` of a line's incidence residual under endpoint noise.
pub fn line_weight_variance(pose: &Pose, line: &PluckerLine, sigma2: f64) -> Result<f64> {
    let l = project_line(pose, line);
    let n2 = l.x * l.x + l.y * l.y;
    if n2.sqrt() <= 1e-12 {
        return Err(PoseError::DegenerateProjectedLine);
    }
    Ok(sigma2 * n2)
}

/// Weighted least-squares cost of the ML problem, averaged over `n + m`.
///
/// Line weights are evaluated at `pose`.
pub fn ml_objective(
    pose: &Pose,
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(PoseError::InvalidArgument(format!(
            "sigma2 must be positive, got {sigma2}"
        )));
    }
    let total = points.len() + lines.len();
    if total == 0 {
        return Err(PoseError::EmptyInput);
    }
    let mut acc = 0.0;
    for c in points {
        acc += point_residual(pose, c)?.norm_squared() / sigma2;
    }
    for c in lines {
        let var = line_weight_variance(pose, &c.world, sigma2)?;
        acc += line_residual(pose, c).norm_squared() / var;
    }
    Ok(acc / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_so3, rotation_from_euler};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn reference_k() -> CameraIntrinsics {
        CameraIntrinsics::from_focal(800.0, 800.0, 320.0, 240.0).unwrap()
    }

    fn default_pose() -> Pose {
        Pose::new(
            rotation_from_euler(&Vector3::repeat(PI / 3.0)),
            Vector3::new(2.0, 2.0, 2.0),
        )
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let s = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let t = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(4.0..6.0));
        Pose::new(exp_so3(&s), t)
    }

    /// Line correspondence whose image points are exact projections under `pose`.
    fn exact_line(pose: &Pose, p: Vector3<f64>, q: Vector3<f64>) -> LineCorrespondence {
        let a = project_point(pose, &p).unwrap();
        let b = project_point(pose, &q).unwrap();
        LineCorrespondence::new(p, q, a, b).unwrap()
    }

    #[test]
    fn normalize_pixel_cases() {
        let k = reference_k();
        assert_eq!(k.normalize_pixel(&Vector2::new(320.0, 240.0)), Vector2::zeros());
        let x = k.normalize_pixel(&Vector2::new(1120.0, 240.0));
        assert!((x - Vector2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((k.to_pixel(&x) - Vector2::new(1120.0, 240.0)).norm() < 1e-12);
        let id = CameraIntrinsics::new(Matrix3::identity()).unwrap();
        let px = Vector2::new(3.5, -2.0);
        assert_eq!(id.normalize_pixel(&px), px);
        assert_eq!(
            CameraIntrinsics::from_focal(0.0, 800.0, 1.0, 1.0),
            Err(PoseError::SingularIntrinsics)
        );
    }

    #[test]
    fn project_point_cases() {
        let id = Pose::identity();
        assert_eq!(project_point(&id, &Vector3::new(0.0, 0.0, 5.0)).unwrap(), Vector2::zeros());
        assert_eq!(
            project_point(&id, &Vector3::new(1.0, 2.0, 2.0)).unwrap(),
            Vector2::new(0.5, 1.0)
        );
        assert!(matches!(
            project_point(&id, &Vector3::new(1.0, 2.0, -2.0)),
            Err(PoseError::BehindCamera { .. })
        ));

        // lift an image point with a depth, pull it into the world, and project back
        let pose = default_pose();
        let u = Vector2::new(0.13, -0.21);
        let cam = Vector3::new(u.x, u.y, 1.0) * 6.5;
        let world = pose.inverse_transform(&cam);
        assert!((project_point(&pose, &world).unwrap() - u).norm() < 1e-10);
    }

    #[test]
    fn project_line_incidence() {
        let id = Pose::identity();
        let p = Vector3::new(-1.0, 0.0, 2.0);
        let q = Vector3::new(1.0, 0.0, 2.0);
        let l = project_line(&id, &PluckerLine::from_endpoints(&p, &q).unwrap());
        for x in [p, q, (p + q) * 0.5] {
            let h = project_point(&id, &x).unwrap();
            assert!(l.dot(&Vector3::new(h.x, h.y, 1.0)).abs() < 1e-14);
        }
        assert!(l.x.abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let q = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let line = PluckerLine::from_endpoints(&p, &q).unwrap();
            let l = project_line(&pose, &line);
            for x in [p, q] {
                let h = project_point(&pose, &x).unwrap();
                assert!(l.dot(&Vector3::new(h.x, h.y, 1.0)).abs() < 1e-10 * l.norm());
            }
            let l2 = project_line(&pose, &line.scaled(2.5));
            assert!((l2 - l * 2.5).norm() < 1e-12 * l.norm());
        }

        // zero translation keeps only the rotated moment
        let r = exp_so3(&Vector3::new(0.2, -0.3, 0.1));
        let pose = Pose::new(r, Vector3::zeros());
        let line = PluckerLine::from_endpoints(&Vector3::new(0.5, 0.1, 3.0), &Vector3::new(-0.2, 0.4, 4.0))
            .unwrap();
        assert!((project_line(&pose, &line) - r * line.moment).norm() < 1e-15);
    }

    #[test]
    fn residuals_vanish_at_truth() {
        let pose = default_pose();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let cam = Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.3..0.3), 1.0)
                * rng.gen_range(2.0..10.0);
            let world = pose.inverse_transform(&cam);
            let c = PointCorrespondence::new(world, Vector2::new(cam.x / cam.z, cam.y / cam.z));
            assert!(point_residual(&pose, &c).unwrap().norm() < 1e-10);

            let eps = Vector2::new(1e-3, -2e-3);
            let noisy = PointCorrespondence::new(world, c.image + eps);
            assert!((point_residual(&pose, &noisy).unwrap() - eps).norm() < 1e-12);

            let q = pose.inverse_transform(&(cam + Vector3::new(0.5, -0.2, 1.0)));
            let lc = exact_line(&pose, world, q);
            assert!(line_residual(&pose, &lc).norm() < 1e-10);
        }
    }

    #[test]
    fn point_residual_off_truth() {
        let pose = default_pose();
        let other = Pose::new(pose.rotation * exp_so3(&Vector3::new(0.01, 0.0, -0.02)), pose.translation);
        let world = pose.inverse_transform(&Vector3::new(0.3, 0.1, 4.0));
        let c = PointCorrespondence::new(world, Vector2::new(0.075, 0.025));
        let r = point_residual(&other, &c).unwrap();
        let cam = other.rotation * world + other.translation;
        let direct = c.image - Vector2::new(cam.x / cam.z, cam.y / cam.z);
        assert!(r.norm() > 1e-4);
        assert!((r - direct).norm() < 1e-15);
    }

    #[test]
    fn line_residual_row_swap_and_two_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = random_pose(&mut rng);
        let lc = exact_line(&truth, Vector3::new(0.3, 0.2, 0.1), Vector3::new(-0.4, 0.6, 0.9));
        let pose = random_pose(&mut rng);
        let r = line_residual(&pose, &lc);
        let swapped = LineCorrespondence::new(lc.endpoints.0, lc.endpoints.1, lc.image_q, lc.image_p).unwrap();
        let rs = line_residual(&pose, &swapped);
        assert_eq!((r.x, r.y), (rs.y, rs.x));

        let l = project_line(&pose, &lc.world);
        let a = l.dot(&Vector3::new(lc.image_p.x, lc.image_p.y, 1.0));
        let b = l.dot(&Vector3::new(lc.image_q.x, lc.image_q.y, 1.0));
        assert!((r - Vector2::new(a, b)).norm() < 1e-14);
    }

    #[test]
    fn line_weight_variance_cases() {
        // moment [3,4,0] with zero direction contribution at the identity pose
        let line = PluckerLine {
            moment: Vector3::new(3.0, 4.0, 1.0),
            direction: Vector3::new(0.0, 0.0, 1.0),
        };
        let id = Pose::identity();
        assert_eq!(line_weight_variance(&id, &line, 1.0).unwrap(), 25.0);
        assert_eq!(line_weight_variance(&id, &line, 0.0).unwrap(), 0.0);
        assert_eq!(line_weight_variance(&id, &line, 3.0).unwrap(), 75.0);
        let flat = PluckerLine {
            moment: Vector3::new(0.0, 0.0, 1.0),
            direction: Vector3::new(0.0, 0.0, 1.0),
        };
        assert_eq!(
            line_weight_variance(&id, &flat, 1.0),
            Err(PoseError::DegenerateProjectedLine)
        );
    }

    #[test]
    fn line_weight_variance_matches_sampling() {
        let pose = default_pose();
        let p = pose.inverse_transform(&Vector3::new(0.2, 0.1, 3.0));
        let q = pose.inverse_transform(&Vector3::new(-0.5, 0.3, 6.0));
        let line = PluckerLine::from_endpoints(&p, &q).unwrap();
        let l = project_line(&pose, &line);
        let sigma = 0.01;
        let var = line_weight_variance(&pose, &line, sigma * sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let v = l.x * e1 * sigma + l.y * e2 * sigma;
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / n as f64;
        let emp = acc2 / n as f64 - mean * mean;
        assert!((emp / var - 1.0).abs() < 0.03, "ratio {}", emp / var);
    }

    #[test]
    fn ml_objective_cases() {
        let pose = default_pose();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut points = Vec::new();
        let mut lines = Vec::new();
        for _ in 0..8 {
            let cam = Vector3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.3..0.3), 1.0)
                * rng.gen_range(2.0..10.0);
            let w = pose.inverse_transform(&cam);
            points.push(PointCorrespondence::new(w, Vector2::new(cam.x / cam.z, cam.y / cam.z)));
            let w2 = pose.inverse_transform(&(cam + Vector3::new(0.4, 0.3, 1.5)));
            lines.push(exact_line(&pose, w, w2));
        }
        assert!(ml_objective(&pose, &points, &lines, 1e-4).unwrap() < 1e-16);

        for c in points.iter_mut() {
            c.image += Vector2::new(rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3));
        }
        for c in lines.iter_mut() {
            c.image_p += Vector2::new(rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3));
        }
        let sigma2 = 2e-6;
        let f = ml_objective(&pose, &points, &lines, sigma2).unwrap();
        assert!(f > 0.0);

        let mut manual = 0.0;
        for c in &points {
            let r = point_residual(&pose, c).unwrap();
            manual += r.dot(&r) / sigma2;
        }
        for c in &lines {
            let r = line_residual(&pose, c);
            let l = project_line(&pose, &c.world);
            manual += r.dot(&r) / (sigma2 * (l.x * l.x + l.y * l.y));
        }
        manual /= 16.0;
        assert!((f - manual).abs() < 1e-12 * manual);

        points.reverse();
        lines.swap(0, 5);
        let g = ml_objective(&pose, &points, &lines, sigma2).unwrap();
        assert!((f - g).abs() < 1e-12 * f);
        assert_eq!(ml_objective(&pose, &[], &[], 1.0), Err(PoseError::EmptyInput));
    }
}
