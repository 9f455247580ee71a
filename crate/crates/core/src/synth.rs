//! Synthetic scenes: a fixed camera, random points and lines in front of it,
//! and Gaussian pixel noise on the observations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{CameraIntrinsics, LineCorrespondence, PointCorrespondence};
use crate::error::{PoseError, Result};
use crate::so3::{normalize_line_endpoints, rotation_from_euler, Pose};

/// Which correspondences a scene of a given size contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Points,
    Lines,
    Combined,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Points, Family::Lines, Family::Combined];

    /// `(n_points, n_lines)` for a scene of this family and size.
    pub fn counts(self, size: usize) -> (usize, usize) {
        match self {
            Family::Points => (size, 0),
            Family::Lines => (0, size),
            Family::Combined => (size, size),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Points => "points",
            Family::Lines => "lines",
            Family::Combined => "combined",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = PoseError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "points" => Ok(Family::Points),
            "lines" => Ok(Family::Lines),
            "combined" => Ok(Family::Combined),
            other => Err(PoseError::InvalidArgument(format!("unknown family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_points: usize,
    pub n_lines: usize,
    /// Pixel standard deviation of the observation noise.
    pub sigma_px: f64,
    /// Euler angles `(a, b, c)` of `R = Rz(c)·Ry(b)·Rx(a)`.
    pub euler: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Image width and height in pixels.
    pub image_size: (f64, f64),
    /// Camera-frame depth range of sampled features.
    pub depth_range: (f64, f64),
    /// Minimum pixel distance between the two observed endpoints of a line.
    pub min_line_px: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points: 10,
            n_lines: 10,
            sigma_px: 0.0,
            euler: Vector3::repeat(std::f64::consts::FRAC_PI_3),
            translation: Vector3::new(2.0, 2.0, 2.0),
            intrinsics: CameraIntrinsics::from_focal(800.0, 800.0, 320.0, 240.0)
                .expect("default intrinsics are valid"),
            image_size: (640.0, 480.0),
            depth_range: (2.0, 10.0),
            min_line_px: 20.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn with_counts(mut self, n_points: usize, n_lines: usize) -> Self {
        self.n_points = n_points;
        self.n_lines = n_lines;
        self
    }

    pub fn with_sigma_px(mut self, sigma_px: f64) -> Self {
        self.sigma_px = sigma_px;
        self
    }

    pub fn for_family(self, family: Family, size: usize) -> Self {
        let (n, m) = family.counts(size);
        self.with_counts(n, m)
    }

    pub fn truth(&self) -> Pose {
        Pose::new(rotation_from_euler(&self.euler), self.translation)
    }

    /// Variance of the normalized-coordinate noise for a pixel standard deviation.
    pub fn sigma2(&self, sigma_px: f64) -> f64 {
        self.intrinsics.sigma2_from_pixels(sigma_px)
    }
}

/// Noise-free correspondences together with the pose that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub truth: Pose,
    pub intrinsics: CameraIntrinsics,
    pub points: Vec<PointCorrespondence>,
    pub lines: Vec<LineCorrespondence>,
}

fn sample_pixel<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Vector2<f64> {
    Vector2::new(
        rng.gen_range(0.0..cfg.image_size.0),
        rng.gen_range(0.0..cfg.image_size.1),
    )
}

fn lift<R: Rng + ?Sized>(cfg: &SceneConfig, truth: &Pose, px: &Vector2<f64>, rng: &mut R) -> Vector3<f64> {
    let x = cfg.intrinsics.normalize_pixel(px);
    let depth = rng.gen_range(cfg.depth_range.0..cfg.depth_range.1);
    truth.inverse_transform(&(Vector3::new(x.x, x.y, 1.0) * depth))
}

pub fn generate_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<Scene> {
    if !(cfg.depth_range.0 > 0.0 && cfg.depth_range.1 > cfg.depth_range.0) {
        return Err(PoseError::InvalidArgument(format!(
            "invalid depth range {:?}",
            cfg.depth_range
        )));
    }
    if !(cfg.sigma_px >= 0.0) {
        return Err(PoseError::InvalidArgument(format!(
            "sigma_px must be non-negative, got {}",
            cfg.sigma_px
        )));
    }
    let min_sep = cfg.min_line_px.min(0.5 * cfg.image_size.0.hypot(cfg.image_size.1));
    let truth = cfg.truth();

    let points = (0..cfg.n_points)
        .map(|_| {
            let px = sample_pixel(cfg, rng);
            let world = lift(cfg, &truth, &px, rng);
            PointCorrespondence::new(world, cfg.intrinsics.normalize_pixel(&px))
        })
        .collect();

    let mut lines = Vec::with_capacity(cfg.n_lines);
    while lines.len() < cfg.n_lines {
        let a = sample_pixel(cfg, rng);
        let b = sample_pixel(cfg, rng);
        if (a - b).norm() < min_sep {
            continue;
        }
        let pa = lift(cfg, &truth, &a, rng);
        let pb = lift(cfg, &truth, &b, rng);
        let (p, q) = normalize_line_endpoints(&pa, &pb)?;
        lines.push(LineCorrespondence::new(
            p,
            q,
            cfg.intrinsics.normalize_pixel(&a),
            cfg.intrinsics.normalize_pixel(&b),
        )?);
    }

    Ok(Scene {
        truth,
        intrinsics: cfg.intrinsics,
        points,
        lines,
    })
}

impl Scene {
    /// Copies of the correspondences with noise of `sigma_px` pixels added.
    pub fn noisy<R: Rng + ?Sized>(
        &self,
        sigma_px: f64,
        rng: &mut R,
    ) -> (Vec<PointCorrespondence>, Vec<LineCorrespondence>) {
        add_noise(&self.points, &self.lines, sigma_px, &self.intrinsics, rng)
    }
}

/// Adds i.i.d. `N(0, (σ_px/f_x)²)` noise to every normalized image coordinate
/// of every point and line endpoint.
pub fn add_noise<R: Rng + ?Sized>(
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    sigma_px: f64,
    intrinsics: &CameraIntrinsics,
    rng: &mut R,
) -> (Vec<PointCorrespondence>, Vec<LineCorrespondence>) {
    let sigma = (sigma_px / intrinsics.fx()).max(0.0);
    let normal = Normal::new(0.0, sigma).expect("finite standard deviation");
    let mut jitter = |v: &Vector2<f64>| Vector2::new(v.x + normal.sample(rng), v.y + normal.sample(rng));
    let points = points
        .iter()
        .map(|c| PointCorrespondence::new(c.world, jitter(&c.image)))
        .collect();
    let lines = lines
        .iter()
        .map(|c| {
            let mut out = *c;
            out.image_p = jitter(&c.image_p);
            out.image_q = jitter(&c.image_q);
            out
        })
        .collect();
    (points, lines)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one trial of one grid cell.
pub fn trial_rng(seed: u64, cell: u64, trial: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed) ^ cell) ^ trial);
    ChaCha8Rng::seed_from_u64(s)
}
