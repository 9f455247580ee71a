//! JSON file formats read and written by the command-line tool.

use aopnpl::{CameraIntrinsics, LineCorrespondence, PointCorrespondence, Pose};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Mat3 = [[f64; 3]; 3];

/// Intrinsics, pixel observations and an optional ground-truth pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceFile {
    pub intrinsics: Mat3,
    #[serde(default)]
    pub points: Vec<PointEntry>,
    #[serde(default)]
    pub lines: Vec<LineEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PoseJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    #[serde(rename = "X")]
    pub world: [f64; 3],
    pub x_px: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineEntry {
    #[serde(rename = "P")]
    pub p: [f64; 3],
    #[serde(rename = "Q")]
    pub q: [f64; 3],
    pub p_px: [f64; 2],
    pub q_px: [f64; 2],
}

/// A pose with the rotation as a row-major 3×3 array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseJson {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

pub fn to_matrix(m: &Mat3) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| m[r][c])
}

pub fn from_matrix(m: &Matrix3<f64>) -> Mat3 {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

impl From<&Pose> for PoseJson {
    fn from(p: &Pose) -> Self {
        Self {
            rotation: from_matrix(&p.rotation),
            translation: p.translation.into(),
        }
    }
}

impl From<&PoseJson> for Pose {
    fn from(p: &PoseJson) -> Self {
        Pose::new(to_matrix(&p.rotation), Vector3::from(p.translation))
    }
}

/// Correspondences in normalized coordinates, lines rescaled to √3 endpoint separation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub intrinsics: CameraIntrinsics,
    pub points: Vec<PointCorrespondence>,
    pub lines: Vec<LineCorrespondence>,
}

impl CorrespondenceFile {
    pub fn prepare(&self) -> aopnpl::Result<Prepared> {
        let intrinsics = CameraIntrinsics::new(to_matrix(&self.intrinsics))?;
        let px = |v: &[f64; 2]| intrinsics.normalize_pixel(&Vector2::from(*v));
        let points = self
            .points
            .iter()
            .map(|e| PointCorrespondence::new(Vector3::from(e.world), px(&e.x_px)))
            .collect();
        let lines = self
            .lines
            .iter()
            .map(|e| {
                LineCorrespondence::new(Vector3::from(e.p), Vector3::from(e.q), px(&e.p_px), px(&e.q_px))?
                    .normalized()
            })
            .collect::<aopnpl::Result<Vec<_>>>()?;
        Ok(Prepared {
            intrinsics,
            points,
            lines,
        })
    }

    /// Writes a scene back out in pixel coordinates.
    pub fn from_scene(
        intrinsics: &CameraIntrinsics,
        points: &[PointCorrespondence],
        lines: &[LineCorrespondence],
        truth: Option<&Pose>,
    ) -> Self {
        let px = |v: &Vector2<f64>| -> [f64; 2] { intrinsics.to_pixel(v).into() };
        Self {
            intrinsics: from_matrix(intrinsics.matrix()),
            points: points
                .iter()
                .map(|c| PointEntry {
                    world: c.world.into(),
                    x_px: px(&c.image),
                })
                .collect(),
            lines: lines
                .iter()
                .map(|c| LineEntry {
                    p: c.endpoints.0.into(),
                    q: c.endpoints.1.into(),
                    p_px: px(&c.image_p),
                    q_px: px(&c.image_q),
                })
                .collect(),
            ground_truth: truth.map(PoseJson::from),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub rotation: Mat3,
    pub translation: [f64; 3],
    pub sigma2_hat: f64,
    pub mode: String,
    pub first_step_pose: PoseJson,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_error: Option<GroundTruthError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_points: usize,
    pub n_lines: usize,
    pub refined: bool,
    pub sigma2_point: f64,
    pub sigma2_line: f64,
    pub variance_clamped: bool,
    pub scale_s: f64,
    pub sign_d: f64,
    pub smallest_eig: f64,
    pub eig_gap: f64,
    pub skew_asymmetry: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gn_step_norm: Option<f64>,
}

/// Distance of the reported pose from the file's ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthError {
    pub rotation_fro: f64,
    pub translation: f64,
    pub first_step_rotation_fro: f64,
    pub first_step_translation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbOutput {
    pub trace: f64,
    pub rotation_block_trace: f64,
    pub translation_block_trace: f64,
    pub sigma2: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "intrinsics": [[800, 0, 320], [0, 800, 240], [0, 0, 1]],
        "points": [{"X": [1, 2, 3], "x_px": [400, 200]}],
        "lines": [{"P": [0, 0, 5], "Q": [1, 0, 5], "p_px": [10, 20], "q_px": [300, 40]}]
    }"#;

    #[test]
    fn parses_sample_file() {
        let f: CorrespondenceFile = serde_json::from_str(SAMPLE).unwrap();
        assert_eq!(f.points.len(), 1);
        assert_eq!(f.lines[0].q, [1.0, 0.0, 5.0]);
        let p = f.prepare().unwrap();
        assert!((p.points[0].image - Vector2::new(0.1, -0.05)).norm() < 1e-15);
        let (a, b) = p.lines[0].endpoints;
        assert!(((a - b).norm() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(serde_json::from_str::<CorrespondenceFile>(r#"{"points": []}"#).is_err());
        assert!(serde_json::from_str::<CorrespondenceFile>(
            r#"{"intrinsics": [[1,0,0],[0,1,0],[0,0,1]], "points": [{"X": [1, 2], "x_px": [0, 0]}]}"#
        )
        .is_err());
        let singular: CorrespondenceFile =
            serde_json::from_str(r#"{"intrinsics": [[0,0,0],[0,1,0],[0,0,1]]}"#).unwrap();
        assert!(singular.prepare().is_err());
    }

    #[test]
    fn pose_is_row_major() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        assert_eq!(from_matrix(&m)[0], [1.0, 2.0, 3.0]);
        assert_eq!(to_matrix(&from_matrix(&m)), m);
    }
}
