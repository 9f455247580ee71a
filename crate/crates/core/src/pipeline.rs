//! The full two-step estimator.

use crate::camera::{LineCorrespondence, PointCorrespondence};
use crate::error::Result;
use crate::refine::gn_refine;
use crate::solver::{consistent_estimate, EstimateReport, EstimatorConfig};

/// Consistent first step followed by `config.gn_iterations` Gauss-Newton updates.
pub fn estimate(
    points: &[PointCorrespondence],
    lines: &[LineCorrespondence],
    config: &EstimatorConfig,
) -> Result<EstimateReport> {
    let mut report = consistent_estimate(points, lines, config)?;
    if config.gn_iterations > 0 {
        let out = gn_refine(&report.first_step, &report.noise, points, lines, config.gn_iterations, 0.0)?;
        report.refined = Some(out.pose);
        report.gn_step_norm = Some(out.step.norm());
    }
    Ok(report)
}
