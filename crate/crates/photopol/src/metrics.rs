//! Reconstruction quality metrics.

use crate::diff::{self, DiffScheme};
use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::optics::{normal_from_gradient, Gradient2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Root-mean-square height error in pixels, after removing the mean
    /// offset (height is only defined up to an additive constant).
    pub height_rms: f64,
    /// Mean angular error in degrees between ground-truth normals and the
    /// normals of the differentiated estimated height.
    pub normal_mae_deg: f64,
}

/// Compare an estimated height map against ground truth on a shared mask.
/// Normals of the estimate come from the same stencil the solver uses, so
/// the metric measures reconstruction rather than stencil mismatch.
pub fn compute_metrics(
    z_est: &PixelGrid<f64>,
    z_gt: &PixelGrid<f64>,
    normals_gt: &PixelGrid<[f64; 3]>,
    mask: &Mask,
    scheme: DiffScheme,
) -> Result<Metrics> {
    if !mask.same_shape(z_est) || !mask.same_shape(z_gt) || !mask.same_shape(normals_gt) {
        return Err(Error::MaskMismatch("metric grids do not share the mask's shape".into()));
    }
    if mask.count() == 0 {
        return Err(Error::Mask("empty mask".into()));
    }
    let n = mask.count() as f64;

    let mut offset = 0.0;
    for &p in mask.indices() {
        offset += z_est.at(p as usize) - z_gt.at(p as usize);
    }
    offset /= n;
    let mut sq = 0.0;
    for &p in mask.indices() {
        let d = z_est.at(p as usize) - z_gt.at(p as usize) - offset;
        sq += d * d;
    }
    let height_rms = (sq / n).sqrt();

    let (gx, gy) = diff::gradient_grids(z_est, mask, scheme);
    let mut angle_sum = 0.0;
    for &p in mask.indices() {
        let p = p as usize;
        let est = normal_from_gradient(Gradient2::new(gx.at(p), gy.at(p)));
        let gt = normals_gt.at(p);
        let dot = (est.x() * gt[0] + est.y() * gt[1] + est.z() * gt[2]).clamp(-1.0, 1.0);
        angle_sum += dot.acos();
    }
    let normal_mae_deg = (angle_sum / n).to_degrees();

    Ok(Metrics { height_rms, normal_mae_deg })
}
