//! Albedo recovery from estimated height and unpolarised intensities.

use crate::diff::{self, DiffScheme};
use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::optics::{normal_from_gradient, Gradient2, UnitVector3};
use crate::solver::GradientOperator;
use crate::sparse::{lsq_normal_cg, CgOptions, CsrBuilder};

/// Shading factors below this give no usable albedo observation.
pub const SHADING_EPS: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct AlbedoEstimate {
    /// Per-channel albedo maps, zero where undefined.
    pub maps: Vec<PixelGrid<f64>>,
    /// Pixels that received at least one diffuse observation.
    pub defined: Mask,
}

/// Per-pixel least squares of the Lambertian model over the available
/// diffuse observations.
///
/// With both lights usable the closed form is
/// `gamma = (i1 d1 + i2 d2) / (d1^2 + d2^2)` with `d_k` the shading factor
/// of each light; with one usable light `gamma = i / d`. Specular pixels
/// and pixels with no usable shading are flagged undefined.
#[allow(clippy::too_many_arguments)]
pub fn albedo_pointwise(
    z: &PixelGrid<f64>,
    mask: &Mask,
    scheme: DiffScheme,
    i1: &[&PixelGrid<f64>],
    i2: Option<&[&PixelGrid<f64>]>,
    s: UnitVector3,
    t: Option<UnitVector3>,
    specular: Option<&Mask>,
) -> Result<AlbedoEstimate> {
    if let Some(i2) = i2 {
        if i2.len() != i1.len() {
            return Err(Error::InvalidInput(format!(
                "channel counts differ: {} vs {}",
                i1.len(),
                i2.len()
            )));
        }
        if t.is_none() {
            return Err(Error::InvalidInput(
                "second intensity set given without its light direction".into(),
            ));
        }
    }
    let channels = i1.len();
    let (w, h) = (mask.width(), mask.height());
    let (gx, gy) = diff::gradient_grids(z, mask, scheme);

    let mut maps = vec![PixelGrid::filled(w, h, 0.0); channels];
    let mut defined_grid = PixelGrid::filled(w, h, false);
    for &p in mask.indices() {
        let p = p as usize;
        if specular.is_some_and(|m| m.contains_pixel(p)) {
            continue; // only diffuse observations enter the data term
        }
        let n = normal_from_gradient(Gradient2::new(gx.at(p), gy.at(p)));
        let d1 = n.x() * s.x() + n.y() * s.y() + n.z() * s.z();
        let d2 = match t {
            Some(t) => n.x() * t.x() + n.y() * t.y() + n.z() * t.z(),
            None => 0.0,
        };
        let use1 = d1 > SHADING_EPS;
        let use2 = i2.is_some() && d2 > SHADING_EPS;
        if !use1 && !use2 {
            continue;
        }
        defined_grid.set_at(p, true);
        for c in 0..channels {
            let a = i1[c].at(p);
            let gamma = match (use1, use2) {
                (true, true) => {
                    let b = i2.unwrap()[c].at(p);
                    (a * d1 + b * d2) / (d1 * d1 + d2 * d2)
                }
                (true, false) => a / d1,
                (false, true) => i2.unwrap()[c].at(p) / d2,
                (false, false) => unreachable!(),
            };
            maps[c].set_at(p, gamma.max(0.0));
        }
    }

    Ok(AlbedoEstimate { maps, defined: Mask::from_grid(defined_grid) })
}

/// Refit albedo with a gradient-consistency term:
/// `min Σ_defined (γ - γ_pt)^2 + λ Σ |∇γ - g_ref|^2`,
/// where `g_ref` is the gradient of the shading-normalised intensity
/// `i / max(n·s, eps)`. Normalising before differentiating cancels the
/// shading's own gradient, so on a uniform-albedo surface `g_ref` is zero
/// and holes fill flat. Undefined and specular pixels carry no data term
/// and are filled by the smoothness term alone. `λ = 0` returns the
/// pointwise maps.
pub fn albedo_with_consistency(
    pointwise: &AlbedoEstimate,
    i_ref: &[&PixelGrid<f64>],
    z: &PixelGrid<f64>,
    g: &GradientOperator,
    s: UnitVector3,
    lambda: f64,
    cg: &CgOptions,
) -> Result<Vec<PixelGrid<f64>>> {
    if lambda < 0.0 {
        return Err(Error::InvalidInput("consistency weight must be nonnegative".into()));
    }
    if lambda == 0.0 {
        return Ok(pointwise.maps.clone());
    }
    if i_ref.len() != pointwise.maps.len() {
        return Err(Error::InvalidInput(format!(
            "{} reference channels for {} albedo maps",
            i_ref.len(),
            pointwise.maps.len()
        )));
    }
    let mask = g.mask();
    let m = mask.count();
    let (gzx, gzy) = g.gradient_of(z);

    // shading of the reference light at every masked pixel
    let shading: Vec<f64> = mask
        .indices()
        .iter()
        .map(|&p| {
            let p = p as usize;
            let n = normal_from_gradient(Gradient2::new(gzx.at(p), gzy.at(p)));
            (n.x() * s.x() + n.y() * s.y() + n.z() * s.z()).max(SHADING_EPS)
        })
        .collect();

    // stacked system: data rows for defined pixels, then scaled gradient rows
    let sqrt_l = lambda.sqrt();
    let g_csr = g.to_csr();
    let mut out = Vec::with_capacity(pointwise.maps.len());
    for (c, pt_map) in pointwise.maps.iter().enumerate() {
        let mut builder = CsrBuilder::new(m);
        let mut rhs = Vec::new();
        for (k, &p) in mask.indices().iter().enumerate() {
            if pointwise.defined.contains_pixel(p as usize) {
                builder.push_row(&[(k as u32, 1.0)]);
                rhs.push(pt_map.at(p as usize));
            } else {
                builder.push_row(&[]);
                rhs.push(0.0);
            }
        }
        // gradient of the shading-normalised reference intensity
        let corrected: Vec<f64> = mask
            .indices()
            .iter()
            .enumerate()
            .map(|(k, &p)| i_ref[c].at(p as usize) / shading[k])
            .collect();
        let mut gref = vec![0.0; 2 * m];
        g_csr.matvec(&corrected, &mut gref);
        for (k, gr) in gref.iter().enumerate() {
            let (cols, vals) = g_csr.row(k);
            let entries: Vec<(u32, f64)> =
                cols.iter().zip(vals).map(|(&cc, &v)| (cc, sqrt_l * v)).collect();
            builder.push_row(&entries);
            rhs.push(sqrt_l * gr);
        }
        let a = builder.finish();
        let at = a.transpose();
        let (x, _) = lsq_normal_cg(&a, &at, &rhs, cg)?;
        let mut map = PixelGrid::filled(mask.width(), mask.height(), 0.0);
        for (k, &p) in mask.indices().iter().enumerate() {
            map.set_at(p as usize, x[k].max(0.0));
        }
        out.push(map);
    }
    Ok(out)
}
