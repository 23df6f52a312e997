//! Uncalibrated two-source lighting estimation.
//!
//! The intensity ratio is one albedo-free equation per pixel relating the
//! two unpolarised images, the surface gradient and the light directions.
//! Polarisation supplies each pixel's gradient up to a binary sign, so the
//! objective sums the smaller of the two squared residuals over pixels and
//! colour channels and is minimised over the four spherical light
//! coordinates by a multi-start simplex search. The solution is recovered
//! up to the convex/concave twin `(Ts, Tt)`, `T = diag(-1, -1, 1)`.

use crate::error::{Error, Result};
use crate::optics::{phase_direction, zenith_from_rho, RefractiveIndex, UnitVector3};
use crate::poldecomp::PolarisationImage;
use crate::simplex::{self, SimplexOptions};
use crate::solver::HeightSolution;
use crate::{par, rng};

/// Light direction in spherical form: polar angle from the view axis and
/// in-plane azimuth, mapping to
/// `[cos(alpha) sin(theta), sin(alpha) sin(theta), cos(theta)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalLight {
    pub theta: f64,
    pub alpha: f64,
}

impl SphericalLight {
    pub fn to_unit(self) -> UnitVector3 {
        UnitVector3::new(
            self.alpha.cos() * self.theta.sin(),
            self.alpha.sin() * self.theta.sin(),
            self.theta.cos(),
        )
        .expect("spherical light is never the zero vector")
    }

    pub fn from_unit(v: UnitVector3) -> Self {
        SphericalLight {
            theta: v.z().clamp(-1.0, 1.0).acos(),
            alpha: f64::atan2(v.y(), v.x()).rem_euclid(std::f64::consts::TAU),
        }
    }
}

/// Sign-ambiguous per-pixel gradients implied by the polarisation image.
#[derive(Debug, Clone)]
pub struct AmbiguousGradientField {
    /// Linear pixel ids of the usable pixels.
    pub pixels: Vec<u32>,
    /// One branch of the gradient; the other is its negation.
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// Pixels dropped because their rho sat at a clamp or outside the
    /// invertible range.
    pub excluded: usize,
}

/// Gradients `±tan(theta) (sin phi, cos phi)` from the decomposed rho and
/// phi. Pixels with clamped or non-invertible rho are excluded.
pub fn ambiguous_gradients(
    pol: &PolarisationImage,
    eta: RefractiveIndex,
) -> AmbiguousGradientField {
    let sup = eta.rho_max();
    let mut pixels = Vec::new();
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    let mut excluded = 0usize;
    for &p in pol.valid.indices() {
        let pu = p as usize;
        if pol.clamped.at(pu) || pol.rho.at(pu) >= sup {
            excluded += 1;
            continue;
        }
        let theta = zenith_from_rho(pol.rho.at(pu), eta).expect("rho checked in range");
        let tan = theta.tan();
        let (dx, dy) = phase_direction(pol.phi.at(pu));
        pixels.push(p);
        gx.push(tan * dx);
        gy.push(tan * dy);
    }
    AmbiguousGradientField { pixels, gx, gy, excluded }
}

#[derive(Debug, Clone, Copy)]
pub struct LightEstimationOptions {
    pub restarts: usize,
    /// Pixel budget for the multi-start phase; the winner is refined on all
    /// usable pixels.
    pub max_subsample: usize,
    /// Polar angle bound of the search box.
    pub theta_max: f64,
    pub min_pixels: usize,
    pub seed: u64,
    pub restart_iterations: usize,
    pub refine_iterations: usize,
}

impl Default for LightEstimationOptions {
    fn default() -> Self {
        LightEstimationOptions {
            restarts: 16,
            max_subsample: 5000,
            theta_max: 80f64.to_radians(),
            min_pixels: 100,
            seed: 0,
            restart_iterations: 800,
            refine_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RestartRecord {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LightEstimate {
    pub s: UnitVector3,
    pub t: UnitVector3,
    pub objective: f64,
    pub restarts: Vec<RestartRecord>,
    pub pixels_used: usize,
    pub converged: bool,
}

struct ObjectiveData {
    /// Per channel, intensities of the first light at the field pixels.
    i1: Vec<Vec<f64>>,
    i2: Vec<Vec<f64>>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl ObjectiveData {
    /// Σ_{j,c} min(r², q²) over a subset of pixel slots.
    fn eval(&self, params: &[f64], subset: Option<&[u32]>) -> f64 {
        let s = SphericalLight { theta: params[0], alpha: params[1] }.to_unit();
        let t = SphericalLight { theta: params[2], alpha: params[3] }.to_unit();
        let term = |k: usize| -> f64 {
            let (gx, gy) = (self.gx[k], self.gy[k]);
            let shade_s_pos = -gx * s.x() - gy * s.y() + s.z();
            let shade_t_pos = -gx * t.x() - gy * t.y() + t.z();
            let shade_s_neg = gx * s.x() + gy * s.y() + s.z();
            let shade_t_neg = gx * t.x() + gy * t.y() + t.z();
            let mut acc = 0.0;
            for (a, b) in self.i1.iter().zip(&self.i2) {
                let r = a[k] * shade_t_pos - b[k] * shade_s_pos;
                let q = a[k] * shade_t_neg - b[k] * shade_s_neg;
                acc += (r * r).min(q * q);
            }
            acc
        };
        match subset {
            Some(idx) => idx.iter().map(|&k| term(k as usize)).sum(),
            None => (0..self.gx.len()).map(term).sum(),
        }
    }
}

fn gather(
    pol: &PolarisationImage,
    pol2: Option<&PolarisationImage>,
    light_split: Option<usize>,
    grads: &AmbiguousGradientField,
) -> Result<ObjectiveData> {
    let (first, second): (Vec<&crate::grid::PixelGrid<f64>>, Vec<&crate::grid::PixelGrid<f64>>) =
        match pol2 {
            Some(p2) => {
                if p2.i_un.len() != pol.i_un.len() {
                    return Err(Error::InvalidInput("channel counts differ between images".into()));
                }
                (pol.i_un.iter().collect(), p2.i_un.iter().collect())
            }
            None => {
                let split = light_split.unwrap_or(pol.i_un.len() / 2);
                if split == 0 || split * 2 != pol.i_un.len() {
                    return Err(Error::InvalidInput(
                        "two-light estimation needs an even channel split".into(),
                    ));
                }
                (pol.i_un[..split].iter().collect(), pol.i_un[split..].iter().collect())
            }
        };
    let sample = |grids: &[&crate::grid::PixelGrid<f64>]| -> Vec<Vec<f64>> {
        grids
            .iter()
            .map(|g| grads.pixels.iter().map(|&p| g.at(p as usize)).collect())
            .collect()
    };
    Ok(ObjectiveData {
        i1: sample(&first),
        i2: sample(&second),
        gx: grads.gx.clone(),
        gy: grads.gy.clone(),
    })
}

/// Estimate both light directions from two-source photo-polarimetric data.
/// The returned pair is one representative of the `(s, t) ↔ (Ts, Tt)`
/// ambiguity; [`resolve_ambiguity`] picks between them.
pub fn estimate_lights(
    pol: &PolarisationImage,
    pol2: Option<&PolarisationImage>,
    light_split: Option<usize>,
    grads: &AmbiguousGradientField,
    opts: &LightEstimationOptions,
) -> Result<LightEstimate> {
    if grads.pixels.len() < opts.min_pixels {
        return Err(Error::InvalidInput(format!(
            "only {} usable pixels for light estimation (need {})",
            grads.pixels.len(),
            opts.min_pixels
        )));
    }
    let data = gather(pol, pol2, light_split, grads)?;

    // identical images leave the objective flat in the light directions
    let mut max_diff = 0.0f64;
    let mut max_val = 0.0f64;
    for (a, b) in data.i1.iter().zip(&data.i2) {
        for (x, y) in a.iter().zip(b) {
            max_diff = max_diff.max((x - y).abs());
            max_val = max_val.max(x.abs()).max(y.abs());
        }
    }
    if max_diff <= 1e-12 * max_val.max(1e-12) {
        return Err(Error::Domain(
            "the two light images are identical; light directions are unidentifiable".into(),
        ));
    }

    let subset: Option<Vec<u32>> = if grads.pixels.len() > opts.max_subsample {
        let mut stream = rng::Stream::new(opts.seed, 0);
        Some(stream.sample_indices(grads.pixels.len(), opts.max_subsample))
    } else {
        None
    };

    let clamp_params = |x: &[f64]| -> [f64; 4] {
        [
            x[0].clamp(0.0, opts.theta_max),
            x[1],
            x[2].clamp(0.0, opts.theta_max),
            x[3],
        ]
    };

    let restart_results = par::map_range(opts.restarts, |r| {
        let mut stream = rng::Stream::new(opts.seed, 1000 + r as u64);
        let x0 = [
            stream.next_f64() * opts.theta_max,
            stream.next_f64() * std::f64::consts::TAU,
            stream.next_f64() * opts.theta_max,
            stream.next_f64() * std::f64::consts::TAU,
        ];
        let result = simplex::minimize(
            |x| data.eval(&clamp_params(x), subset.as_deref()),
            &x0,
            &[0.2, 0.5, 0.2, 0.5],
            &SimplexOptions { max_iter: opts.restart_iterations, ..Default::default() },
        );
        result
    });

    let mut best: Option<&simplex::SimplexResult> = None;
    for r in &restart_results {
        if best.is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one restart");

    // full-pixel refinement from the winning restart
    let refined = simplex::minimize(
        |x| data.eval(&clamp_params(x), None),
        &best.x,
        &[0.01, 0.02, 0.01, 0.02],
        &SimplexOptions { max_iter: opts.refine_iterations, ..Default::default() },
    );
    let params = clamp_params(&refined.x);
    let mut s = SphericalLight { theta: params[0], alpha: params[1] }.to_unit();
    let mut t = SphericalLight { theta: params[2], alpha: params[3] }.to_unit();

    // the objective is exactly flip-invariant; pick a canonical twin
    if !(0.0..std::f64::consts::PI).contains(&SphericalLight::from_unit(s).alpha) {
        s = s.flip_xy();
        t = t.flip_xy();
    }

    Ok(LightEstimate {
        s,
        t,
        objective: refined.value,
        restarts: restart_results
            .iter()
            .map(|r| RestartRecord {
                objective: r.value,
                iterations: r.iterations,
                converged: r.converged,
            })
            .collect(),
        pixels_used: grads.pixels.len(),
        converged: refined.converged || best.converged,
    })
}

/// Evaluate the estimation objective at explicit light directions; used by
/// tests and by the flip-invariance diagnostics.
pub fn objective_at(
    pol: &PolarisationImage,
    pol2: Option<&PolarisationImage>,
    light_split: Option<usize>,
    grads: &AmbiguousGradientField,
    s: UnitVector3,
    t: UnitVector3,
) -> Result<f64> {
    let data = gather(pol, pol2, light_split, grads)?;
    let sp = SphericalLight::from_unit(s);
    let tp = SphericalLight::from_unit(t);
    Ok(data.eval(&[sp.theta, sp.alpha, tp.theta, tp.alpha], None))
}

#[derive(Debug, Clone)]
pub struct ResolvedLights {
    pub s: UnitVector3,
    pub t: UnitVector3,
    /// Whether the flipped twin of the estimate was chosen.
    pub flipped: bool,
    /// The two convexity scores (estimate, flipped twin).
    pub scores: (f64, f64),
    /// Scores agreed to within tolerance; the first candidate was kept.
    pub tie: bool,
}

/// Resolve the convex/concave ambiguity by reconstructing height with both
/// candidates and keeping the one whose surface rises higher above its own
/// boundary (the maximal, convex interpretation).
pub fn resolve_ambiguity(
    estimate: &LightEstimate,
    mut solve: impl FnMut(UnitVector3, UnitVector3) -> Result<HeightSolution>,
) -> Result<ResolvedLights> {
    // height integrated above the mean boundary level
    let score = |sol: &HeightSolution| -> f64 {
        let boundary = sol.mask.boundary_pixels();
        let b = if boundary.is_empty() {
            0.0
        } else {
            boundary.iter().map(|&p| sol.z.at(p as usize)).sum::<f64>() / boundary.len() as f64
        };
        sol.mask.indices().iter().map(|&p| sol.z.at(p as usize) - b).sum()
    };

    let a = solve(estimate.s, estimate.t)?;
    let b = solve(estimate.s.flip_xy(), estimate.t.flip_xy())?;
    let (sa, sb) = (score(&a), score(&b));
    let scale = sa.abs().max(sb.abs()).max(1.0);
    let tie = (sa - sb).abs() <= 1e-9 * scale;
    if tie || sa >= sb {
        Ok(ResolvedLights { s: estimate.s, t: estimate.t, flipped: false, scores: (sa, sb), tie })
    } else {
        Ok(ResolvedLights {
            s: estimate.s.flip_xy(),
            t: estimate.t.flip_xy(),
            flipped: true,
            scores: (sa, sb),
            tie,
        })
    }
}
