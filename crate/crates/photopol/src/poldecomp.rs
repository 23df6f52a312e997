//! Polarisation image estimation from polariser-angle stacks.
//!
//! The sinusoid `i = i_un (1 + rho cos(2 theta_j - 2 phi))` is fitted per
//! pixel. A single channel is fitted by linear least squares in
//! `(i_un, i_un a, i_un b)` with `a = rho cos 2phi`, `b = rho sin 2phi`.
//! Multichannel data shares one `(rho, phi)` across channels and alternates
//! two exact linear solves: per-channel unpolarised intensities with
//! `(a, b)` fixed, then `(a, b)` from all channels with intensities fixed.
//! Both half-steps minimise the same squared residual, so the objective is
//! non-increasing at every half-step.

use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::optics::fold_phase;
use crate::par;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Upper clamp on the recovered degree of polarisation.
    pub rho_clamp: f64,
    /// Pixels whose fitted intensity stays below this (all channels) leave Ω.
    pub min_intensity: f64,
    pub max_iterations: usize,
    /// Relative objective decrease that stops the alternation.
    pub rel_tol: f64,
}

/// Below this fitted amplitude the phase is unidentifiable and reported
/// as 0 by convention.
pub const PHASE_AMPLITUDE_FLOOR: f64 = 1e-12;

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { rho_clamp: 1.0 - 1e-6, min_intensity: 1e-4, max_iterations: 200, rel_tol: 1e-8 }
    }
}

/// Decomposed polarisation quantities on a shared domain.
#[derive(Debug, Clone)]
pub struct PolarisationImage {
    /// Unpolarised intensity per channel.
    pub i_un: Vec<PixelGrid<f64>>,
    pub rho: PixelGrid<f64>,
    /// Phase angle folded into [0, pi).
    pub phi: PixelGrid<f64>,
    /// Pixels with a usable fit (subset of the input mask).
    pub valid: Mask,
    /// Pixels whose rho hit the clamp; excluded from light estimation.
    pub clamped: PixelGrid<bool>,
}

impl PolarisationImage {
    pub fn channels(&self) -> usize {
        self.i_un.len()
    }
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Total squared residual after the initial guess and then after every
    /// half-step.
    pub objective_trace: Vec<f64>,
    pub degenerate_pixels: usize,
}

struct AngleBasis {
    cos2: Vec<f64>,
    sin2: Vec<f64>,
}

impl AngleBasis {
    fn new(angles: &[f64]) -> Self {
        AngleBasis {
            cos2: angles.iter().map(|&t| (2.0 * t).cos()).collect(),
            sin2: angles.iter().map(|&t| (2.0 * t).sin()).collect(),
        }
    }
}

/// Inverse of the shared 3x3 normal matrix of the single-channel design
/// `[1, cos 2t, sin 2t]`; fails when the angles are not distinct mod 180
/// degrees (an underdetermined fit).
fn single_channel_normal_inverse(basis: &AngleBasis) -> Result<[[f64; 3]; 3]> {
    let p = basis.cos2.len() as f64;
    let (mut sc, mut ss, mut scc, mut scs, mut sss) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&c, &s) in basis.cos2.iter().zip(&basis.sin2) {
        sc += c;
        ss += s;
        scc += c * c;
        scs += c * s;
        sss += s * s;
    }
    let m = [[p, sc, ss], [sc, scc, scs], [ss, scs, sss]];
    invert3(&m).ok_or_else(|| {
        Error::DegenerateFit("polariser angles are not distinct modulo 180 degrees".into())
    })
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale = m.iter().flatten().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if det.abs() <= 1e-12 * scale.powi(3).max(1e-300) {
        return None;
    }
    let inv_det = 1.0 / det;
    let cof = |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    Some([
        [cof(1, 1, 2, 2) * inv_det, -cof(0, 1, 2, 2) * inv_det, cof(0, 1, 1, 2) * inv_det],
        [-cof(1, 0, 2, 2) * inv_det, cof(0, 0, 2, 2) * inv_det, -cof(0, 0, 1, 2) * inv_det],
        [cof(1, 0, 2, 1) * inv_det, -cof(0, 0, 2, 1) * inv_det, cof(0, 0, 1, 1) * inv_det],
    ])
}

/// Fit the sinusoid to one pixel's samples. Exposed mainly for tests and
/// diagnostic tooling; grids go through [`fit_single_channel`].
pub fn fit_single_pixel(samples: &[f64], angles: &[f64], opts: &FitOptions) -> Result<(f64, f64, f64)> {
    if samples.len() != angles.len() || angles.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least three samples, got {}",
            samples.len()
        )));
    }
    let basis = AngleBasis::new(angles);
    let inv = single_channel_normal_inverse(&basis)?;
    let mut rhs = [0.0f64; 3];
    for ((&i, &c), &s) in samples.iter().zip(&basis.cos2).zip(&basis.sin2) {
        rhs[0] += i;
        rhs[1] += i * c;
        rhs[2] += i * s;
    }
    let x0 = inv[0][0] * rhs[0] + inv[0][1] * rhs[1] + inv[0][2] * rhs[2];
    let x1 = inv[1][0] * rhs[0] + inv[1][1] * rhs[1] + inv[1][2] * rhs[2];
    let x2 = inv[2][0] * rhs[0] + inv[2][1] * rhs[1] + inv[2][2] * rhs[2];
    if x0 <= opts.min_intensity {
        return Err(Error::DegenerateFit(format!("fitted unpolarised intensity {x0} is not positive")));
    }
    let (a, b) = (x1 / x0, x2 / x0);
    let rho = (a * a + b * b).sqrt().min(opts.rho_clamp);
    let phi = if rho <= PHASE_AMPLITUDE_FLOOR { 0.0 } else { fold_phase(0.5 * f64::atan2(b, a)) };
    Ok((x0, rho, phi))
}

/// Linearised least-squares decomposition of one channel.
pub fn fit_single_channel(
    series: &[&PixelGrid<f64>],
    angles: &[f64],
    mask: &Mask,
    opts: &FitOptions,
) -> Result<(PolarisationImage, FitDiagnostics)> {
    check_series(series, angles, mask)?;
    let basis = AngleBasis::new(angles);
    let inv = single_channel_normal_inverse(&basis)?;
    let (w, h) = (mask.width(), mask.height());
    let m = mask.count();

    let fits = par::map_range(m, |k| {
        let p = mask.indices()[k] as usize;
        let mut rhs = [0.0f64; 3];
        for ((img, &c), &s) in series.iter().zip(&basis.cos2).zip(&basis.sin2) {
            let i = img.at(p);
            rhs[0] += i;
            rhs[1] += i * c;
            rhs[2] += i * s;
        }
        let x0 = inv[0][0] * rhs[0] + inv[0][1] * rhs[1] + inv[0][2] * rhs[2];
        let x1 = inv[1][0] * rhs[0] + inv[1][1] * rhs[1] + inv[1][2] * rhs[2];
        let x2 = inv[2][0] * rhs[0] + inv[2][1] * rhs[1] + inv[2][2] * rhs[2];
        (x0, x1, x2)
    });

    let mut i_un = PixelGrid::filled(w, h, 0.0);
    let mut rho = PixelGrid::filled(w, h, 0.0);
    let mut phi = PixelGrid::filled(w, h, 0.0);
    let mut clamped = PixelGrid::filled(w, h, false);
    let mut valid_grid = PixelGrid::filled(w, h, false);
    let mut degenerate = 0usize;
    for (k, &(x0, x1, x2)) in fits.iter().enumerate() {
        let p = mask.indices()[k] as usize;
        if x0 <= opts.min_intensity {
            degenerate += 1;
            i_un.set_at(p, x0.max(0.0));
            continue;
        }
        let (a, b) = (x1 / x0, x2 / x0);
        let r = (a * a + b * b).sqrt();
        if r > opts.rho_clamp {
            clamped.set_at(p, true);
        }
        i_un.set_at(p, x0);
        rho.set_at(p, r.min(opts.rho_clamp));
        phi.set_at(p, if r <= PHASE_AMPLITUDE_FLOOR { 0.0 } else { fold_phase(0.5 * f64::atan2(b, a)) });
        valid_grid.set_at(p, true);
    }

    let pol = PolarisationImage {
        i_un: vec![i_un],
        rho,
        phi,
        valid: Mask::from_grid(valid_grid),
        clamped,
    };
    let diag = FitDiagnostics {
        iterations: 1,
        converged: true,
        objective_trace: Vec::new(),
        degenerate_pixels: degenerate,
    };
    Ok((pol, diag))
}

fn check_series(series: &[&PixelGrid<f64>], angles: &[f64], mask: &Mask) -> Result<()> {
    if series.len() != angles.len() {
        return Err(Error::InvalidInput(format!(
            "{} images for {} polariser angles",
            series.len(),
            angles.len()
        )));
    }
    if angles.len() < 3 {
        return Err(Error::DegenerateFit("need at least three polariser angles".into()));
    }
    for img in series {
        if !mask.same_shape(img) {
            return Err(Error::MaskMismatch("stack image shape differs from mask".into()));
        }
    }
    Ok(())
}

/// Channel with the highest mean masked intensity; the initialisation pick.
pub fn best_channel(channels: &[Vec<&PixelGrid<f64>>], mask: &Mask) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (c, series) in channels.iter().enumerate() {
        let total: f64 = series
            .iter()
            .map(|img| mask.indices().iter().map(|&p| img.at(p as usize)).sum::<f64>())
            .sum();
        if total > best.1 {
            best = (c, total);
        }
    }
    best.0
}

/// Interleaved alternating decomposition of `C` channels sharing one
/// `(rho, phi)` pair. `init` defaults to a single-channel fit of the
/// strongest channel.
pub fn fit_multichannel(
    channels: &[Vec<&PixelGrid<f64>>],
    angles: &[f64],
    mask: &Mask,
    init: Option<&PolarisationImage>,
    opts: &FitOptions,
) -> Result<(PolarisationImage, FitDiagnostics)> {
    if channels.is_empty() {
        return Err(Error::InvalidInput("no channels to fit".into()));
    }
    for series in channels {
        check_series(series, angles, mask)?;
    }
    let n_channels = channels.len();
    let basis = AngleBasis::new(angles);
    // fail early on a rank-deficient angle schedule
    let _ = single_channel_normal_inverse(&basis)?;

    let m = mask.count();
    let n_angles = angles.len();

    // gather samples into contiguous [channel][angle][masked pixel] order
    let samples: Vec<Vec<f64>> = (0..n_channels * n_angles)
        .map(|cj| {
            let (c, j) = (cj / n_angles, cj % n_angles);
            mask.indices().iter().map(|&p| channels[c][j].at(p as usize)).collect()
        })
        .collect();
    let sample = |c: usize, j: usize| -> &[f64] { &samples[c * n_angles + j] };

    // initial (a, b) from a polarisation image
    let owned_init;
    let init = match init {
        Some(p) => p,
        None => {
            let pick = best_channel(channels, mask);
            let (p, _) = fit_single_channel(&channels[pick], angles, mask, opts)?;
            owned_init = p;
            &owned_init
        }
    };
    if !mask.same_shape(&init.rho) {
        return Err(Error::MaskMismatch("initial polarisation image shape differs".into()));
    }

    let mut a: Vec<f64> = Vec::with_capacity(m);
    let mut b: Vec<f64> = Vec::with_capacity(m);
    for &p in mask.indices() {
        let p = p as usize;
        let r = init.rho.at(p);
        let f = 2.0 * init.phi.at(p);
        a.push(r * f.cos());
        b.push(r * f.sin());
    }
    let mut i_un = vec![0.0f64; n_channels * m];

    let objective = |a: &[f64], b: &[f64], i_un: &[f64]| -> f64 {
        par::map_range(m, |k| {
            let mut acc = 0.0;
            for c in 0..n_channels {
                let iu = i_un[c * m + k];
                for j in 0..n_angles {
                    let w = 1.0 + a[k] * basis.cos2[j] + b[k] * basis.sin2[j];
                    let r = iu * w - sample(c, j)[k];
                    acc += r * r;
                }
            }
            acc
        })
        .iter()
        .sum()
    };

    // intensities consistent with the initial (a, b) before the first trace entry
    for c in 0..n_channels {
        let (ac, bc) = (&a, &b);
        let slice_vals = par::map_range(m, |k| {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..n_angles {
                let w = 1.0 + ac[k] * basis.cos2[j] + bc[k] * basis.sin2[j];
                num += w * sample(c, j)[k];
                den += w * w;
            }
            if den > 1e-30 {
                num / den
            } else {
                0.0
            }
        });
        i_un[c * m..(c + 1) * m].copy_from_slice(&slice_vals);
    }

    let mut trace = vec![objective(&a, &b, &i_un)];
    let mut converged = false;
    let mut iterations = 0usize;

    for it in 0..opts.max_iterations {
        iterations = it + 1;

        // (a) per-channel intensities with (rho, phi) fixed: the per-pixel
        // system is diagonal across channels, solved in closed form
        for c in 0..n_channels {
            let (ac, bc) = (&a, &b);
            let vals = par::map_range(m, |k| {
                let mut num = 0.0;
                let mut den = 0.0;
                for j in 0..n_angles {
                    let w = 1.0 + ac[k] * basis.cos2[j] + bc[k] * basis.sin2[j];
                    num += w * sample(c, j)[k];
                    den += w * w;
                }
                if den > 1e-30 {
                    num / den
                } else {
                    i_un[c * m + k]
                }
            });
            i_un[c * m..(c + 1) * m].copy_from_slice(&vals);
        }
        trace.push(objective(&a, &b, &i_un));

        // (b) shared (a, b) from all channels with intensities fixed
        let iun_ref = &i_un;
        let ab = par::map_range(m, |k| {
            let (mut m00, mut m01, mut m11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for c in 0..n_channels {
                let iu = iun_ref[c * m + k];
                for j in 0..n_angles {
                    let ca = iu * basis.cos2[j];
                    let cb = iu * basis.sin2[j];
                    let d = sample(c, j)[k] - iu;
                    m00 += ca * ca;
                    m01 += ca * cb;
                    m11 += cb * cb;
                    r0 += ca * d;
                    r1 += cb * d;
                }
            }
            let det = m00 * m11 - m01 * m01;
            if det.abs() > 1e-30 {
                ((m11 * r0 - m01 * r1) / det, (m00 * r1 - m01 * r0) / det)
            } else {
                (a[k], b[k])
            }
        });
        for (k, &(na, nb)) in ab.iter().enumerate() {
            a[k] = na;
            b[k] = nb;
        }
        let obj = objective(&a, &b, &i_un);
        trace.push(obj);

        let prev = trace[trace.len() - 3];
        if prev - obj <= opts.rel_tol * prev.max(1e-300) {
            converged = true;
            break;
        }
    }

    // unpack the linearised variables into the output image
    let (w, h) = (mask.width(), mask.height());
    let mut rho = PixelGrid::filled(w, h, 0.0);
    let mut phi = PixelGrid::filled(w, h, 0.0);
    let mut clamped = PixelGrid::filled(w, h, false);
    let mut valid_grid = PixelGrid::filled(w, h, false);
    let mut out_iun = vec![PixelGrid::filled(w, h, 0.0); n_channels];
    let mut degenerate = 0usize;
    for (k, &p) in mask.indices().iter().enumerate() {
        let p = p as usize;
        let r = (a[k] * a[k] + b[k] * b[k]).sqrt();
        if r > opts.rho_clamp {
            clamped.set_at(p, true);
        }
        rho.set_at(p, r.min(opts.rho_clamp));
        phi.set_at(p, if r <= PHASE_AMPLITUDE_FLOOR { 0.0 } else { fold_phase(0.5 * f64::atan2(b[k], a[k])) });
        let mut strongest = f64::NEG_INFINITY;
        for c in 0..n_channels {
            let iu = i_un[c * m + k];
            out_iun[c].set_at(p, iu.max(0.0));
            strongest = strongest.max(iu);
        }
        if strongest > opts.min_intensity {
            valid_grid.set_at(p, true);
        } else {
            degenerate += 1;
        }
    }

    let pol = PolarisationImage {
        i_un: out_iun,
        rho,
        phi,
        valid: Mask::from_grid(valid_grid),
        clamped,
    };
    let diag = FitDiagnostics { iterations, converged, objective_trace: trace, degenerate_pixels: degenerate };
    Ok((pol, diag))
}
