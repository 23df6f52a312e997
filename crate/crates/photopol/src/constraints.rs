//! Per-pixel linear height constraints and their stacking into the unified
//! PDE system `B(x) ∇z(x) = h(x)`.
//!
//! Three row families exist. The DOP ratio row equates the polarisation and
//! shading expressions for the normalisation term; the intensity ratio row
//! does the same between two light sources and is albedo free; the phase row
//! is the collinearity condition of the polarisation phase. Method variants
//! pick subsets, colour channels replicate the photometric rows, and
//! specular-dominant pixels swap their photometric rows for halfway-vector
//! rows with a 90 degree phase shift.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::optics::{f_of_rho, RefractiveIndex, UnitVector3};
use crate::poldecomp::PolarisationImage;

/// Which formulation assembles which row families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodVariant {
    /// Single-source baseline: phase + DOP ratio, needs known/uniform albedo.
    Srt16,
    /// Albedo-invariant: phase + intensity ratio of two sources.
    Prop1,
    /// Phase-invariant: DOP ratios of both sources + intensity ratio.
    Prop2,
    /// Fully constrained: every family.
    Prop3,
}

impl MethodVariant {
    pub fn name(&self) -> &'static str {
        match self {
            MethodVariant::Srt16 => "srt16",
            MethodVariant::Prop1 => "prop1",
            MethodVariant::Prop2 => "prop2",
            MethodVariant::Prop3 => "prop3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "srt16" => Ok(MethodVariant::Srt16),
            "prop1" => Ok(MethodVariant::Prop1),
            "prop2" => Ok(MethodVariant::Prop2),
            "prop3" => Ok(MethodVariant::Prop3),
            other => Err(Error::InvalidInput(format!("unknown method variant '{other}'"))),
        }
    }

    pub fn uses_phase(&self) -> bool {
        !matches!(self, MethodVariant::Prop2)
    }

    pub fn uses_dop(&self) -> bool {
        !matches!(self, MethodVariant::Prop1)
    }

    pub fn uses_intensity_ratio(&self) -> bool {
        !matches!(self, MethodVariant::Srt16)
    }

    pub fn needs_second_light(&self) -> bool {
        self.uses_intensity_ratio()
    }

    pub fn needs_albedo(&self) -> bool {
        self.uses_dop()
    }
}

impl std::fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    DopRatio,
    IntensityRatio,
    Phase,
    SpecularNormal,
}

/// One linear equation `b · ∇z = h` with a stacking weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub b: [f64; 2],
    pub h: f64,
    pub weight: f64,
    pub kind: RowKind,
}

impl ConstraintRow {
    /// Signed residual of the row at a candidate gradient.
    #[inline]
    pub fn residual(&self, zx: f64, zy: f64) -> f64 {
        self.b[0] * zx + self.b[1] * zy - self.h
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RowWeights {
    pub dop: f64,
    pub intensity: f64,
    pub phase: f64,
    pub specular: f64,
}

impl Default for RowWeights {
    fn default() -> Self {
        RowWeights { dop: 1.0, intensity: 1.0, phase: 1.0, specular: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    pub weights: RowWeights,
    /// Rows built from intensities below this are dropped.
    pub min_intensity: f64,
    /// DOP rows with cos-zenith below this are dropped (grazing pixels).
    pub min_f: f64,
    /// When a single polarisation image carries both lights' channels, how
    /// many of its leading channels belong to the first light. Defaults to
    /// an even split.
    pub light_split: Option<usize>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            weights: RowWeights::default(),
            min_intensity: 1e-4,
            min_f: 1e-3,
            light_split: None,
        }
    }
}

/// DOP ratio row: `b = i_un ṽ - γ f s̃`, `h = i_un v3 - γ f s3`.
/// `None` when the pixel is too dark or too close to grazing.
pub fn dop_ratio_row(
    i_un: f64,
    f: f64,
    albedo: f64,
    s: UnitVector3,
    v: UnitVector3,
    min_intensity: f64,
    min_f: f64,
) -> Option<ConstraintRow> {
    if i_un < min_intensity || f < min_f {
        return None;
    }
    let (sx, sy) = s.tangential();
    let (vx, vy) = v.tangential();
    Some(ConstraintRow {
        b: [i_un * vx - albedo * f * sx, i_un * vy - albedo * f * sy],
        h: i_un * v.z() - albedo * f * s.z(),
        weight: 1.0,
        kind: RowKind::DopRatio,
    })
}

/// Intensity ratio row: `b = i2 s̃ - i1 t̃`, `h = i2 s3 - i1 t3`. Albedo and
/// light intensity free. Errors when the two lights coincide (the row is
/// identically zero for every pixel); `None` when both intensities are dark.
pub fn intensity_ratio_row(
    i1: f64,
    i2: f64,
    s: UnitVector3,
    t: UnitVector3,
    min_intensity: f64,
) -> Result<Option<ConstraintRow>> {
    if s.angle_to(&t) < 1e-12 {
        return Err(Error::InvalidInput(
            "intensity ratio needs two distinct light directions".into(),
        ));
    }
    if i1 < min_intensity && i2 < min_intensity {
        return Ok(None);
    }
    let (sx, sy) = s.tangential();
    let (tx, ty) = t.tangential();
    Ok(Some(ConstraintRow {
        b: [i2 * sx - i1 * tx, i2 * sy - i1 * ty],
        h: i2 * s.z() - i1 * t.z(),
        weight: 1.0,
        kind: RowKind::IntensityRatio,
    }))
}

/// Phase collinearity row `(-cos φ', sin φ') · ∇z = 0`, with the 90 degree
/// shift at specular pixels.
pub fn phase_row(phi: f64, specular: bool) -> ConstraintRow {
    let phi = if specular { phi + std::f64::consts::FRAC_PI_2 } else { phi };
    ConstraintRow { b: [-phi.cos(), phi.sin()], h: 0.0, weight: 1.0, kind: RowKind::Phase }
}

/// Two rows pinning the gradient to the halfway vector of `s` and `v`:
/// specular-dominant pixels mirror the source into the camera.
pub fn specular_normal_rows(s: UnitVector3, v: UnitVector3) -> Result<[ConstraintRow; 2]> {
    let hx = s.x() + v.x();
    let hy = s.y() + v.y();
    let hz = s.z() + v.z();
    let norm = (hx * hx + hy * hy + hz * hz).sqrt();
    if norm < 1e-12 || hz / norm <= 1e-9 {
        return Err(Error::Domain("halfway vector degenerate for specular rows".into()));
    }
    let gx = -hx / hz;
    let gy = -hy / hz;
    Ok([
        ConstraintRow { b: [1.0, 0.0], h: gx, weight: 1.0, kind: RowKind::SpecularNormal },
        ConstraintRow { b: [0.0, 1.0], h: gy, weight: 1.0, kind: RowKind::SpecularNormal },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankStatus {
    FullRank,
    Deficient,
}

/// Rank test of the 2x2 per-pixel matrix of the single-source baseline.
/// With `v = e_z` the determinant is proportional to
/// `s1 sin(phi) + s2 cos(phi)`, vanishing exactly when `s1 = -s2` and
/// `phi = pi/4`.
pub fn rank_check_srt16(dop: &ConstraintRow, phase: &ConstraintRow, eps: f64) -> RankStatus {
    let det = dop.b[0] * phase.b[1] - dop.b[1] * phase.b[0];
    if det.abs() < eps {
        RankStatus::Deficient
    } else {
        RankStatus::FullRank
    }
}

/// Stacked per-pixel rows over the valid domain.
#[derive(Debug, Clone)]
pub struct ConstraintField {
    mask: Mask,
    offsets: Vec<u32>,
    rows: Vec<ConstraintRow>,
}

impl ConstraintField {
    /// Build a field from explicit per-pixel row lists (mask ordinal order).
    pub fn from_rows(mask: Mask, per_pixel: Vec<Vec<ConstraintRow>>) -> Result<Self> {
        if per_pixel.len() != mask.count() {
            return Err(Error::MaskMismatch(format!(
                "{} row lists for {} masked pixels",
                per_pixel.len(),
                mask.count()
            )));
        }
        let mut offsets = Vec::with_capacity(per_pixel.len() + 1);
        let mut rows = Vec::new();
        offsets.push(0u32);
        for list in per_pixel {
            rows.extend(list);
            offsets.push(rows.len() as u32);
        }
        Ok(ConstraintField { mask, offsets, rows })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Rows of the k-th masked pixel.
    pub fn rows_for(&self, ordinal: usize) -> &[ConstraintRow] {
        &self.rows[self.offsets[ordinal] as usize..self.offsets[ordinal + 1] as usize]
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    /// Debug dump, one row per line. Not a stable format.
    pub fn dump_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "x,y,kind,b1,b2,h,weight")?;
        let w = self.mask.width();
        for (k, &p) in self.mask.indices().iter().enumerate() {
            let (x, y) = (p as usize % w, p as usize / w);
            for row in self.rows_for(k) {
                writeln!(
                    out,
                    "{},{},{:?},{},{},{},{}",
                    x, y, row.kind, row.b[0], row.b[1], row.h, row.weight
                )?;
            }
        }
        Ok(())
    }
}

struct LightChannels<'a> {
    i1: Vec<&'a PixelGrid<f64>>,
    i2: Vec<&'a PixelGrid<f64>>,
}

fn split_channels<'a>(
    variant: MethodVariant,
    pol: &'a PolarisationImage,
    pol2: Option<&'a PolarisationImage>,
    opts: &AssembleOptions,
) -> Result<LightChannels<'a>> {
    if !variant.needs_second_light() {
        // single-source variant: when the image carries both lights'
        // channels (light_split set), use only the first light's
        let take = opts.light_split.unwrap_or(pol.i_un.len());
        if take == 0 || take > pol.i_un.len() {
            return Err(Error::InvalidInput(format!(
                "light_split {take} outside 1..={}",
                pol.i_un.len()
            )));
        }
        return Ok(LightChannels { i1: pol.i_un[..take].iter().collect(), i2: Vec::new() });
    }
    match pol2 {
        Some(second) => {
            if second.i_un.len() != pol.i_un.len() {
                return Err(Error::InvalidInput(format!(
                    "the two polarisation images have {} and {} channels",
                    pol.i_un.len(),
                    second.i_un.len()
                )));
            }
            Ok(LightChannels {
                i1: pol.i_un.iter().collect(),
                i2: second.i_un.iter().collect(),
            })
        }
        None => {
            let split = opts.light_split.unwrap_or(pol.i_un.len() / 2);
            if split == 0 || split * 2 != pol.i_un.len() {
                return Err(Error::MissingInput {
                    variant: variant.name(),
                    what: "two-light intensity channels (light_split must halve the channel list)",
                });
            }
            Ok(LightChannels {
                i1: pol.i_un[..split].iter().collect(),
                i2: pol.i_un[split..].iter().collect(),
            })
        }
    }
}

fn coplanarity_det(s: UnitVector3, t: UnitVector3, v: UnitVector3) -> f64 {
    s.x() * (t.y() * v.z() - t.z() * v.y()) - s.y() * (t.x() * v.z() - t.z() * v.x())
        + s.z() * (t.x() * v.y() - t.y() * v.x())
}

/// Stack the rows of a method variant over every valid pixel.
///
/// `albedo` is the assumed reflectance entering the DOP rows (one grid, or
/// one per colour channel); variants that use DOP rows require it. At
/// specular pixels the photometric rows are replaced by halfway-vector rows
/// and phase rows use the shifted angle.
#[allow(clippy::too_many_arguments)]
pub fn assemble(
    variant: MethodVariant,
    pol: &PolarisationImage,
    pol2: Option<&PolarisationImage>,
    s: UnitVector3,
    t: Option<UnitVector3>,
    viewer: UnitVector3,
    albedo: Option<&[PixelGrid<f64>]>,
    specular: Option<&Mask>,
    eta: RefractiveIndex,
    opts: &AssembleOptions,
) -> Result<ConstraintField> {
    let channels = split_channels(variant, pol, pol2, opts)?;
    let n_channels = channels.i1.len();

    let t = if variant.needs_second_light() {
        Some(t.ok_or(Error::MissingInput { variant: variant.name(), what: "second light direction" })?)
    } else {
        t
    };
    if let Some(t) = t {
        if variant.needs_second_light() && s.angle_to(&t) < 1e-12 {
            return Err(Error::InvalidInput(
                "intensity ratio needs two distinct light directions".into(),
            ));
        }
    }

    let albedo = if variant.needs_albedo() {
        let maps = albedo.ok_or(Error::MissingInput {
            variant: variant.name(),
            what: "an assumed albedo map for the DOP rows",
        })?;
        if maps.len() != 1 && maps.len() != n_channels {
            return Err(Error::InvalidInput(format!(
                "albedo has {} channels, expected 1 or {}",
                maps.len(),
                n_channels
            )));
        }
        Some(maps)
    } else {
        None
    };

    if variant == MethodVariant::Prop2 {
        let det = coplanarity_det(s, t.unwrap(), viewer);
        if det.abs() < 1e-8 {
            return Err(Error::CoplanarLights { det });
        }
    }

    let mask = match pol2 {
        Some(second) => pol.valid.and(&second.valid)?,
        None => pol.valid.clone(),
    };
    if let Some(spec) = specular {
        if spec.width() != mask.width() || spec.height() != mask.height() {
            return Err(Error::MaskMismatch("specular mask shape differs from domain".into()));
        }
    }
    let rho_sup = eta.rho_max() * (1.0 - 1e-12);

    let mut offsets = Vec::with_capacity(mask.count() + 1);
    let mut rows: Vec<ConstraintRow> = Vec::with_capacity(mask.count() * 4);
    offsets.push(0u32);

    let weights = opts.weights;
    for &p in mask.indices() {
        let p = p as usize;
        let is_spec = specular.is_some_and(|m| m.contains_pixel(p));
        let phi = pol.phi.at(p);

        if is_spec {
            // photometric rows are meaningless under mirror reflection
            let mut pair = specular_normal_rows(s, viewer)?;
            for r in &mut pair {
                r.weight = weights.specular;
                rows.push(*r);
            }
            if variant.uses_phase() {
                let mut row = phase_row(phi, true);
                row.weight = weights.phase;
                rows.push(row);
            }
            offsets.push(rows.len() as u32);
            continue;
        }

        if variant.uses_dop() {
            let rho = pol.rho.at(p).min(rho_sup);
            let f = f_of_rho(rho, eta)?;
            for c in 0..n_channels {
                let gamma = match albedo {
                    Some(maps) => maps[if maps.len() == 1 { 0 } else { c }].at(p),
                    None => 1.0,
                };
                if let Some(mut row) = dop_ratio_row(
                    channels.i1[c].at(p),
                    f,
                    gamma,
                    s,
                    viewer,
                    opts.min_intensity,
                    opts.min_f,
                ) {
                    row.weight = weights.dop;
                    rows.push(row);
                }
                if variant.needs_second_light() {
                    if let Some(mut row) = dop_ratio_row(
                        channels.i2[c].at(p),
                        f,
                        gamma,
                        t.unwrap(),
                        viewer,
                        opts.min_intensity,
                        opts.min_f,
                    ) {
                        row.weight = weights.dop;
                        rows.push(row);
                    }
                }
            }
        }

        if variant.uses_intensity_ratio() {
            for c in 0..n_channels {
                if let Some(mut row) = intensity_ratio_row(
                    channels.i1[c].at(p),
                    channels.i2[c].at(p),
                    s,
                    t.unwrap(),
                    opts.min_intensity,
                )? {
                    row.weight = weights.intensity;
                    rows.push(row);
                }
            }
        }

        if variant.uses_phase() {
            let mut row = phase_row(phi, false);
            row.weight = weights.phase;
            rows.push(row);
        }

        offsets.push(rows.len() as u32);
    }

    Ok(ConstraintField { mask, offsets, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::DiffScheme;
    use crate::optics::{lambert_intensity, normal_from_gradient, Gradient2};
    use crate::poldecomp::{fit_multichannel, FitOptions};
    use crate::synth::{render_stack, AlbedoKind, SceneConfig, SurfaceKind};

    fn s_light() -> UnitVector3 {
        UnitVector3::new(1.0, 0.0, 5.0).unwrap()
    }

    fn t_light() -> UnitVector3 {
        UnitVector3::new(-1.0, -2.0, 7.0).unwrap()
    }

    #[test]
    fn dop_row_holds_on_a_flat_fronto_parallel_pixel() {
        // f = 1 at zenith zero, i_un = gamma * s3, so h must vanish
        let s = s_light();
        let gamma = 0.8;
        let i_un = gamma * s.z();
        let row = dop_ratio_row(i_un, 1.0, gamma, s, UnitVector3::Z, 1e-4, 1e-3).unwrap();
        assert!(row.h.abs() < 1e-15);
        assert!((row.b[0] + gamma * s.x()).abs() < 1e-15);
        assert!(row.residual(0.0, 0.0).abs() < 1e-15);
    }

    #[test]
    fn dop_row_excludes_dark_and_grazing_pixels() {
        let s = s_light();
        assert!(dop_ratio_row(1e-5, 1.0, 1.0, s, UnitVector3::Z, 1e-4, 1e-3).is_none());
        assert!(dop_ratio_row(0.5, 1e-4, 1.0, s, UnitVector3::Z, 1e-4, 1e-3).is_none());
    }

    #[test]
    fn intensity_row_rejects_equal_lights_and_scales_homogeneously() {
        let s = s_light();
        assert!(intensity_ratio_row(0.5, 0.5, s, s, 1e-4).is_err());
        let t = t_light();
        let r1 = intensity_ratio_row(0.3, 0.4, s, t, 1e-4).unwrap().unwrap();
        let r2 = intensity_ratio_row(0.6, 0.8, s, t, 1e-4).unwrap().unwrap();
        for i in 0..2 {
            assert!((2.0 * r1.b[i] - r2.b[i]).abs() < 1e-15);
        }
        assert!((2.0 * r1.h - r2.h).abs() < 1e-15);
        assert!(intensity_ratio_row(1e-6, 1e-7, s, t, 1e-4).unwrap().is_none());
    }

    #[test]
    fn phase_row_examples() {
        let row = phase_row(std::f64::consts::FRAC_PI_4, false);
        assert!(row.residual(1.0, 1.0).abs() < 1e-15);
        let row = phase_row(std::f64::consts::FRAC_PI_2, false);
        for p in [-3.0, 0.0, 7.5] {
            assert!(row.residual(p, 0.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_row_is_invariant_under_pi_shift() {
        let a = phase_row(0.3, false);
        let b = phase_row(0.3 + std::f64::consts::PI, false);
        // both components negate; the constraint set is identical
        assert!((a.b[0] + b.b[0]).abs() < 1e-12);
        assert!((a.b[1] + b.b[1]).abs() < 1e-12);
    }

    #[test]
    fn specular_rows_pin_the_halfway_gradient() {
        let rows = specular_normal_rows(UnitVector3::Z, UnitVector3::Z).unwrap();
        assert_eq!(rows[0].h, 0.0);
        assert_eq!(rows[1].h, 0.0);

        let s = s_light();
        let rows = specular_normal_rows(s, UnitVector3::Z).unwrap();
        // algebraically h1 = -s1 / (s3 + 1) for v = e_z
        let expect = -s.x() / (s.z() + 1.0);
        assert!((rows[0].h - expect).abs() < 1e-12);
        assert!((rows[0].h + 1.0 / (26.0f64.sqrt() + 5.0)).abs() < 1e-12);
    }

    #[test]
    fn srt16_rank_deficiency_condition() {
        let s = UnitVector3::new(1.0, -1.0, 2.0).unwrap();
        let make = |phi: f64| {
            let dop = dop_ratio_row(0.5, 0.9, 1.0, s, UnitVector3::Z, 1e-4, 1e-3).unwrap();
            (dop, phase_row(phi, false))
        };
        let (d, p) = make(std::f64::consts::FRAC_PI_4);
        assert_eq!(rank_check_srt16(&d, &p, 1e-12), RankStatus::Deficient);
        let (d, p) = make(std::f64::consts::FRAC_PI_4 + 0.01);
        assert_eq!(rank_check_srt16(&d, &p, 1e-12), RankStatus::FullRank);
        let (d, p) = make(std::f64::consts::FRAC_PI_4 - 0.01);
        assert_eq!(rank_check_srt16(&d, &p, 1e-12), RankStatus::FullRank);

        // s2 = 0 keeps the matrix regular at phi = pi/4
        let s0 = s_light();
        let dop = dop_ratio_row(0.5, 0.9, 1.0, s0, UnitVector3::Z, 1e-4, 1e-3).unwrap();
        let ph = phase_row(std::f64::consts::FRAC_PI_4, false);
        assert_eq!(rank_check_srt16(&dop, &ph, 1e-12), RankStatus::FullRank);
    }

    fn two_light_scene(albedo: AlbedoKind) -> (crate::synth::CapturedStack, PolarisationImage) {
        let cfg = SceneConfig {
            width: 24,
            height: 24,
            surface: SurfaceKind::GaussianPeak { amplitude: 5.0, width: 6.0 },
            mask_radius: Some(10.0),
            albedo,
            lights: vec![s_light(), t_light()],
            viewer: UnitVector3::Z,
            eta: RefractiveIndex::default(),
            polariser_angles: SceneConfig::uniform_angles_deg(10.0),
            noise_sigma: 0.0,
            bit_depth: None,
            seed: 3,
            scheme: DiffScheme::Forward,
        };
        let stack = render_stack(&cfg).unwrap();
        let mut channels = Vec::new();
        for l in 0..stack.n_lights() {
            for c in 0..stack.colour_channels {
                channels.push(stack.angle_series(l, c));
            }
        }
        let (pol, _) =
            fit_multichannel(&channels, &stack.angles, &stack.mask, None, &FitOptions::default())
                .unwrap();
        (stack, pol)
    }

    #[test]
    fn all_variants_are_satisfied_by_ground_truth() {
        let (stack, pol) = two_light_scene(AlbedoKind::Uniform { levels: vec![0.85] });
        let alb = [PixelGrid::filled(24, 24, 0.85)];
        let opts = AssembleOptions { light_split: Some(1), ..Default::default() };
        for variant in
            [MethodVariant::Srt16, MethodVariant::Prop1, MethodVariant::Prop2, MethodVariant::Prop3]
        {
            let field = assemble(
                variant,
                &pol,
                None,
                s_light(),
                Some(t_light()),
                UnitVector3::Z,
                Some(&alb),
                None,
                RefractiveIndex::default(),
                &opts,
            )
            .unwrap();
            let mut worst = 0.0f64;
            for (k, &p) in field.mask().indices().iter().enumerate() {
                let p = p as usize;
                let (zx, zy) = (stack.truth.grad_x.at(p), stack.truth.grad_y.at(p));
                for row in field.rows_for(k) {
                    worst = worst.max(row.residual(zx, zy).abs());
                }
            }
            assert!(worst < 1e-9, "{variant}: worst residual {worst}");
        }
    }

    #[test]
    fn prop1_rows_scale_positively_under_albedo_change() {
        // checkerboard vs uniform albedo over the same geometry: rows are
        // the same constraint sets, scaled per pixel
        let (_, pol_u) = two_light_scene(AlbedoKind::Uniform { levels: vec![0.5] });
        let (_, pol_c) = two_light_scene(AlbedoKind::Checkerboard {
            low: vec![0.25],
            high: vec![1.0],
            square: 4,
        });
        let make = |pol: &PolarisationImage| {
            assemble(
                MethodVariant::Prop1,
                pol,
                None,
                s_light(),
                Some(t_light()),
                UnitVector3::Z,
                None,
                None,
                RefractiveIndex::default(),
                &AssembleOptions::default(),
            )
            .unwrap()
        };
        let fu = make(&pol_u);
        let fc = make(&pol_c);
        for (k, _) in fu.mask().indices().iter().enumerate() {
            let (ru, rc) = (fu.rows_for(k), fc.rows_for(k));
            assert_eq!(ru.len(), rc.len());
            for (a, b) in ru.iter().zip(rc) {
                if a.kind == RowKind::Phase {
                    // shared geometry, identical rows
                    assert!((a.b[0] - b.b[0]).abs() < 1e-9 && (a.b[1] - b.b[1]).abs() < 1e-9);
                    continue;
                }
                // find the positive per-pixel scale from the largest entry
                let denom = [a.b[0], a.b[1], a.h]
                    .iter()
                    .cloned()
                    .fold(0.0f64, |m: f64, v| if v.abs() > m.abs() { v } else { m });
                let numer = if denom == a.b[0] {
                    b.b[0]
                } else if denom == a.b[1] {
                    b.b[1]
                } else {
                    b.h
                };
                if denom.abs() < 1e-12 {
                    continue;
                }
                let lambda = numer / denom;
                assert!(lambda > 0.0, "scale must be positive");
                assert!((b.b[0] - lambda * a.b[0]).abs() < 1e-9);
                assert!((b.b[1] - lambda * a.b[1]).abs() < 1e-9);
                assert!((b.h - lambda * a.h).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prop2_rejects_coplanar_geometry() {
        let (_, pol) = two_light_scene(AlbedoKind::Uniform { levels: vec![0.85] });
        // s, t and v all in the x-z plane
        let s = UnitVector3::new(1.0, 0.0, 5.0).unwrap();
        let t = UnitVector3::new(-1.0, 0.0, 7.0).unwrap();
        let alb = [PixelGrid::filled(24, 24, 1.0)];
        let err = assemble(
            MethodVariant::Prop2,
            &pol,
            None,
            s,
            Some(t),
            UnitVector3::Z,
            Some(&alb),
            None,
            RefractiveIndex::default(),
            &AssembleOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CoplanarLights { .. }));
    }

    #[test]
    fn missing_inputs_are_reported_per_variant() {
        let (_, pol) = two_light_scene(AlbedoKind::Uniform { levels: vec![0.85] });
        // srt16 without albedo
        let err = assemble(
            MethodVariant::Srt16,
            &pol,
            None,
            s_light(),
            None,
            UnitVector3::Z,
            None,
            None,
            RefractiveIndex::default(),
            &AssembleOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingInput { .. }));
        // prop1 without a second light
        let err = assemble(
            MethodVariant::Prop1,
            &pol,
            None,
            s_light(),
            None,
            UnitVector3::Z,
            None,
            None,
            RefractiveIndex::default(),
            &AssembleOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingInput { .. }));
    }

    #[test]
    fn specular_pixels_swap_photometric_rows() {
        let (_, pol) = two_light_scene(AlbedoKind::Uniform { levels: vec![0.85] });
        let mut spec_grid = PixelGrid::filled(24, 24, false);
        let some_pixel = pol.valid.indices()[pol.valid.count() / 2] as usize;
        spec_grid.set_at(some_pixel, true);
        let spec = Mask::from_grid(spec_grid);
        let field = assemble(
            MethodVariant::Prop3,
            &pol,
            None,
            s_light(),
            Some(t_light()),
            UnitVector3::Z,
            Some(&[PixelGrid::filled(24, 24, 1.0)]),
            Some(&spec),
            RefractiveIndex::default(),
            &AssembleOptions::default(),
        )
        .unwrap();
        let ordinal = field.mask().ordinal(some_pixel).unwrap();
        let rows = field.rows_for(ordinal);
        assert_eq!(rows.iter().filter(|r| r.kind == RowKind::SpecularNormal).count(), 2);
        assert_eq!(rows.iter().filter(|r| r.kind == RowKind::Phase).count(), 1);
        assert_eq!(rows.iter().filter(|r| r.kind == RowKind::DopRatio).count(), 0);
        assert_eq!(rows.iter().filter(|r| r.kind == RowKind::IntensityRatio).count(), 0);
        // the shifted phase row differs from the diffuse one
        let diffuse = phase_row(pol.phi.at(some_pixel), false);
        let spec_row = rows.iter().find(|r| r.kind == RowKind::Phase).unwrap();
        assert!((diffuse.b[0] - spec_row.b[0]).abs() > 1e-6);
    }

    #[test]
    fn noiseless_two_light_residuals_vanish_everywhere() {
        // direct check of the row constructors against analytic shading
        let s = s_light();
        let t = t_light();
        for &(zx, zy) in &[(0.0, 0.0), (0.4, -0.2), (-1.0, 0.6), (2.0, 1.0)] {
            let g = Gradient2::new(zx, zy);
            let n = normal_from_gradient(g);
            let gamma = 0.7;
            let i1 = lambert_intensity(g, s, gamma);
            let i2 = lambert_intensity(g, t, gamma);
            let row = intensity_ratio_row(i1, i2, s, t, 1e-9).unwrap().unwrap();
            assert!(row.residual(zx, zy).abs() < 1e-12);
            let theta = n.z().acos();
            let rho =
                crate::optics::rho_from_zenith(theta, RefractiveIndex::default()).unwrap();
            let f = f_of_rho(rho, RefractiveIndex::default()).unwrap();
            let row = dop_ratio_row(i1, f, gamma, s, UnitVector3::Z, 1e-9, 1e-9).unwrap();
            assert!(row.residual(zx, zy).abs() < 1e-10, "{}", row.residual(zx, zy));
        }
    }

    #[test]
    fn dump_csv_emits_one_line_per_row() {
        let (_, pol) = two_light_scene(AlbedoKind::Uniform { levels: vec![0.85] });
        let field = assemble(
            MethodVariant::Prop1,
            &pol,
            None,
            s_light(),
            Some(t_light()),
            UnitVector3::Z,
            None,
            None,
            RefractiveIndex::default(),
            &AssembleOptions::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        field.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), field.n_rows() + 1);
    }
}
