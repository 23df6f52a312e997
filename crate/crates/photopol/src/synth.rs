//! Ground-truth scene generation and polariser-stack simulation.
//!
//! A scene is rendered per light, colour channel and polariser angle from
//! the transmitted-radiance sinusoid of the diffuse model; Gaussian noise,
//! saturation and quantisation imitate a real capture. Gaussian noise is
//! derived per pixel from counter-based streams, so renders are bit-stable
//! under any thread schedule.

use std::path::PathBuf;

use crate::diff::{self, DiffScheme};
use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::io;
use crate::optics::{
    diffuse_phase, lambert_intensity, normal_from_gradient, rho_from_zenith, Gradient2,
    RefractiveIndex, UnitVector3,
};
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceKind {
    /// z = slope_x * x + slope_y * y
    Plane { slope_x: f64, slope_y: f64 },
    /// z = amplitude * exp(-(x^2 + y^2) / width^2), centred on the grid
    GaussianPeak { amplitude: f64, width: f64 },
    /// Single-channel float map on disk.
    FromFile(PathBuf),
}

/// Build a height map. For `FromFile` the grid takes the file's own
/// dimensions; the requested ones are ignored.
pub fn make_surface(kind: &SurfaceKind, width: usize, height: usize) -> Result<PixelGrid<f64>> {
    match kind {
        SurfaceKind::Plane { slope_x, slope_y } => Ok(PixelGrid::from_fn(width, height, |x, y| {
            slope_x * x as f64 + slope_y * y as f64
        })),
        SurfaceKind::GaussianPeak { amplitude, width: w } => {
            if *w <= 0.0 || !w.is_finite() {
                return Err(Error::InvalidInput("gaussian peak width must be positive".into()));
            }
            let cx = (width as f64 - 1.0) / 2.0;
            let cy = (height as f64 - 1.0) / 2.0;
            Ok(PixelGrid::from_fn(width, height, |x, y| {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                amplitude * (-(dx * dx + dy * dy) / (w * w)).exp()
            }))
        }
        SurfaceKind::FromFile(path) => {
            let channels = io::read_float_map(path)?;
            if channels.len() != 1 {
                return Err(Error::Format(format!(
                    "height map {} has {} channels, expected 1",
                    path.display(),
                    channels.len()
                )));
            }
            Ok(channels.into_iter().next().unwrap())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlbedoKind {
    /// One constant level per colour channel.
    Uniform { levels: Vec<f64> },
    /// Two-level checkerboard with per-channel levels.
    Checkerboard { low: Vec<f64>, high: Vec<f64>, square: usize },
}

impl AlbedoKind {
    pub fn channels(&self) -> usize {
        match self {
            AlbedoKind::Uniform { levels } => levels.len(),
            AlbedoKind::Checkerboard { low, .. } => low.len(),
        }
    }
}

pub fn make_albedo(kind: &AlbedoKind, width: usize, height: usize) -> Result<Vec<PixelGrid<f64>>> {
    let check_levels = |levels: &[f64]| -> Result<()> {
        if levels.is_empty() {
            return Err(Error::InvalidInput("albedo needs at least one channel".into()));
        }
        for &v in levels {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("albedo level {v} outside [0, 1]")));
            }
        }
        Ok(())
    };
    match kind {
        AlbedoKind::Uniform { levels } => {
            check_levels(levels)?;
            Ok(levels.iter().map(|&v| PixelGrid::filled(width, height, v)).collect())
        }
        AlbedoKind::Checkerboard { low, high, square } => {
            check_levels(low)?;
            check_levels(high)?;
            if low.len() != high.len() {
                return Err(Error::InvalidInput("checkerboard level lists differ in length".into()));
            }
            if *square < 1 {
                return Err(Error::InvalidInput("checker squares must be at least 1 pixel".into()));
            }
            Ok(low
                .iter()
                .zip(high)
                .map(|(&lo, &hi)| {
                    PixelGrid::from_fn(width, height, |x, y| {
                        if (x / square + y / square) % 2 == 1 {
                            hi
                        } else {
                            lo
                        }
                    })
                })
                .collect())
        }
    }
}

/// Everything needed to simulate one capture session.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub surface: SurfaceKind,
    /// Restrict Ω to a centred disc; `None` keeps the full rectangle.
    pub mask_radius: Option<f64>,
    pub albedo: AlbedoKind,
    pub lights: Vec<UnitVector3>,
    pub viewer: UnitVector3,
    pub eta: RefractiveIndex,
    /// Polariser angles in radians; at least three.
    pub polariser_angles: Vec<f64>,
    /// Noise standard deviation as a fraction of full-scale intensity.
    pub noise_sigma: f64,
    /// `Some(b)` saturates to [0, 1] and quantises to 2^b - 1 levels;
    /// `None` keeps continuous values.
    pub bit_depth: Option<u32>,
    pub seed: u64,
    pub scheme: DiffScheme,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("scene dimensions must be positive".into()));
        }
        if self.polariser_angles.len() < 3 {
            return Err(Error::InvalidInput("need at least three polariser angles".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidInput("noise sigma must be nonnegative".into()));
        }
        if self.lights.is_empty() || self.lights.len() > 2 {
            return Err(Error::InvalidInput("scenes use one or two light sources".into()));
        }
        if let Some(b) = self.bit_depth {
            if b == 0 || b > 24 {
                return Err(Error::InvalidInput(format!("bit depth {b} outside 1..=24")));
            }
        }
        Ok(())
    }

    /// Angles `0, step, 2*step, ...` covering [0, 180) degrees.
    pub fn uniform_angles_deg(step: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut a: f64 = 0.0;
        while a < 180.0 - 1e-9 {
            out.push(a.to_radians());
            a += step;
        }
        out
    }
}

/// Retained ground truth for evaluation against reconstructions.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub height: PixelGrid<f64>,
    pub grad_x: PixelGrid<f64>,
    pub grad_y: PixelGrid<f64>,
    pub normals: PixelGrid<[f64; 3]>,
    /// Unpolarised intensity per (light, colour channel), light-major.
    pub i_un: Vec<PixelGrid<f64>>,
    pub rho: PixelGrid<f64>,
    pub phi: PixelGrid<f64>,
    pub albedo: Vec<PixelGrid<f64>>,
}

/// A simulated capture: one image per (light, colour channel, polariser
/// angle), plus the scene's ground truth.
#[derive(Debug, Clone)]
pub struct CapturedStack {
    pub lights: Vec<UnitVector3>,
    pub viewer: UnitVector3,
    pub eta: RefractiveIndex,
    pub angles: Vec<f64>,
    pub colour_channels: usize,
    pub noise_sigma: f64,
    pub bit_depth: Option<u32>,
    pub seed: u64,
    pub mask: Mask,
    /// Light-major, then channel, then angle.
    pub images: Vec<PixelGrid<f64>>,
    pub truth: GroundTruth,
}

impl CapturedStack {
    #[inline]
    pub fn image_index(&self, light: usize, channel: usize, angle: usize) -> usize {
        (light * self.colour_channels + channel) * self.angles.len() + angle
    }

    pub fn image(&self, light: usize, channel: usize, angle: usize) -> &PixelGrid<f64> {
        &self.images[self.image_index(light, channel, angle)]
    }

    pub fn n_lights(&self) -> usize {
        self.lights.len()
    }

    /// Images of one (light, channel) pair across all polariser angles.
    pub fn angle_series(&self, light: usize, channel: usize) -> Vec<&PixelGrid<f64>> {
        (0..self.angles.len()).map(|j| self.image(light, channel, j)).collect()
    }
}

#[inline]
fn quantise(v: f64, bit_depth: Option<u32>) -> f64 {
    match bit_depth {
        Some(b) => {
            let levels = ((1u64 << b) - 1) as f64;
            (v.clamp(0.0, 1.0) * levels).round() / levels
        }
        None => v,
    }
}

/// Simulate the polariser stack for a scene.
pub fn render_stack(cfg: &SceneConfig) -> Result<CapturedStack> {
    cfg.validate()?;
    let height_map = make_surface(&cfg.surface, cfg.width, cfg.height)?;
    let (w, h) = (height_map.width(), height_map.height());
    let mask = match cfg.mask_radius {
        Some(r) => Mask::disc(w, h, r),
        None => Mask::full(w, h),
    };
    if mask.count() == 0 {
        return Err(Error::Mask("scene mask is empty".into()));
    }
    let albedo = make_albedo(&cfg.albedo, w, h)?;
    let channels = albedo.len();
    let (grad_x, grad_y) = diff::gradient_grids(&height_map, &mask, cfg.scheme);

    let npix = w * h;
    let mut normals = PixelGrid::filled(w, h, [0.0, 0.0, 1.0]);
    let mut rho = PixelGrid::filled(w, h, 0.0);
    let mut phi = PixelGrid::filled(w, h, 0.0);
    for &p in mask.indices() {
        let p = p as usize;
        let g = Gradient2::new(grad_x.at(p), grad_y.at(p));
        let n = normal_from_gradient(g);
        normals.set_at(p, n.components());
        let theta = n.z().clamp(-1.0, 1.0).acos();
        rho.set_at(p, rho_from_zenith(theta, cfg.eta)?);
        phi.set_at(p, diffuse_phase(n.x(), n.y()));
    }

    let mut i_un = Vec::with_capacity(cfg.lights.len() * channels);
    for light in &cfg.lights {
        for alb in &albedo {
            let light = *light;
            let vals = par::map_range(npix, |p| {
                if mask.contains_pixel(p) {
                    let g = Gradient2::new(grad_x.at(p), grad_y.at(p));
                    lambert_intensity(g, light, alb.at(p))
                } else {
                    0.0
                }
            });
            i_un.push(PixelGrid::from_vec(w, h, vals)?);
        }
    }

    let n_angles = cfg.polariser_angles.len();
    let mut images = Vec::with_capacity(i_un.len() * n_angles);
    for (series, iu) in i_un.iter().enumerate() {
        for (j, &angle) in cfg.polariser_angles.iter().enumerate() {
            let stream_base = ((series * n_angles + j) * npix) as u64;
            let vals = par::map_range(npix, |p| {
                if !mask.contains_pixel(p) {
                    return 0.0;
                }
                let mut v =
                    iu.at(p) * (1.0 + rho.at(p) * (2.0 * angle - 2.0 * phi.at(p)).cos());
                if cfg.noise_sigma > 0.0 {
                    v += cfg.noise_sigma * rng::gaussian(cfg.seed, stream_base + p as u64);
                }
                quantise(v, cfg.bit_depth)
            });
            images.push(PixelGrid::from_vec(w, h, vals)?);
        }
    }

    Ok(CapturedStack {
        lights: cfg.lights.clone(),
        viewer: cfg.viewer,
        eta: cfg.eta,
        angles: cfg.polariser_angles.clone(),
        colour_channels: channels,
        noise_sigma: cfg.noise_sigma,
        bit_depth: cfg.bit_depth,
        seed: cfg.seed,
        mask,
        images,
        truth: GroundTruth {
            height: height_map,
            grad_x,
            grad_y,
            normals,
            i_un,
            rho,
            phi,
            albedo,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_cfg() -> SceneConfig {
        SceneConfig {
            width: 24,
            height: 24,
            surface: SurfaceKind::GaussianPeak { amplitude: 5.0, width: 6.0 },
            mask_radius: None,
            albedo: AlbedoKind::Uniform { levels: vec![0.9] },
            lights: vec![UnitVector3::new(1.0, 0.0, 5.0).unwrap()],
            viewer: UnitVector3::Z,
            eta: RefractiveIndex::default(),
            polariser_angles: SceneConfig::uniform_angles_deg(10.0),
            noise_sigma: 0.0,
            bit_depth: None,
            seed: 1,
            scheme: DiffScheme::Forward,
        }
    }

    #[test]
    fn plane_surface_is_constant_when_flat() {
        let z = make_surface(&SurfaceKind::Plane { slope_x: 0.0, slope_y: 0.0 }, 8, 8).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_peak_matches_formula() {
        let z = make_surface(&SurfaceKind::GaussianPeak { amplitude: 2.0, width: 3.0 }, 9, 9)
            .unwrap();
        assert!((z.get(4, 4) - 2.0).abs() < 1e-12);
        let expected = 2.0 * (-(16.0 + 16.0) / 9.0f64).exp();
        assert!((z.get(0, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn from_file_surface_matches_the_stored_map() {
        let dir = std::env::temp_dir().join(format!("photopol-synth-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("height.phmap");
        let z = PixelGrid::from_fn(6, 5, |x, y| 0.5 * x as f64 - 1.25 * y as f64);
        crate::io::write_float_map(&path, &[&z], None).unwrap();
        let back = make_surface(&SurfaceKind::FromFile(path), 0, 0).unwrap();
        assert_eq!(back.width(), 6);
        assert_eq!(back.height(), 5);
        for p in 0..z.len() {
            assert!((back.at(p) - z.at(p)).abs() < 1e-6);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkerboard_alternates_with_square_size() {
        let maps = make_albedo(
            &AlbedoKind::Checkerboard { low: vec![0.4], high: vec![1.0], square: 8 },
            32,
            32,
        )
        .unwrap();
        let m = &maps[0];
        assert_eq!(m.get(0, 0), 0.4);
        assert_eq!(m.get(8, 0), 1.0);
        assert_eq!(m.get(8, 8), 0.4);
        assert_eq!(m.get(15, 0), 1.0);
        assert_eq!(m.get(16, 0), 0.4);
    }

    #[test]
    fn per_channel_checkerboard() {
        let maps = make_albedo(
            &AlbedoKind::Checkerboard {
                low: vec![0.4, 0.5, 0.6],
                high: vec![1.0, 0.9, 0.8],
                square: 2,
            },
            4,
            4,
        )
        .unwrap();
        assert_eq!(maps.len(), 3);
        assert_eq!(maps[1].get(0, 0), 0.5);
        assert_eq!(maps[2].get(2, 0), 0.8);
    }

    #[test]
    fn flat_scene_under_zenith_light_saturates_to_full_scale() {
        let mut cfg = simple_cfg();
        cfg.surface = SurfaceKind::Plane { slope_x: 0.0, slope_y: 0.0 };
        cfg.albedo = AlbedoKind::Uniform { levels: vec![1.0] };
        cfg.lights = vec![UnitVector3::Z];
        cfg.bit_depth = Some(8);
        let stack = render_stack(&cfg).unwrap();
        for img in &stack.images {
            assert!(img.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn zero_rho_pixels_have_constant_angle_series() {
        let mut cfg = simple_cfg();
        cfg.surface = SurfaceKind::Plane { slope_x: 0.0, slope_y: 0.0 };
        let stack = render_stack(&cfg).unwrap();
        let first = stack.image(0, 0, 0).get(3, 3);
        for j in 0..stack.angles.len() {
            assert_eq!(stack.image(0, 0, j).get(3, 3), first);
        }
    }

    #[test]
    fn mean_over_uniform_angles_recovers_i_un() {
        // the cosine term sums to zero over a uniform [0, 180) schedule
        let cfg = simple_cfg();
        let stack = render_stack(&cfg).unwrap();
        for &p in stack.mask.indices() {
            let p = p as usize;
            let mean: f64 = (0..stack.angles.len())
                .map(|j| stack.image(0, 0, j).at(p))
                .sum::<f64>()
                / stack.angles.len() as f64;
            assert!(
                (mean - stack.truth.i_un[0].at(p)).abs() < 1e-12,
                "pixel {p}: mean {mean} vs {}",
                stack.truth.i_un[0].at(p)
            );
        }
    }

    #[test]
    fn quantised_values_sit_on_the_level_grid() {
        let mut cfg = simple_cfg();
        cfg.noise_sigma = 0.01;
        cfg.bit_depth = Some(8);
        let stack = render_stack(&cfg).unwrap();
        let levels = 255.0;
        for img in &stack.images {
            for &v in img.data() {
                assert!((0.0..=1.0).contains(&v));
                let k = v * levels;
                assert!((k - k.round()).abs() < 1e-9, "off-grid value {v}");
            }
        }
    }

    #[test]
    fn render_is_deterministic_per_seed() {
        let mut cfg = simple_cfg();
        cfg.noise_sigma = 0.02;
        let a = render_stack(&cfg).unwrap();
        let b = render_stack(&cfg).unwrap();
        assert_eq!(a.images[7].data(), b.images[7].data());
        cfg.seed = 2;
        let c = render_stack(&cfg).unwrap();
        assert_ne!(a.images[7].data(), c.images[7].data());
    }

    #[test]
    fn ground_truth_satisfies_the_sinusoid_model() {
        let cfg = simple_cfg();
        let stack = render_stack(&cfg).unwrap();
        let t = &stack.truth;
        for &p in stack.mask.indices() {
            let p = p as usize;
            for (j, &ang) in stack.angles.iter().enumerate() {
                let model =
                    t.i_un[0].at(p) * (1.0 + t.rho.at(p) * (2.0 * ang - 2.0 * t.phi.at(p)).cos());
                assert!((stack.image(0, 0, j).at(p) - model).abs() < 1e-12);
            }
        }
    }
}
