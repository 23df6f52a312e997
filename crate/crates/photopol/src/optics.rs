//! Geometric and optical primitives shared by the whole pipeline: normals
//! from height gradients, the diffuse polarisation forward model and its
//! closed-form inversion, and Lambertian shading.

use crate::error::{Error, Result};

/// Default refractive index for dielectric surfaces when none is given.
pub const DEFAULT_ETA: f64 = 1.5;

/// Zenith cap applied wherever tan(theta) is formed, to keep gradients
/// bounded near occluding boundaries.
pub const ZENITH_CAP: f64 = 89.5 * std::f64::consts::PI / 180.0;

/// Surface height gradient (z_x, z_y) at a pixel, in height-units per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Gradient2 {
    pub zx: f64,
    pub zy: f64,
}

impl Gradient2 {
    pub fn new(zx: f64, zy: f64) -> Self {
        Gradient2 { zx, zy }
    }

    #[inline]
    pub fn norm_sq(&self) -> f64 {
        self.zx * self.zx + self.zy * self.zy
    }
}

/// Unit 3-vector. Lights and the viewer additionally live in the upper
/// hemisphere (positive z component).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3 {
    x: f64,
    y: f64,
    z: f64,
}

impl UnitVector3 {
    /// Normalise an arbitrary non-zero vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidInput("cannot normalise a zero vector".into()));
        }
        Ok(UnitVector3 { x: x / n, y: y / n, z: z / n })
    }

    /// Accept components only if already unit length to 1e-12.
    pub fn try_unit(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("vector norm {n} is not 1")));
        }
        Ok(UnitVector3 { x, y, z })
    }

    /// A light or viewer direction: unit length and z > 0.
    pub fn upper_hemisphere(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = UnitVector3::new(x, y, z)?;
        if v.z <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "direction ({x}, {y}, {z}) is not in the upper hemisphere"
            )));
        }
        Ok(v)
    }

    pub const Z: UnitVector3 = UnitVector3 { x: 0.0, y: 0.0, z: 1.0 };

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    /// In-plane part (x, y); the s-tilde of the ratio constraints.
    #[inline]
    pub fn tangential(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    #[inline]
    pub fn dot(&self, other: &UnitVector3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Convex/concave twin: diag(-1, -1, 1) applied to the vector.
    pub fn flip_xy(&self) -> Self {
        UnitVector3 { x: -self.x, y: -self.y, z: self.z }
    }

    pub fn angle_to(&self, other: &UnitVector3) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    pub fn components(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Refractive index of the surface material, assumed known and > 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractiveIndex(f64);

impl RefractiveIndex {
    pub fn new(eta: f64) -> Result<Self> {
        if eta <= 1.0 || !eta.is_finite() {
            return Err(Error::InvalidInput(format!("refractive index {eta} must be > 1")));
        }
        Ok(RefractiveIndex(eta))
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.0
    }

    /// Supremum of the diffuse degree of polarisation as the zenith angle
    /// approaches grazing: (eta^2 - 1) / (eta^2 + 1).
    pub fn rho_max(&self) -> f64 {
        let e2 = self.0 * self.0;
        (e2 - 1.0) / (e2 + 1.0)
    }
}

impl Default for RefractiveIndex {
    fn default() -> Self {
        RefractiveIndex(DEFAULT_ETA)
    }
}

/// Outward unit normal of a surface with gradient g:
/// `[-z_x, -z_y, 1] / sqrt(1 + |∇z|^2)`.
#[inline]
pub fn normal_from_gradient(g: Gradient2) -> UnitVector3 {
    let inv = 1.0 / (1.0 + g.norm_sq()).sqrt();
    UnitVector3 { x: -g.zx * inv, y: -g.zy * inv, z: inv }
}

/// Degree of diffuse polarisation as a function of the zenith angle.
///
/// Strictly increasing on [0, pi/2) for any eta > 1, zero at zenith 0 and
/// approaching `eta.rho_max()` at grazing.
pub fn rho_from_zenith(theta: f64, eta: RefractiveIndex) -> Result<f64> {
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&theta) {
        return Err(Error::Domain(format!("zenith angle {theta} outside [0, pi/2)")));
    }
    let e = eta.value();
    let s2 = theta.sin().powi(2);
    let num = (e - 1.0 / e).powi(2) * s2;
    let den = 2.0 + 2.0 * e * e - (e + 1.0 / e).powi(2) * s2
        + 4.0 * theta.cos() * (e * e - s2).sqrt();
    Ok(num / den)
}

/// Cosine of the zenith angle from a measured degree of diffuse
/// polarisation; the closed-form inverse of `rho_from_zenith`.
pub fn f_of_rho(rho: f64, eta: RefractiveIndex) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) || rho >= eta.rho_max() {
        return Err(Error::Domain(format!(
            "degree of polarisation {rho} outside invertible range [0, {})",
            eta.rho_max()
        )));
    }
    let e = eta.value();
    let (e2, e3, e4) = (e * e, e * e * e, e * e * e * e);
    let r2 = rho * rho;
    let root = (1.0 - r2).sqrt();
    let num = e4 * (1.0 - r2) + 2.0 * e2 * (2.0 * r2 + rho - 1.0) + r2 + 2.0 * rho
        - 4.0 * e3 * rho * root
        + 1.0;
    let den = (rho + 1.0).powi(2) * (e4 + 1.0) + 2.0 * e2 * (3.0 * r2 + 2.0 * rho - 1.0);
    Ok((num.max(0.0) / den).sqrt())
}

/// Zenith angle implied by a degree of polarisation, capped below pi/2 so
/// that tan(theta) stays bounded.
pub fn zenith_from_rho(rho: f64, eta: RefractiveIndex) -> Result<f64> {
    let f = f_of_rho(rho, eta)?;
    Ok(f.clamp(-1.0, 1.0).acos().min(ZENITH_CAP))
}

/// Lambertian unpolarised intensity `albedo * max(n·s, 0)`, written in
/// gradient form. The clamp models attached shadow and is applied in the
/// forward direction only; reconstruction drops dark pixels instead.
pub fn lambert_intensity(g: Gradient2, light: UnitVector3, albedo: f64) -> f64 {
    debug_assert!(albedo >= 0.0);
    let (sx, sy) = light.tangential();
    let shading = (-g.zx * sx - g.zy * sy + light.z()) / (1.0 + g.norm_sq()).sqrt();
    (albedo * shading).max(0.0)
}

/// Diffuse phase angle of a normal with in-plane part (nx, ny), folded into
/// [0, pi). The phase direction convention is `[sin(phi), cos(phi)]`, which
/// makes the collinearity row `(-cos(phi), sin(phi)) · ∇z = 0` vanish on
/// ground truth.
pub fn diffuse_phase(nx: f64, ny: f64) -> f64 {
    fold_phase(f64::atan2(nx, ny))
}

/// Fold any angle into [0, pi).
pub fn fold_phase(phi: f64) -> f64 {
    let p = phi.rem_euclid(std::f64::consts::PI);
    if p >= std::f64::consts::PI {
        0.0
    } else {
        p
    }
}

/// Unit in-image direction implied by a phase angle: (sin(phi), cos(phi)).
#[inline]
pub fn phase_direction(phi: f64) -> (f64, f64) {
    (phi.sin(), phi.cos())
}
