//! Finite-difference stencils on masked grids.
//!
//! One stencil definition is shared by the synthetic renderer, the height
//! solver and the evaluation metrics, so "the gradient of a height map"
//! means the same thing everywhere in the pipeline.

use crate::grid::{Mask, PixelGrid};
use crate::optics::Gradient2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffScheme {
    /// Forward difference, falling back to the backward one at the far
    /// boundary. Exact on affine height fields, at most two nonzeros.
    #[default]
    Forward,
    /// Centred difference where both neighbours exist, one-sided otherwise.
    Central,
}

/// A derivative along one axis as a short linear combination of heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisStencil {
    /// `scale * (z[plus] - z[minus])`; `plus`/`minus` are linear pixel ids.
    Diff { plus: u32, minus: u32, scale: f64 },
    /// Neither neighbour is inside the mask; the derivative row is zero and
    /// flagged.
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelStencil {
    pub x: AxisStencil,
    pub y: AxisStencil,
}

/// Build one stencil per masked pixel, in mask ordinal order.
pub fn stencils(mask: &Mask, scheme: DiffScheme) -> Vec<PixelStencil> {
    let w = mask.width();
    let h = mask.height();
    let inside = |x: i64, y: i64| -> Option<u32> {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return None;
        }
        mask.contains(x as usize, y as usize).then_some((y as usize * w + x as usize) as u32)
    };
    let axis = |x: i64, y: i64, dx: i64, dy: i64| -> AxisStencil {
        let here = inside(x, y).expect("stencil pixel inside mask");
        let fwd = inside(x + dx, y + dy);
        let bwd = inside(x - dx, y - dy);
        match scheme {
            DiffScheme::Forward => match (fwd, bwd) {
                (Some(f), _) => AxisStencil::Diff { plus: f, minus: here, scale: 1.0 },
                (None, Some(b)) => AxisStencil::Diff { plus: here, minus: b, scale: 1.0 },
                (None, None) => AxisStencil::Missing,
            },
            DiffScheme::Central => match (fwd, bwd) {
                (Some(f), Some(b)) => AxisStencil::Diff { plus: f, minus: b, scale: 0.5 },
                (Some(f), None) => AxisStencil::Diff { plus: f, minus: here, scale: 1.0 },
                (None, Some(b)) => AxisStencil::Diff { plus: here, minus: b, scale: 1.0 },
                (None, None) => AxisStencil::Missing,
            },
        }
    };
    mask.indices()
        .iter()
        .map(|&p| {
            let (x, y) = ((p as usize % w) as i64, (p as usize / w) as i64);
            PixelStencil { x: axis(x, y, 1, 0), y: axis(x, y, 0, 1) }
        })
        .collect()
}

#[inline]
fn eval(stencil: AxisStencil, z: &PixelGrid<f64>) -> f64 {
    match stencil {
        AxisStencil::Diff { plus, minus, scale } => {
            scale * (z.at(plus as usize) - z.at(minus as usize))
        }
        AxisStencil::Missing => 0.0,
    }
}

/// Per-pixel (z_x, z_y) grids of a masked height map; zero outside the mask.
pub fn gradient_grids(
    z: &PixelGrid<f64>,
    mask: &Mask,
    scheme: DiffScheme,
) -> (PixelGrid<f64>, PixelGrid<f64>) {
    let sts = stencils(mask, scheme);
    let mut gx = PixelGrid::filled(z.width(), z.height(), 0.0);
    let mut gy = PixelGrid::filled(z.width(), z.height(), 0.0);
    for (&p, st) in mask.indices().iter().zip(&sts) {
        gx.set_at(p as usize, eval(st.x, z));
        gy.set_at(p as usize, eval(st.y, z));
    }
    (gx, gy)
}

/// Gradient of a masked height map at one masked pixel ordinal.
pub fn gradient_at(z: &PixelGrid<f64>, st: &PixelStencil) -> Gradient2 {
    Gradient2::new(eval(st.x, z), eval(st.y, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_stencil_is_exact_on_affine_fields() {
        let mask = Mask::full(16, 16);
        let z = PixelGrid::from_fn(16, 16, |x, y| 2.0 * x as f64 + 3.0 * y as f64 + 5.0);
        let (gx, gy) = gradient_grids(&z, &mask, DiffScheme::Forward);
        for &p in mask.indices() {
            assert!((gx.at(p as usize) - 2.0).abs() < 1e-12);
            assert!((gy.at(p as usize) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_one_mask_uses_single_difference() {
        let mut g = PixelGrid::filled(2, 1, true);
        g.set(0, 0, true);
        let mask = Mask::from_grid(g);
        let sts = stencils(&mask, DiffScheme::Forward);
        assert_eq!(sts[0].x, AxisStencil::Diff { plus: 1, minus: 0, scale: 1.0 });
        assert_eq!(sts[0].y, AxisStencil::Missing);
        assert_eq!(sts[1].x, AxisStencil::Diff { plus: 1, minus: 0, scale: 1.0 });
    }

    #[test]
    fn central_scheme_halves_through_two_pixels() {
        let mask = Mask::full(3, 1);
        let z = PixelGrid::from_vec(3, 1, vec![0.0, 1.0, 4.0]).unwrap();
        let (gx, _) = gradient_grids(&z, &mask, DiffScheme::Central);
        assert_eq!(gx.at(0), 1.0); // one-sided at the edge
        assert_eq!(gx.at(1), 2.0); // (4 - 0)/2
        assert_eq!(gx.at(2), 3.0);
    }
}
