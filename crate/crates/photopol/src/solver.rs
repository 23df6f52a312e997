//! Discretisation of the unified PDE system and the sparse least-squares
//! height solve.
//!
//! The constraint field `B ∇z = h` becomes `A z = h̄` with `A = B̄ G`, where
//! `G` maps stacked heights to stacked finite-difference gradients over the
//! masked domain. Height is recoverable up to an additive constant under
//! orthographic projection, so one pixel is removed from the variables and
//! pinned to zero.

use std::time::Instant;

use crate::albedo;
use crate::constraints::{assemble, AssembleOptions, ConstraintField, MethodVariant};
use crate::diff::{self, AxisStencil, DiffScheme, PixelStencil};
use crate::error::{Error, Result};
use crate::grid::{Mask, PixelGrid};
use crate::optics::{RefractiveIndex, UnitVector3};
use crate::poldecomp::PolarisationImage;
use crate::sparse::{lsq_normal_cg, CgOptions, Csr, CsrBuilder};

/// Finite-difference gradient of the masked domain, kept in stencil form so
/// constraint rows can be folded in without materialising `B̄` separately.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    mask: Mask,
    scheme: DiffScheme,
    stencils: Vec<PixelStencil>,
    missing_axes: usize,
}

impl GradientOperator {
    pub fn build(mask: &Mask, scheme: DiffScheme) -> Result<Self> {
        if mask.count() < 2 {
            return Err(Error::Mask(format!(
                "domain has {} pixels, need at least 2",
                mask.count()
            )));
        }
        if !mask.is_connected() {
            return Err(Error::Mask(
                "domain is disconnected; the single pinned constant cannot bridge components"
                    .into(),
            ));
        }
        let stencils = diff::stencils(mask, scheme);
        let missing_axes = stencils
            .iter()
            .map(|s| {
                usize::from(matches!(s.x, AxisStencil::Missing))
                    + usize::from(matches!(s.y, AxisStencil::Missing))
            })
            .sum();
        Ok(GradientOperator { mask: mask.clone(), scheme, stencils, missing_axes })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn scheme(&self) -> DiffScheme {
        self.scheme
    }

    pub fn stencils(&self) -> &[PixelStencil] {
        &self.stencils
    }

    /// Derivative rows that had no usable neighbour and were zeroed.
    pub fn missing_axes(&self) -> usize {
        self.missing_axes
    }

    /// Materialise `G` as a sparse 2M x M matrix: x-derivative rows first,
    /// then y-derivative rows, columns in mask ordinal order.
    pub fn to_csr(&self) -> Csr {
        let m = self.mask.count();
        let mut b = CsrBuilder::new(m);
        let entry = |axis: AxisStencil, out: &mut Vec<(u32, f64)>| {
            if let AxisStencil::Diff { plus, minus, scale } = axis {
                let op = self.mask.ordinal(plus as usize).unwrap() as u32;
                let om = self.mask.ordinal(minus as usize).unwrap() as u32;
                out.push((op, scale));
                out.push((om, -scale));
            }
        };
        let mut scratch = Vec::with_capacity(2);
        for st in &self.stencils {
            scratch.clear();
            entry(st.x, &mut scratch);
            b.push_row(&scratch);
        }
        for st in &self.stencils {
            scratch.clear();
            entry(st.y, &mut scratch);
            b.push_row(&scratch);
        }
        b.finish()
    }

    /// Gradient grids of a height map through the same stencils.
    pub fn gradient_of(&self, z: &PixelGrid<f64>) -> (PixelGrid<f64>, PixelGrid<f64>) {
        diff::gradient_grids(z, &self.mask, self.scheme)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub cg: CgOptions,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverStats {
    /// Masked pixels.
    pub pixels: usize,
    /// Free height variables (pixels minus the pinned one).
    pub unknowns: usize,
    /// Stacked constraint rows.
    pub rows: usize,
    pub iterations: usize,
    /// Relative 2-norm of the normal-equation residual at exit.
    pub rel_residual: f64,
    /// `|A'(Az - h)|_inf / |A'h|_inf`, the optimality certificate.
    pub optimality: f64,
    /// Data misfit `|Az - h|_2` at the solution.
    pub data_residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct HeightSolution {
    /// Heights on the masked domain, zero outside; the pinned pixel is 0.
    pub z: PixelGrid<f64>,
    pub mask: Mask,
    pub pinned_pixel: usize,
    pub stats: SolverStats,
}

fn masks_agree(a: &Mask, b: &Mask) -> bool {
    a.width() == b.width() && a.height() == b.height() && a.indices() == b.indices()
}

/// Least-squares height from a constraint field and a gradient operator on
/// the same domain.
pub fn solve_height(
    field: &ConstraintField,
    g: &GradientOperator,
    opts: &SolveOptions,
) -> Result<HeightSolution> {
    let start = Instant::now();
    let mask = g.mask();
    if !masks_agree(field.mask(), mask) {
        return Err(Error::MaskMismatch(
            "constraint field and gradient operator cover different domains".into(),
        ));
    }
    let m = mask.count();
    let pinned_pixel = mask.centroid_pixel().expect("non-empty mask");
    let pinned_ord = mask.ordinal(pinned_pixel).unwrap();
    let var_of = |ordinal: usize| -> Option<u32> {
        match ordinal.cmp(&pinned_ord) {
            std::cmp::Ordering::Less => Some(ordinal as u32),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some((ordinal - 1) as u32),
        }
    };

    let mut builder = CsrBuilder::new(m - 1);
    let mut rhs: Vec<f64> = Vec::new();
    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(4);
    let mut n_rows = 0usize;
    for (k, st) in g.stencils().iter().enumerate() {
        for row in field.rows_for(k) {
            entries.clear();
            let mut push = |axis: AxisStencil, coeff: f64| {
                if coeff == 0.0 {
                    return;
                }
                if let AxisStencil::Diff { plus, minus, scale } = axis {
                    let op = mask.ordinal(plus as usize).unwrap();
                    let om = mask.ordinal(minus as usize).unwrap();
                    if let Some(v) = var_of(op) {
                        entries.push((v, coeff * scale));
                    }
                    if let Some(v) = var_of(om) {
                        entries.push((v, -coeff * scale));
                    }
                }
            };
            let w = row.weight;
            push(st.x, w * row.b[0]);
            push(st.y, w * row.b[1]);
            // merge duplicate columns from the shared centre pixel
            entries.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
            for &(c, v) in entries.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            builder.push_row(&merged);
            rhs.push(w * row.h);
            n_rows += 1;
        }
    }
    if n_rows == 0 {
        return Err(Error::SingularSystem("constraint field has no rows".into()));
    }

    let a = builder.finish();
    let at = a.transpose();
    let (x, outcome) = lsq_normal_cg(&a, &at, &rhs, &opts.cg)?;

    // optimality certificate and data misfit
    let mut ax = vec![0.0; a.nrows()];
    a.matvec(&x, &mut ax);
    let mut data_residual = 0.0;
    for (axi, bi) in ax.iter_mut().zip(&rhs) {
        *axi -= bi;
        data_residual += *axi * *axi;
    }
    let data_residual = data_residual.sqrt();
    let mut grad = vec![0.0; a.ncols()];
    at.matvec(&ax, &mut grad);
    let grad_inf = grad.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut atb = vec![0.0; a.ncols()];
    at.matvec(&rhs, &mut atb);
    let atb_inf = atb.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let optimality = if atb_inf > 0.0 { grad_inf / atb_inf } else { 0.0 };

    let mut z = PixelGrid::filled(mask.width(), mask.height(), 0.0);
    for (ord, &p) in mask.indices().iter().enumerate() {
        if let Some(v) = var_of(ord) {
            z.set_at(p as usize, x[v as usize]);
        }
    }

    Ok(HeightSolution {
        z,
        mask: mask.clone(),
        pinned_pixel,
        stats: SolverStats {
            pixels: m,
            unknowns: m - 1,
            rows: n_rows,
            iterations: outcome.iterations,
            rel_residual: outcome.rel_residual,
            optimality,
            data_residual,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Prop13Options {
    pub max_outer: usize,
    /// Relative height change that stops the alternation.
    pub height_rel_tol: f64,
    /// Gradient-consistency weight for the albedo refit; `None` keeps the
    /// pointwise estimate (the all-diffuse synthetic default).
    pub albedo_lambda: Option<f64>,
    pub solve: SolveOptions,
}

impl Default for Prop13Options {
    fn default() -> Self {
        Prop13Options {
            max_outer: 10,
            height_rel_tol: 1e-5,
            albedo_lambda: None,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prop13Result {
    pub height: HeightSolution,
    pub albedo: Vec<PixelGrid<f64>>,
    pub outer_iterations: usize,
    /// Relative height change of each accepted outer iteration; the
    /// alternation stops as soon as this stops shrinking, so the history is
    /// non-increasing.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Albedo-invariant solve followed by albedo estimation and the fully
/// constrained refit, alternated until the height settles. The iteration
/// stops when the relative height change drops below tolerance or stops
/// contracting (keeping the last contracting iterate), or at the cap.
#[allow(clippy::too_many_arguments)]
pub fn solve_prop13(
    pol: &PolarisationImage,
    pol2: Option<&PolarisationImage>,
    s: UnitVector3,
    t: UnitVector3,
    viewer: UnitVector3,
    eta: RefractiveIndex,
    specular: Option<&Mask>,
    g: &GradientOperator,
    asm: &AssembleOptions,
    opts: &Prop13Options,
) -> Result<Prop13Result> {
    let field1 = assemble(
        MethodVariant::Prop1,
        pol,
        pol2,
        s,
        Some(t),
        viewer,
        None,
        specular,
        eta,
        asm,
    )?;
    let mut current = solve_height(&field1, g, &opts.solve)?;
    let mut history = Vec::with_capacity(opts.max_outer);
    let mut best_albedo: Vec<PixelGrid<f64>> = Vec::new();
    let mut converged = false;
    let mut outer = 0usize;

    let split = asm.light_split.unwrap_or(pol.i_un.len() / 2);
    let (i1, i2): (Vec<&PixelGrid<f64>>, Vec<&PixelGrid<f64>>) = match pol2 {
        Some(second) => (pol.i_un.iter().collect(), second.i_un.iter().collect()),
        None => (pol.i_un[..split].iter().collect(), pol.i_un[split..].iter().collect()),
    };

    for it in 0..opts.max_outer {
        outer = it + 1;
        let estimate = albedo::albedo_pointwise(
            &current.z,
            g.mask(),
            g.scheme(),
            &i1,
            Some(&i2),
            s,
            Some(t),
            specular,
        )?;
        let maps = match opts.albedo_lambda {
            Some(lambda) if lambda > 0.0 => albedo::albedo_with_consistency(
                &estimate,
                &i1,
                &current.z,
                g,
                s,
                lambda,
                &opts.solve.cg,
            )?,
            _ => estimate.maps.clone(),
        };
        let field3 = assemble(
            MethodVariant::Prop3,
            pol,
            pol2,
            s,
            Some(t),
            viewer,
            Some(&maps),
            specular,
            eta,
            asm,
        )?;
        let refit = solve_height(&field3, g, &opts.solve)?;

        let rel = relative_change(&refit.z, &current.z, g.mask());
        if let Some(&prev) = history.last() {
            if rel >= prev {
                // contraction stalled; keep the previous iterate
                converged = true;
                break;
            }
        }
        history.push(rel);
        current = refit;
        best_albedo = maps;
        if rel < opts.height_rel_tol {
            converged = true;
            break;
        }
    }

    if best_albedo.is_empty() {
        // max_outer == 0: report the pointwise albedo of the prop1 height
        best_albedo = albedo::albedo_pointwise(
            &current.z,
            g.mask(),
            g.scheme(),
            &i1,
            Some(&i2),
            s,
            Some(t),
            specular,
        )?
        .maps;
    }

    Ok(Prop13Result {
        height: current,
        albedo: best_albedo,
        outer_iterations: outer,
        residual_history: history,
        converged,
    })
}

fn relative_change(a: &PixelGrid<f64>, b: &PixelGrid<f64>, mask: &Mask) -> f64 {
    let mut diff = 0.0;
    let mut base = 0.0;
    for &p in mask.indices() {
        let p = p as usize;
        let d = a.at(p) - b.at(p);
        diff += d * d;
        base += b.at(p) * b.at(p);
    }
    (diff / base.max(1e-300)).sqrt()
}
