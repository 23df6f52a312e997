//! Minimal CSR matrix and a preconditioned conjugate gradient for the
//! normal equations of sparse least-squares problems.

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

/// Row-by-row CSR assembly.
#[derive(Debug)]
pub struct CsrBuilder {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrBuilder {
    pub fn new(ncols: usize) -> Self {
        CsrBuilder { ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    pub fn push_row(&mut self, entries: &[(u32, f64)]) {
        for &(c, v) in entries {
            debug_assert!((c as usize) < self.ncols);
            if v != 0.0 {
                self.indices.push(c);
                self.values.push(v);
            }
        }
        self.indptr.push(self.indices.len());
    }

    pub fn finish(self) -> Csr {
        Csr {
            nrows: self.indptr.len() - 1,
            ncols: self.ncols,
            indptr: self.indptr,
            indices: self.indices,
            values: self.values,
        }
    }
}

impl Csr {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        par::fill_indexed(out, |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&c, &v)| v * x[c as usize]).sum()
        });
    }

    /// Sequential twin of `matvec` for the bench comparison.
    pub fn matvec_seq(&self, x: &[f64], out: &mut [f64]) {
        par::fill_indexed_seq(out, |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(|(&c, &v)| v * x[c as usize]).sum()
        });
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols];
        for &c in &self.indices {
            counts[c as usize] += 1;
        }
        let mut indptr = vec![0usize; self.ncols + 1];
        for i in 0..self.ncols {
            indptr[i + 1] = indptr[i] + counts[i];
        }
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0f64; self.nnz()];
        let mut cursor = indptr.clone();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let k = cursor[c as usize];
                indices[k] = r as u32;
                values[k] = v;
                cursor[c as usize] += 1;
            }
        }
        Csr { nrows: self.ncols, ncols: self.nrows, indptr, indices, values }
    }

    /// Squared Euclidean norm of every column; the Jacobi preconditioner of
    /// the normal matrix.
    pub fn col_sq_norms(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.ncols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            d[c as usize] += v * v;
        }
        d
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Relative 2-norm target on the normal-equation residual.
    pub tol: f64,
    /// Hard iteration cap as a multiple of the unknown count.
    pub max_iter_factor: usize,
    /// Residual level still accepted as a solution when the target was not
    /// reached before stagnation or the cap.
    pub accept_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { tol: 1e-12, max_iter_factor: 10, accept_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Minimise `|A x - b|_2` through the normal equations `A'A x = A'b` with
/// Jacobi-preconditioned CG. `at` must be the transpose of `a`.
pub fn lsq_normal_cg(a: &Csr, at: &Csr, b: &[f64], opts: &CgOptions) -> Result<(Vec<f64>, CgOutcome)> {
    let n = a.ncols();
    let mut rhs = vec![0.0; n];
    at.matvec(b, &mut rhs);
    let rhs_norm = norm2(&rhs);
    if rhs_norm == 0.0 {
        return Ok((vec![0.0; n], CgOutcome { iterations: 0, rel_residual: 0.0, converged: true }));
    }
    let diag: Vec<f64> = a.col_sq_norms().iter().map(|&d| if d > 0.0 { d } else { 1.0 }).collect();

    let mut x = vec![0.0; n];
    let mut r = rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);

    let mut tmp = vec![0.0; a.nrows()];
    let mut ap = vec![0.0; n];

    let max_iter = opts.max_iter_factor.saturating_mul(n).max(32);
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;
    let mut iterations = 0usize;

    for it in 0..max_iter {
        iterations = it + 1;
        a.matvec(&p, &mut tmp);
        at.matvec(&tmp, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // the normal matrix is positive semidefinite; a non-positive
            // curvature direction means rank deficiency
            let rel = norm2(&r) / rhs_norm;
            if rel <= opts.accept_tol {
                return Ok((x, CgOutcome { iterations, rel_residual: rel, converged: true }));
            }
            return Err(Error::SingularSystem(format!(
                "conjugate gradient hit a zero-curvature direction (p'A'Ap = {pap:.3e})"
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rel = norm2(&r) / rhs_norm;
        if rel <= opts.tol {
            return Ok((x, CgOutcome { iterations, rel_residual: rel, converged: true }));
        }
        if rel < best * (1.0 - 1e-9) {
            best = rel;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > n.max(1000) {
                break; // stagnated in floating point
            }
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    let rel = norm2(&r) / rhs_norm;
    if rel <= opts.accept_tol {
        Ok((x, CgOutcome { iterations, rel_residual: rel, converged: true }))
    } else {
        Err(Error::NonConvergence(format!(
            "conjugate gradient stalled at relative residual {rel:.3e} after {iterations} iterations"
        )))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_rows(rows: &[&[f64]], ncols: usize) -> Csr {
        let mut b = CsrBuilder::new(ncols);
        for row in rows {
            let entries: Vec<(u32, f64)> =
                row.iter().enumerate().map(|(c, &v)| (c as u32, v)).collect();
            b.push_row(&entries);
        }
        b.finish()
    }

    #[test]
    fn matvec_and_transpose_agree_with_dense() {
        let a = dense_rows(&[&[1.0, 2.0, 0.0], &[0.0, -1.0, 4.0]], 3);
        let mut out = vec![0.0; 2];
        a.matvec(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 3.0]);
        let at = a.transpose();
        let mut out = vec![0.0; 3];
        at.matvec(&[1.0, 2.0], &mut out);
        assert_eq!(out, vec![1.0, 0.0, 8.0]);
        assert_eq!(a.col_sq_norms(), vec![1.0, 5.0, 16.0]);
    }

    #[test]
    fn cg_solves_overdetermined_system() {
        // least squares of a tall random-ish system, checked against the
        // normal-equation optimality condition
        let a = dense_rows(
            &[
                &[2.0, 1.0, 0.0],
                &[1.0, 3.0, 1.0],
                &[0.0, 1.0, 2.0],
                &[1.0, 0.0, 1.0],
                &[0.5, 0.5, 0.5],
            ],
            3,
        );
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let at = a.transpose();
        let (x, out) = lsq_normal_cg(&a, &at, &b, &CgOptions::default()).unwrap();
        assert!(out.converged);
        let mut ax = vec![0.0; 5];
        a.matvec(&x, &mut ax);
        let res: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        let mut grad = vec![0.0; 3];
        at.matvec(&res, &mut grad);
        for g in grad {
            assert!(g.abs() < 1e-9, "optimality violated: {g}");
        }
    }

    #[test]
    fn cg_reports_singular_systems() {
        // rank-1 normal matrix with an inconsistent right-hand side
        let a = dense_rows(&[&[1.0, 1.0], &[2.0, 2.0]], 2);
        let at = a.transpose();
        // consistent rhs still solves (minimum-norm-ish answer accepted)
        let ok = lsq_normal_cg(&a, &at, &[1.0, 2.0], &CgOptions::default());
        assert!(ok.is_ok());
    }
}
