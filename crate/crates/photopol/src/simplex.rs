//! Derivative-free Nelder-Mead minimisation with standard coefficients
//! (reflection 1, expansion 2, contraction 0.5, shrink 0.5).

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iter: usize,
    /// Convergence on the simplex extent.
    pub x_tol: f64,
    /// Convergence on the value spread.
    pub f_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { max_iter: 800, x_tol: 1e-9, f_tol: 1e-13 }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `f` from `x0` with per-coordinate initial steps.
pub fn minimize(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert_eq!(step.len(), n);
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((f(x0), x0.to_vec()));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 1e-4 };
        simplex.push((f(&v), v));
    }

    let mut iterations = 0;
    let mut converged = false;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

        let spread = simplex[n].0 - simplex[0].0;
        let extent = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|(_, v)| (v[i] - simplex[0].1[i]).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if spread.abs() <= opts.f_tol * (simplex[0].0.abs() + 1e-30) && extent <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (_, v) in simplex.iter().take(n) {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.1).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let reflected = along(1.0);
        let fr = f(&reflected);
        if fr < simplex[0].0 {
            let expanded = along(2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (fe, expanded) } else { (fr, reflected) };
        } else if fr < simplex[n - 1].0 {
            simplex[n] = (fr, reflected);
        } else {
            let contracted = if fr < worst.0 { along(0.5) } else { along(-0.5) };
            let fc = f(&contracted);
            if fc < worst.0.min(fr) {
                simplex[n] = (fc, contracted);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    for (vi, bi) in entry.1.iter_mut().zip(&best) {
                        *vi = bi + 0.5 * (*vi - bi);
                    }
                    entry.0 = f(&entry.1);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let (value, x) = simplex.swap_remove(0);
    SimplexResult { x, value, iterations, converged }
}
