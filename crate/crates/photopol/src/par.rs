//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these fan out over rayon's global
//! pool; without it they degrade to plain sequential loops so the crate
//! builds on targets where threads are unwelcome. All call sites are
//! order-independent, so both paths produce identical results.

/// Below this element count the fan-out cost exceeds the work saved.
const PARALLEL_CUTOFF: usize = 4096;

#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if n < PARALLEL_CUTOFF {
        return (0..n).map(f).collect();
    }
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    if out.len() < PARALLEL_CUTOFF {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
        return;
    }
    out.par_iter_mut()
        .with_min_len(1024)
        .enumerate()
        .for_each(|(i, v)| *v = f(i));
}

#[cfg(not(feature = "parallel"))]
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64,
{
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

/// Sequential twins, kept unconditionally so benches can compare the two
/// code paths inside one binary.
pub fn map_range_seq<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

pub fn fill_indexed_seq<F: Fn(usize) -> f64>(out: &mut [f64], f: F) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}
