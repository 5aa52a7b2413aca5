//! Deterministic parallel evaluation of independent trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monte Carlo size, step and seed; `workers = 0` uses the global pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub dt: f64,
    pub seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub fn new(n: usize, dt: f64, seed: u64) -> Self {
        McConfig { n, dt, seed, workers: 0 }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        McConfig { workers, ..self }
    }
}

/// Evaluates `f(0..n)` on `workers` threads; the output is in index order,
/// so any later reduction is independent of scheduling.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers == 0 {
        return Ok((0..n as u64).into_par_iter().map(&f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n as u64).into_par_iter().map(&f).collect()))
}

/// [`map_indexed`] for fallible tasks; the first error by index wins.
pub fn try_map_indexed<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    map_indexed(n, workers, f)?.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let f = |i: u64| (i as f64).sqrt().sin();
        let a = map_indexed(1000, 1, f).unwrap();
        let b = map_indexed(1000, 4, f).unwrap();
        assert_eq!(a, b);
        let e = try_map_indexed(10, 2, |i| if i == 3 { Err(Error::EmptySample) } else { Ok(i) });
        assert_eq!(e.unwrap_err(), Error::EmptySample);
    }
}
