//! Streaming mean and standard-error estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean with its standard error `std / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { mean: value, se: 0.0, n: 0 }
    }

    /// `|self - other| <= k * combined SE + allowance`.
    pub fn agrees_with(&self, other: &Estimate, k: f64, allowance: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.se.hypot(other.se) + allowance
    }
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Result<Estimate> {
        if self.n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: self.n });
        }
        Ok(self.summary())
    }

    /// Like [`Self::estimate`] but accepts a single sample (SE 0).
    pub fn summary(&self) -> Estimate {
        Estimate { mean: self.mean, se: (self.variance() / self.n.max(1) as f64).sqrt(), n: self.n }
    }
}

impl Extend<f64> for Accumulator {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.push(x);
        }
    }
}

pub fn estimate_with_se(samples: &[f64]) -> Result<Estimate> {
    let mut acc = Accumulator::new();
    acc.extend(samples.iter().copied());
    acc.estimate()
}

/// Mean and SE allowing a single sample; `EmptySample` on none.
pub fn summarize(samples: impl IntoIterator<Item = f64>) -> Result<Estimate> {
    let mut acc = Accumulator::new();
    acc.extend(samples);
    if acc.count() == 0 {
        return Err(Error::EmptySample);
    }
    Ok(acc.summary())
}

/// `sum_i w_i X_i` for independent estimates.
pub fn linear_combination(parts: &[(f64, Estimate)]) -> Estimate {
    let mean = parts.iter().map(|(w, e)| w * e.mean).sum();
    let var: f64 = parts.iter().map(|(w, e)| (w * e.se).powi(2)).sum();
    Estimate { mean, se: var.sqrt(), n: parts.iter().map(|(_, e)| e.n).min().unwrap_or(0) }
}
