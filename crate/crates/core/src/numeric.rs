//! Small numerical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SkewError};

/// Neumaier-compensated accumulator. Summation order is the caller's
/// iteration order, so results are reproducible for a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Upper `alpha`-quantile of the standard normal, i.e. z with P(Z > z) = alpha.
pub fn z_upper(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SkewError::InvalidProbability(alpha));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha))
}

/// Two-sided critical value z_{alpha/2} for a confidence level 1 - alpha.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SkewError::InvalidProbability(level));
    }
    z_upper((1.0 - level) / 2.0)
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SkewError::InvalidProbability(p));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

pub(crate) fn check_open_unit(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(SkewError::InvalidProbability(r))
    }
}
