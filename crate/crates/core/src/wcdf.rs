//! Weighted step-function cdf and the skewness functionals built on it.
//!
//! Every population truth and every plug-in estimate goes through
//! [`WeightedCdf`]: the population cdf is the equal-weight case, the Hájek,
//! Horvitz-Thompson and calibration estimators differ only in the masses.
//! Masses are normalized at construction, so functionals never depend on the
//! overall scale of the weights.

use serde::Serialize;

use crate::error::{Result, SkewError};
use crate::numeric::{check_open_unit, csum, CompensatedSum};

const JUMP_ULPS: f64 = 8.0;

/// Right-continuous step cdf F(t) = (sum of mass at values <= t) / total.
#[derive(Debug, Clone)]
pub struct WeightedCdf {
    values: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
    raw_total: f64,
}

/// Mean, median and mean absolute deviation about the median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocationSummary {
    pub mean: f64,
    pub median: f64,
    pub mad: f64,
}

impl WeightedCdf {
    /// Builds a cdf from (value, mass) pairs. Values are sorted, ties merged
    /// and zero masses dropped.
    pub fn new<I>(points: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for (v, m) in points {
            if !v.is_finite() {
                return Err(SkewError::InvalidInput(format!("non-finite value {v}")));
            }
            if !(m >= 0.0) || !m.is_finite() {
                return Err(SkewError::InvalidInput(format!("invalid mass {m}")));
            }
            if m > 0.0 {
                pts.push((v, m));
            }
        }
        if pts.is_empty() {
            return Err(SkewError::EmptyCdf);
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut values = Vec::with_capacity(pts.len());
        let mut raw_masses: Vec<f64> = Vec::with_capacity(pts.len());
        for (v, m) in pts {
            match values.last() {
                Some(&last) if last == v => *raw_masses.last_mut().unwrap() += m,
                _ => {
                    values.push(v);
                    raw_masses.push(m);
                }
            }
        }
        Ok(Self::from_sorted_unique(values, raw_masses))
    }

    /// Equal mass on every value, i.e. the finite population cdf.
    pub fn equal_weight(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| (v, 1.0)))
    }

    fn from_sorted_unique(values: Vec<f64>, raw_masses: Vec<f64>) -> Self {
        let raw_total = csum(raw_masses.iter().copied());
        let masses: Vec<f64> = raw_masses.iter().map(|m| m / raw_total).collect();
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = CompensatedSum::new();
        let mut prev = 0.0_f64;
        for m in &raw_masses {
            acc.add(*m);
            let c = (acc.value() / raw_total).max(prev).min(1.0);
            cumulative.push(c);
            prev = c;
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            values,
            masses,
            cumulative,
            raw_total,
        }
    }

    /// Number of distinct support points.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Normalized masses (summing to one).
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Sum of the masses as supplied, before normalization.
    pub fn raw_total(&self) -> f64 {
        self.raw_total
    }

    /// Kish effective size (sum m)^2 / sum m^2 of the normalized masses.
    pub fn effective_size(&self) -> f64 {
        1.0 / csum(self.masses.iter().map(|m| m * m))
    }

    /// F(t).
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Generalized inverse inf{x : F(x) >= r}.
    ///
    /// A cumulative mass within a few ulps below `r` counts as reaching it,
    /// so the result does not depend on how the masses were scaled.
    pub fn quantile(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(SkewError::InvalidProbability(r));
        }
        let threshold = r * (1.0 - JUMP_ULPS * f64::EPSILON);
        let k = self.cumulative.partition_point(|&c| c < threshold);
        Ok(self.values[k.min(self.values.len() - 1)])
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a valid probability")
    }

    pub fn mean(&self) -> f64 {
        csum(self.values.iter().zip(&self.masses).map(|(v, m)| v * m))
    }

    /// Mean absolute deviation about the median, E|X - nu|.
    pub fn mad_about_median(&self) -> f64 {
        let nu = self.median();
        csum(
            self.values
                .iter()
                .zip(&self.masses)
                .map(|(v, m)| m * (v - nu).abs()),
        )
    }

    /// E|X - nu| evaluated as the integral of F below the median plus the
    /// integral of 1 - F above it. Agrees with [`Self::mad_about_median`] up
    /// to rounding.
    pub fn mad_by_integral(&self) -> f64 {
        let nu = self.median();
        let mut acc = CompensatedSum::new();
        for k in 0..self.values.len().saturating_sub(1) {
            let width = self.values[k + 1] - self.values[k];
            if self.values[k] < nu {
                acc.add(self.cumulative[k] * width);
            } else {
                acc.add((1.0 - self.cumulative[k]) * width);
            }
        }
        acc.value()
    }

    pub fn summary(&self) -> LocationSummary {
        LocationSummary {
            mean: self.mean(),
            median: self.median(),
            mad: self.mad_about_median(),
        }
    }

    /// Hinkley's generalization of Bowley's quartile skewness,
    /// (q(1-r) + q(r) - 2 q(0.5)) / (q(1-r) - q(r)).
    pub fn b2(&self, r: f64) -> Result<f64> {
        check_open_unit(r)?;
        if r == 0.5 {
            return Err(SkewError::InvalidProbability(r));
        }
        let lower = self.quantile(r)?;
        let upper = self.quantile(1.0 - r)?;
        let median = self.median();
        let spread = upper - lower;
        if spread == 0.0 {
            return Err(SkewError::DegenerateSpread { r });
        }
        Ok((upper + lower - 2.0 * median) / spread)
    }

    /// Groeneveld-Meeden index (mean - median) / E|X - median|.
    pub fn b3(&self) -> Result<f64> {
        let s = self.summary();
        if s.mad <= 0.0 {
            return Err(SkewError::DegeneratePopulation);
        }
        Ok((s.mean - s.median) / s.mad)
    }

    /// The mixture (1 - eps) F + eps * (point mass at t).
    pub fn mix_point_mass(&self, t: f64, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) || !t.is_finite() {
            return Err(SkewError::InvalidInput(format!(
                "invalid contamination (t = {t}, eps = {eps})"
            )));
        }
        let keep = 1.0 - eps;
        let pos = self.values.partition_point(|&v| v < t);
        let hit = self.values.get(pos).map(|&v| v == t).unwrap_or(false);
        let mut values = Vec::with_capacity(self.values.len() + 1);
        let mut masses = Vec::with_capacity(self.values.len() + 1);
        for (k, (&v, &m)) in self.values.iter().zip(&self.masses).enumerate() {
            if k == pos && !hit {
                values.push(t);
                masses.push(eps);
            }
            let extra = if k == pos && hit { eps } else { 0.0 };
            values.push(v);
            masses.push(keep * m + extra);
        }
        if pos == self.values.len() {
            values.push(t);
            masses.push(eps);
        }
        let (values, masses): (Vec<f64>, Vec<f64>) = values
            .into_iter()
            .zip(masses)
            .filter(|(_, m)| *m > 0.0)
            .unzip();
        if values.is_empty() {
            return Err(SkewError::EmptyCdf);
        }
        Ok(Self::from_sorted_unique(values, masses))
    }
}

impl PartialEq for WeightedCdf {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.masses == other.masses
    }
}
