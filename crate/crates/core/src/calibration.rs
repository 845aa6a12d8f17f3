//! Exponential (raking) calibration on the constraints sum w = N and
//! sum w x = sum_U x, with w_i = exp(beta0 + beta1 x_i) / pi_i.

use serde::Serialize;

use crate::designs::DrawnSample;
use crate::error::{Result, SkewError};
use crate::numeric::{csum, CompensatedSum};
use crate::wcdf::WeightedCdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Relative tolerance; residuals must be <= tol * max(N, |sum_x|).
    pub tol: f64,
    pub max_iter: usize,
    /// Jacobians with a larger condition estimate are treated as singular.
    pub max_condition: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_condition: 1e12,
        }
    }
}

/// Solved calibration weights in sample order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationWeights {
    /// (beta0, beta1) in the original x scale.
    pub beta: [f64; 2],
    pub weights: Vec<f64>,
    pub iterations: usize,
    /// max(|sum w - N|, |sum w x - sum_x|) at the returned solution.
    pub residual_norm: f64,
}

/// Solves the raking equations for `sample`; `x` holds population-level
/// auxiliary values.
pub fn solve_raking(
    sample: &DrawnSample<'_>,
    x: &[f64],
    population_size: f64,
    sum_x: f64,
    opts: &SolverOptions,
) -> Result<CalibrationWeights> {
    let xs = sample.gather(x);
    solve_raking_raw(&xs, sample.pi(), population_size, sum_x, opts)
}

/// Damped Newton iteration from beta = (0, 0).
///
/// The iteration runs on x standardized by the sample mean and standard
/// deviation; beta is mapped back to the original scale on return.
pub fn solve_raking_raw(
    xs: &[f64],
    pi: &[f64],
    population_size: f64,
    sum_x: f64,
    opts: &SolverOptions,
) -> Result<CalibrationWeights> {
    let n = xs.len();
    if n == 0 || pi.len() != n {
        return Err(SkewError::InvalidInput(
            "calibration needs matching nonempty x and pi".into(),
        ));
    }
    if !(opts.tol > 0.0) {
        return Err(SkewError::InvalidInput(format!("tolerance {}", opts.tol)));
    }
    if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(SkewError::InvalidInput("inclusion probabilities must lie in (0, 1]".into()));
    }
    let design_w: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();

    let center = csum(xs.iter().copied()) / n as f64;
    let var = csum(xs.iter().map(|v| (v - center).powi(2))) / n as f64;
    let scale = var.sqrt();
    if !(scale > 1e-12 * center.abs().max(1.0)) {
        return Err(SkewError::Collinear {
            condition: f64::INFINITY,
        });
    }
    let z: Vec<f64> = xs.iter().map(|v| (v - center) / scale).collect();
    let target0 = population_size;
    let target1 = (sum_x - population_size * center) / scale;
    let target_mean = target1 / target0;
    let (zmin, zmax) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(target_mean > zmin && target_mean < zmax) && !exactly_met(&design_w, xs, population_size, sum_x, opts.tol) {
        return Err(SkewError::CalibrationInfeasible);
    }

    let tol_abs = opts.tol * population_size.abs().max(sum_x.abs());
    let eval = |alpha: [f64; 2]| -> Moments {
        let mut m = [CompensatedSum::new(); 3];
        for (d, zi) in design_w.iter().zip(&z) {
            let w = d * (alpha[0] + alpha[1] * zi).exp();
            m[0].add(w);
            m[1].add(w * zi);
            m[2].add(w * zi * zi);
        }
        Moments {
            s0: m[0].value(),
            s1: m[1].value(),
            s2: m[2].value(),
        }
    };
    let merit = |m: &Moments| ((m.s0 - target0).powi(2) + (m.s1 - target1).powi(2)).sqrt();

    let mut alpha = [0.0, 0.0];
    let mut moments = eval(alpha);
    let mut iterations = 0;
    loop {
        let weights: Vec<f64> = weights_for(&design_w, &z, alpha);
        let residual = original_residual(&weights, xs, population_size, sum_x);
        if residual <= tol_abs {
            let beta1 = alpha[1] / scale;
            let beta0 = alpha[0] - alpha[1] * center / scale;
            debug_assert!(weights.iter().all(|&w| w > 0.0));
            return Ok(CalibrationWeights {
                beta: [beta0, beta1],
                weights,
                iterations,
                residual_norm: residual,
            });
        }
        if iterations >= opts.max_iter {
            return Err(SkewError::NonConvergence {
                iterations,
                residual,
            });
        }
        iterations += 1;

        let (a, b, c) = (moments.s0, moments.s1, moments.s2);
        let condition = condition_2x2(a, b, c);
        if !(condition <= opts.max_condition) {
            return Err(SkewError::Collinear { condition });
        }
        let det = a * c - b * b;
        let r0 = moments.s0 - target0;
        let r1 = moments.s1 - target1;
        let step = [(c * r0 - b * r1) / det, (a * r1 - b * r0) / det];

        let current = merit(&moments);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = [alpha[0] - t * step[0], alpha[1] - t * step[1]];
            let m = eval(trial);
            if m.s0.is_finite() && m.s1.is_finite() && merit(&m) < current {
                accepted = Some((trial, m));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((a_new, m_new)) => {
                alpha = a_new;
                moments = m_new;
            }
            None => {
                return Err(SkewError::NonConvergence {
                    iterations,
                    residual,
                })
            }
        }
    }
}

struct Moments {
    s0: f64,
    s1: f64,
    s2: f64,
}

fn weights_for(design_w: &[f64], z: &[f64], alpha: [f64; 2]) -> Vec<f64> {
    design_w
        .iter()
        .zip(z)
        .map(|(d, zi)| d * (alpha[0] + alpha[1] * zi).exp())
        .collect()
}

fn original_residual(weights: &[f64], xs: &[f64], population_size: f64, sum_x: f64) -> f64 {
    let r0 = csum(weights.iter().copied()) - population_size;
    let r1 = csum(weights.iter().zip(xs).map(|(w, x)| w * x)) - sum_x;
    r0.abs().max(r1.abs())
}

fn exactly_met(design_w: &[f64], xs: &[f64], population_size: f64, sum_x: f64, tol: f64) -> bool {
    original_residual(design_w, xs, population_size, sum_x)
        <= tol * population_size.abs().max(sum_x.abs())
}

/// Condition number of the symmetric matrix [[a, b], [b, c]].
fn condition_2x2(a: f64, b: f64, c: f64) -> f64 {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (hi, lo) = (mid + rad, mid - rad);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// F_cal(t) = (1/N) sum w_i I(y_i <= t); `y` holds sample values in the
/// order of the weights.
pub fn calibration_cdf(y_sample: &[f64], weights: &CalibrationWeights, population_size: f64) -> Result<WeightedCdf> {
    if y_sample.len() != weights.weights.len() {
        return Err(SkewError::InvalidInput("y and weights differ in length".into()));
    }
    WeightedCdf::new(
        y_sample
            .iter()
            .zip(&weights.weights)
            .map(|(&y, &w)| (y, w / population_size)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::SamplingDesign;
    use proptest::prelude::*;

    #[test]
    fn fixed_point_when_design_weights_already_calibrate() {
        let xs = [1.0, 2.0, 4.0];
        let pi = [0.5; 3];
        let sol = solve_raking_raw(&xs, &pi, 6.0, 14.0, &SolverOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.beta, [0.0, 0.0]);
        assert_eq!(sol.weights, vec![2.0; 3]);
    }

    #[test]
    fn constant_x_is_collinear() {
        let err = solve_raking_raw(&[3.0; 4], &[0.5; 4], 8.0, 24.0, &SolverOptions::default());
        assert!(matches!(err, Err(SkewError::Collinear { .. })));
    }

    #[test]
    fn infeasible_target_is_reported() {
        let err = solve_raking_raw(&[1.0, 2.0], &[0.5; 2], 4.0, 20.0, &SolverOptions::default());
        assert!(matches!(err, Err(SkewError::CalibrationInfeasible)));
    }

    #[test]
    fn census_gives_unit_weights_and_population_cdf() {
        let x = [1.0, 2.5, 3.0, 7.0];
        let y = [4.0, 1.0, 3.0, 2.0];
        let d = SamplingDesign::srswor(4, 4).unwrap();
        let s = d.census().unwrap();
        let sol = solve_raking(&s, &x, 4.0, x.iter().sum(), &SolverOptions::default()).unwrap();
        assert_eq!(sol.beta, [0.0, 0.0]);
        let f = calibration_cdf(&s.gather(&y), &sol, 4.0).unwrap();
        assert_eq!(f, WeightedCdf::equal_weight(&y).unwrap());
    }

    #[test]
    fn newton_converges_on_shifted_target() {
        let xs = [1.0, 2.0, 4.0];
        let pi = [0.5; 3];
        let sol = solve_raking_raw(&xs, &pi, 6.0, 16.0, &SolverOptions::default()).unwrap();
        let s0: f64 = sol.weights.iter().sum();
        let s1: f64 = sol.weights.iter().zip(&xs).map(|(w, x)| w * x).sum();
        assert!((s0 - 6.0).abs() <= 1e-10 * 16.0);
        assert!((s1 - 16.0).abs() <= 1e-10 * 16.0);
        assert!(sol.beta[1] > 0.0);
        for (w, (x, p)) in sol.weights.iter().zip(xs.iter().zip(&pi)) {
            assert!((w - (sol.beta[0] + sol.beta[1] * x).exp() / p).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn shifting_x_keeps_constraints(shift in -5.0f64..50.0, t in 0.1f64..0.9) {
            let xs = [1.0, 2.0, 4.0, 8.0, 9.0];
            let pi = [0.2, 0.4, 0.5, 0.25, 0.1];
            let n_pop = 30.0;
            let mean = 1.0 + t * 8.0;
            let shifted: Vec<f64> = xs.iter().map(|v| v + shift).collect();
            let sum_x = n_pop * (mean + shift);
            let sol = solve_raking_raw(&shifted, &pi, n_pop, sum_x, &SolverOptions::default()).unwrap();
            let base = solve_raking_raw(&xs, &pi, n_pop, n_pop * mean, &SolverOptions::default()).unwrap();
            prop_assert!(sol.residual_norm <= 1e-10 * sum_x.abs().max(n_pop));
            prop_assert!(sol.weights.iter().all(|&w| w > 0.0));
            prop_assert!((sol.beta[1] - base.beta[1]).abs() < 1e-6 * (1.0 + base.beta[1].abs()));
        }
    }
}
