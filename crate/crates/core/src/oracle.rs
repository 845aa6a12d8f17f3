//! Brute-force verifiers: exhaustive design enumeration, finite-difference
//! von Mises derivatives, and a bisection raking solver.

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{solve_raking_raw, SolverOptions};
use crate::designs::{DrawnSample, SamplingDesign};
use crate::error::{Result, SkewError};
use crate::estimators::{hajek_cdf, Target};
use crate::numeric::{csum, normal_quantile};
use crate::variance::{
    g2_values, g3_values, variance_hajek, woodruff_sigma, G2Params, G3Params, VarianceMethod,
};
use crate::wcdf::WeightedCdf;
use crate::CdfBasis;

/// Largest number of samples `enumerate_design` will visit.
pub const ENUMERATION_BOUND: u64 = 1_000_000;

/// Exact design moments of a statistic over the full sample space.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    /// Number of equally likely samples.
    pub count: u64,
    pub expectation: f64,
    pub variance: f64,
    /// Statistic values in enumeration order (lexicographic per stratum,
    /// last stratum fastest).
    pub values: Vec<f64>,
    /// Number of samples containing each population unit.
    pub inclusion_counts: Vec<u64>,
}

impl Enumeration {
    pub fn inclusion_frequency(&self, unit: usize) -> f64 {
        self.inclusion_counts[unit] as f64 / self.count as f64
    }
}

/// Number of samples in the design's support, as f64 to survive overflow.
pub fn support_size(design: &SamplingDesign) -> f64 {
    design
        .stratum_sizes()
        .iter()
        .map(|&(big, small)| binomial(big, small))
        .product()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Visits every sample of a fixed-size (stratified) SRSWOR design. All
/// samples are equally likely, so moments are plain averages.
pub fn enumerate_design<F>(design: &SamplingDesign, mut statistic: F) -> Result<Enumeration>
where
    F: FnMut(&DrawnSample<'_>) -> Result<f64>,
{
    let total = support_size(design);
    if total > ENUMERATION_BOUND as f64 {
        return Err(SkewError::CombinatorialBound {
            count: total,
            bound: ENUMERATION_BOUND,
        });
    }
    let sizes = design.stratum_sizes();
    let mut combos: Vec<Vec<usize>> = sizes.iter().map(|&(_, n)| (0..n).collect()).collect();
    let mut values = Vec::with_capacity(total as usize);
    let mut inclusion_counts = vec![0u64; design.population_size()];
    loop {
        let mut units = Vec::with_capacity(design.sample_size());
        for (k, combo) in combos.iter().enumerate() {
            let members = design.stratum_units(k);
            units.extend(combo.iter().map(|&c| members[c]));
        }
        for &u in &units {
            inclusion_counts[u] += 1;
        }
        let sample = design.sample_from_units(units)?;
        values.push(statistic(&sample)?);

        // odometer over strata, last stratum fastest
        let mut k = combos.len();
        loop {
            if k == 0 {
                let count = values.len() as u64;
                let expectation = csum(values.iter().copied()) / count as f64;
                let variance = csum(values.iter().map(|v| (v - expectation).powi(2))) / count as f64;
                return Ok(Enumeration {
                    count,
                    expectation,
                    variance,
                    values,
                    inclusion_counts,
                });
            }
            k -= 1;
            if next_combination(&mut combos[k], sizes[k].0) {
                for later in combos.iter_mut().skip(k + 1) {
                    for (i, c) in later.iter_mut().enumerate() {
                        *c = i;
                    }
                }
                break;
            }
        }
    }
}

/// Advances `c` to the next k-subset of 0..n in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in (i + 1)..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// (T((1 - eps) F + eps delta_t) - T(F)) / eps.
pub fn contamination_derivative(cdf: &WeightedCdf, target: Target, t: f64, eps: f64) -> Result<f64> {
    derivative_from(cdf, target.evaluate(cdf)?, target, t, eps)
}

fn derivative_from(cdf: &WeightedCdf, base: f64, target: Target, t: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 0.01) {
        return Err(SkewError::InvalidInput(format!("eps {eps} not in (0, 0.01]")));
    }
    let mixed = cdf.mix_point_mass(t, eps)?;
    Ok((target.evaluate(&mixed)? - base) / eps)
}

/// Raking solution by nested bisection. For fixed beta1 the total
/// constraint gives beta0 in closed form; the x-total residual is then
/// increasing in beta1 and is bisected to a relative tolerance of 1e-8 or
/// better.
pub fn grid_solve_raking(xs: &[f64], pi: &[f64], population_size: f64, sum_x: f64) -> Result<[f64; 2]> {
    let d: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    let beta0_for = |b1: f64| -> f64 {
        let top = xs.iter().map(|x| b1 * x).fold(f64::NEG_INFINITY, f64::max);
        let s = csum(d.iter().zip(xs).map(|(d, x)| d * (b1 * x - top).exp()));
        population_size.ln() - top - s.ln()
    };
    let resid = |b1: f64| -> f64 {
        let b0 = beta0_for(b1);
        csum(d.iter().zip(xs).map(|(d, x)| d * (b0 + b1 * x).exp() * x)) - sum_x
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while !(resid(lo) <= 0.0 && resid(hi) >= 0.0) {
        lo *= 2.0;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(SkewError::CalibrationInfeasible);
        }
    }
    let tol = 1e-9 * population_size.abs().max(sum_x.abs());
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let r = resid(mid);
        if r.abs() <= tol * 1e-3 || hi - lo <= f64::EPSILON * mid.abs().max(1e-300) {
            lo = mid;
            hi = mid;
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b1 = 0.5 * (lo + hi);
    if resid(b1).abs() > tol * 10.0 {
        return Err(SkewError::NonConvergence {
            iterations: 400,
            residual: resid(b1).abs(),
        });
    }
    Ok([beta0_for(b1), b1])
}

/// Grid size for influence checks at eps = 1e-4. A contaminated quantile
/// moves by about eps * M grid steps and the inf-quantile can overshoot by
/// one step, so the discretization error in the derivative is O(1 / (eps M)).
pub const INFLUENCE_GRID_SIZE: usize = 4_000_000;

/// Equal-weight grid realization of the standard lognormal distribution:
/// values exp(Phi^-1((k - 0.5) / M)), k = 1..M.
pub fn lognormal_grid(size: usize) -> Result<WeightedCdf> {
    let m = size as f64;
    let values = (1..=size)
        .into_par_iter()
        .map(|k| normal_quantile((k as f64 - 0.5) / m).map(f64::exp))
        .collect::<Result<Vec<_>>>()?;
    WeightedCdf::equal_weight(&values)
}

/// Standard lognormal density.
pub fn lognormal_density(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let l = x.ln();
    (-0.5 * l * l).exp() / (x * (2.0 * std::f64::consts::PI).sqrt())
}

/// One probe of the influence-function comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfluenceProbe {
    pub t: f64,
    pub finite_difference: f64,
    /// g(t) - integral of g dF, with exact densities.
    pub linearization: f64,
}

impl InfluenceProbe {
    pub fn relative_error(&self) -> f64 {
        (self.finite_difference - self.linearization).abs() / self.linearization.abs()
    }
}

/// Compares the finite-difference derivative of `target` at `cdf` along
/// point-mass contaminations at `probes` with the g-function integral,
/// using the supplied density for the unknown f.
pub fn influence_comparison(
    cdf: &WeightedCdf,
    density: impl Fn(f64) -> f64,
    target: Target,
    probes: &[f64],
    eps: f64,
) -> Result<Vec<InfluenceProbe>> {
    let g = |y: &[f64]| -> Result<Vec<f64>> {
        match target {
            Target::B3 => {
                let s = cdf.summary();
                let p = G3Params {
                    nu: s.median,
                    f_nu: density(s.median),
                    delta: s.mad,
                    b3: (s.mean - s.median) / s.mad,
                };
                g3_values(&p, y)
            }
            Target::B2 { r } => {
                let (nu_r, nu_upper, nu) = (cdf.quantile(r)?, cdf.quantile(1.0 - r)?, cdf.median());
                let p = G2Params {
                    r,
                    nu_r,
                    nu_upper,
                    nu,
                    f_nu_r: density(nu_r),
                    f_nu_upper: density(nu_upper),
                    f_nu: density(nu),
                    b2: cdf.b2(r)?,
                };
                g2_values(&p, y)
            }
            Target::Mean => Ok(y.to_vec()),
        }
    };
    let g_pop = g(cdf.values())?;
    let mean_g = csum(g_pop.iter().zip(cdf.masses()).map(|(g, m)| g * m));
    let g_probe = g(probes)?;
    let base = target.evaluate(cdf)?;
    probes
        .par_iter()
        .zip(g_probe)
        .map(|(&t, gt)| {
            Ok(InfluenceProbe {
                t,
                finite_difference: derivative_from(cdf, base, target, t, eps)?,
                linearization: gt - mean_g,
            })
        })
        .collect()
}

/// One row of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Runs the oracle suite used by the `verify` command.
pub fn run_verification() -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    // three-sample enumeration of the Hájek mean
    let y3 = [1.0, 2.0, 3.0];
    let d3 = SamplingDesign::srswor(3, 2)?;
    let e = enumerate_design(&d3, |s| Ok(hajek_cdf(s, &y3)?.mean()))?;
    let ok = e.values == vec![1.5, 2.0, 2.5] && (e.variance - 1.0 / 6.0).abs() < 1e-15;
    checks.push(Check::new(
        "enumeration_hajek_mean",
        ok,
        format!("values {:?}, variance {:.15}", e.values, e.variance),
    ));

    // exact inclusion frequencies on a stratified design
    let labels = [1, 1, 1, 2, 2, 2, 2, 3, 3];
    let ds = SamplingDesign::stratified(&labels, &[2, 2, 1])?;
    let e = enumerate_design(&ds, |_| Ok(0.0))?;
    let ok = (0..labels.len()).all(|u| e.inclusion_frequency(u) == ds.pi(u));
    checks.push(Check::new(
        "enumeration_inclusion_frequencies",
        ok,
        format!("{} samples", e.count),
    ));

    // F_Ha beyond the data is constant
    let y6 = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
    let d6 = SamplingDesign::srswor(6, 2)?;
    let e = enumerate_design(&d6, |s| Ok(hajek_cdf(s, &y6)?.eval(9.0)))?;
    checks.push(Check::new(
        "cdf_at_max_constant",
        e.expectation == 1.0 && e.variance == 0.0,
        format!("E {}, V {}", e.expectation, e.variance),
    ));

    // SYG unbiasedness for the Hájek mean with g = y
    let truth = enumerate_design(&d6, |s| Ok(hajek_cdf(s, &y6)?.mean()))?.variance;
    let est = enumerate_design(&d6, |s| {
        Ok(variance_hajek(s, &s.gather(&y6), 6.0, VarianceMethod::Syg).v2_syg)
    })?;
    let rel = (est.expectation - truth).abs() / truth;
    checks.push(Check::new(
        "syg_unbiased_hajek_mean",
        rel <= 1e-12,
        format!("E[v] {:.15e}, V {:.15e}, rel {rel:.2e}", est.expectation, truth),
    ));

    // Woodruff sigma at a fixed threshold is unbiased for var(F_Ha(t))
    let t = 2.6;
    let truth = enumerate_design(&d6, |s| Ok(hajek_cdf(s, &y6)?.eval(t)))?.variance;
    let est = enumerate_design(&d6, |s| {
        Ok(woodruff_sigma(s, &s.gather(&y6), CdfBasis::Hajek, t, 6.0, None)?.powi(2))
    })?;
    let rel = (est.expectation - truth).abs() / truth;
    checks.push(Check::new(
        "woodruff_sigma_unbiased",
        rel <= 1e-12,
        format!("E[s2] {:.15e}, V {:.15e}", est.expectation, truth),
    ));

    // Newton raking against bisection on small instances
    let cases: [(&[f64], &[f64], f64, f64); 3] = [
        (&[1.0, 2.0, 4.0], &[0.5, 0.5, 0.5], 6.0, 14.0),
        (&[1.0, 2.0, 4.0], &[0.5, 0.5, 0.5], 6.0, 16.0),
        (&[0.5, 3.0, 7.5], &[0.2, 0.4, 0.25], 12.0, 40.0),
    ];
    for (k, (xs, pi, n, sx)) in cases.iter().enumerate() {
        let newton = solve_raking_raw(xs, pi, *n, *sx, &SolverOptions::default())?;
        let grid = grid_solve_raking(xs, pi, *n, *sx)?;
        let diff = (newton.beta[0] - grid[0]).abs().max((newton.beta[1] - grid[1]).abs());
        checks.push(Check::new(
            &format!("raking_vs_bisection_{}", k + 1),
            diff <= 1e-6,
            format!("newton {:?}, bisection {:?}", newton.beta, grid),
        ));
    }

    // influence function of b3 and b2(0.25) on a lognormal grid
    let grid = lognormal_grid(INFLUENCE_GRID_SIZE)?;
    let probes = [0.3, 0.7, 2.0, 6.0];
    for target in [Target::B3, Target::B2 { r: 0.25 }] {
        let rows = influence_comparison(&grid, lognormal_density, target, &probes, 1e-4)?;
        let worst = rows.iter().map(InfluenceProbe::relative_error).fold(0.0, f64::max);
        checks.push(Check::new(
            &format!("influence_{}", target.label()),
            worst <= 0.02,
            format!("max relative error {worst:.4}"),
        ));
    }

    Ok(checks)
}
