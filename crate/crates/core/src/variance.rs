//! Linearization variance estimation for the plug-in estimators.
//!
//! The estimators are linearized through g-functions (the integrand of the
//! first-order von Mises expansion). Their unknowns (quantiles, mean
//! absolute deviation, the index itself and the density at the relevant
//! quantiles) are replaced by plug-in values from the same cdf basis as the
//! point estimate, with densities from the Woodruff interval length. The
//! variance of the linearized statistic is then estimated with the
//! Horvitz-Thompson or Sen-Yates-Grundy form.
//!
//! All returned variances are on the estimator scale, i.e. they include the
//! 1/N^2 factor.

use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationWeights, SolverOptions};
use crate::designs::DrawnSample;
use crate::error::{Result, SkewError};
use crate::estimators::{CdfBasis, EstimatorKind, SampleView, Target};
use crate::numeric::{check_open_unit, csum, z_for_level, z_upper, CompensatedSum};
use crate::wcdf::WeightedCdf;

/// Unknowns of the b3 g-function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G3Params {
    pub nu: f64,
    pub f_nu: f64,
    pub delta: f64,
    pub b3: f64,
}

/// Unknowns of the b2(r) g-function; `nu_r` and `nu_upper` are the r and
/// 1 - r quantiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    pub r: f64,
    pub nu_r: f64,
    pub nu_upper: f64,
    pub nu: f64,
    pub f_nu_r: f64,
    pub f_nu_upper: f64,
    pub f_nu: f64,
    pub b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum GFunctionParams {
    Mean,
    B3(G3Params),
    /// `sign` is -1 when the requested r exceeded 0.5 and the parameters
    /// were computed for 1 - r.
    B2 { params: G2Params, sign: f64 },
}

impl GFunctionParams {
    pub fn values(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            GFunctionParams::Mean => Ok(y.to_vec()),
            GFunctionParams::B3(p) => g3_values(p, y),
            GFunctionParams::B2 { params, sign } => {
                Ok(g2_values(params, y)?.into_iter().map(|g| sign * g).collect())
            }
        }
    }
}

/// g(t) = (1/delta) { t (1 - b3) + I(t <= nu) (1/f(nu) - 2 nu b3 + 2 t b3) }.
pub fn g3_values(params: &G3Params, y: &[f64]) -> Result<Vec<f64>> {
    let G3Params { nu, f_nu, delta, b3 } = *params;
    if !(f_nu > 0.0) {
        return Err(SkewError::InvalidInput(format!("density at the median is {f_nu}")));
    }
    if !(delta > 0.0) {
        return Err(SkewError::DegeneratePopulation);
    }
    Ok(y.iter()
        .map(|&t| {
            let below = if t <= nu {
                1.0 / f_nu - 2.0 * nu * b3 + 2.0 * t * b3
            } else {
                0.0
            };
            (t * (1.0 - b3) + below) / delta
        })
        .collect())
}

/// g2(t) = [ I(t <= nu_{1-r}) (b2 - 1)/f(nu_{1-r}) - I(t <= nu_r) (1 + b2)/f(nu_r)
///          + 2 I(t <= nu)/f(nu) ] / (nu_{1-r} - nu_r).
pub fn g2_values(params: &G2Params, y: &[f64]) -> Result<Vec<f64>> {
    let p = *params;
    let spread = p.nu_upper - p.nu_r;
    if spread == 0.0 {
        return Err(SkewError::DegenerateSpread { r: p.r });
    }
    for f in [p.f_nu_r, p.f_nu_upper, p.f_nu] {
        if !(f > 0.0) {
            return Err(SkewError::InvalidInput(format!("nonpositive density {f}")));
        }
    }
    let ind = |c: bool| if c { 1.0 } else { 0.0 };
    Ok(y.iter()
        .map(|&t| {
            (ind(t <= p.nu_upper) * (p.b2 - 1.0) / p.f_nu_upper
                - ind(t <= p.nu_r) * (1.0 + p.b2) / p.f_nu_r
                + 2.0 * ind(t <= p.nu) / p.f_nu)
                / spread
        })
        .collect())
}

/// -(1/2) sum_{i != j in s} ((pi_ij - pi_i pi_j) / pi_ij) (z_i - z_j)^2,
/// accumulated in fixed (i, j) order.
pub fn syg_quadratic(sample: &DrawnSample<'_>, z: &[f64]) -> f64 {
    let pi = sample.pi();
    let mut acc = CompensatedSum::new();
    for i in 0..z.len() {
        for j in (i + 1)..z.len() {
            let pij = sample.pi2_at(i, j);
            let delta = pij - pi[i] * pi[j];
            if delta != 0.0 {
                // each unordered pair appears twice in the double sum
                acc.add(-(delta / pij) * (z[i] - z[j]).powi(2));
            }
        }
    }
    acc.value()
}

/// sum_{i, j in s} ((pi_ij - pi_i pi_j) / pi_ij) u_i u_j, diagonal included
/// (pi_ii = pi_i).
pub fn ht_quadratic(sample: &DrawnSample<'_>, u: &[f64]) -> f64 {
    let pi = sample.pi();
    let mut acc = CompensatedSum::new();
    for i in 0..u.len() {
        acc.add((1.0 - pi[i]) * u[i] * u[i]);
        for j in (i + 1)..u.len() {
            let pij = sample.pi2_at(i, j);
            let delta = pij - pi[i] * pi[j];
            if delta != 0.0 {
                acc.add(2.0 * (delta / pij) * u[i] * u[j]);
            }
        }
    }
    acc.value()
}

/// Standard deviation of a cdf estimator at `nu_hat`, on the probability
/// scale, estimated with the SYG form.
///
/// Hájek: terms (I(y_i <= nu) - F_Ha(nu)) / pi_i over N_hat.
/// Horvitz-Thompson: terms I(y_i <= nu) / pi_i over N.
/// Calibration: terms w_i I(y_i <= nu) over N.
pub fn woodruff_sigma(
    sample: &DrawnSample<'_>,
    y_sample: &[f64],
    basis: CdfBasis,
    nu_hat: f64,
    population_size: f64,
    weights: Option<&CalibrationWeights>,
) -> Result<f64> {
    let pi = sample.pi();
    let ind: Vec<f64> = y_sample
        .iter()
        .map(|&y| if y <= nu_hat { 1.0 } else { 0.0 })
        .collect();
    let (z, scale): (Vec<f64>, f64) = match basis {
        CdfBasis::Hajek => {
            let n_hat = csum(pi.iter().map(|p| 1.0 / p));
            let f_hat = csum(ind.iter().zip(pi).map(|(a, p)| a / p)) / n_hat;
            (
                ind.iter().zip(pi).map(|(a, p)| (a - f_hat) / p).collect(),
                n_hat,
            )
        }
        CdfBasis::HorvitzThompson => (
            ind.iter().zip(pi).map(|(a, p)| a / p).collect(),
            population_size,
        ),
        CdfBasis::Calibration => {
            let w = weights.ok_or_else(|| {
                SkewError::InvalidInput("calibration sigma needs solved weights".into())
            })?;
            (
                ind.iter().zip(&w.weights).map(|(a, w)| a * w).collect(),
                population_size,
            )
        }
    };
    let v = syg_quadratic(sample, &z) / (scale * scale);
    if v < 0.0 {
        log::warn!("negative cdf variance estimate {v:.3e} clamped to zero");
    }
    Ok(v.max(0.0).sqrt())
}

/// Density at the r-quantile from the length of the Woodruff interval:
/// f = (p+ - p-) / (Q(p+) - Q(p-)) with p+- = r +- z_{0.025} sigma clamped to
/// [eps, 1 - eps], eps = 1 / (2 n_eff).
pub fn woodruff_density(cdf: &WeightedCdf, r: f64, sigma_hat: f64) -> Result<f64> {
    check_open_unit(r)?;
    if !(sigma_hat >= 0.0) {
        return Err(SkewError::InvalidInput(format!("sigma {sigma_hat}")));
    }
    let z = z_upper(0.025)?;
    let eps = 0.5 / cdf.effective_size();
    let hi = (r + z * sigma_hat).clamp(eps, 1.0 - eps);
    let lo = (r - z * sigma_hat).clamp(eps, 1.0 - eps);
    let length = cdf.quantile(hi)? - cdf.quantile(lo)?;
    if !(length > 0.0) || !(hi > lo) {
        return Err(SkewError::DensityDegenerate { r });
    }
    Ok((hi - lo) / length)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Ht,
    #[default]
    Syg,
}

impl std::str::FromStr for VarianceMethod {
    type Err = SkewError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ht" => Ok(VarianceMethod::Ht),
            "syg" => Ok(VarianceMethod::Syg),
            other => Err(SkewError::InvalidInput(format!("unknown variance method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub v2_ht: f64,
    pub v2_syg: f64,
    pub method: VarianceMethod,
    /// True when the calibration residual regression was rank deficient and
    /// residuals fell back to weighted mean-centering.
    pub fallback: bool,
}

impl VarianceEstimate {
    pub fn zero(method: VarianceMethod) -> Self {
        Self {
            v2_ht: 0.0,
            v2_syg: 0.0,
            method,
            fallback: false,
        }
    }

    /// Selected variance, clamped at zero.
    pub fn v2(&self) -> f64 {
        let v = match self.method {
            VarianceMethod::Ht => self.v2_ht,
            VarianceMethod::Syg => self.v2_syg,
        };
        v.max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.v2().sqrt()
    }
}

/// Variance of a Hájek-based plug-in estimator from its estimated g-values.
/// The g-values are centered at their Hájek-weighted sample mean.
pub fn variance_hajek(
    sample: &DrawnSample<'_>,
    g_hat: &[f64],
    population_size: f64,
    method: VarianceMethod,
) -> VarianceEstimate {
    let pi = sample.pi();
    let n_hat = csum(pi.iter().map(|p| 1.0 / p));
    let g_bar = csum(g_hat.iter().zip(pi).map(|(g, p)| g / p)) / n_hat;
    let u: Vec<f64> = g_hat.iter().zip(pi).map(|(g, p)| (g - g_bar) / p).collect();
    let n2 = population_size * population_size;
    VarianceEstimate {
        v2_ht: ht_quadratic(sample, &u) / n2,
        v2_syg: syg_quadratic(sample, &u) / n2,
        method,
        fallback: false,
    }
}

/// Variance of a calibration-based plug-in estimator. Residuals come from
/// the weighted least squares fit of g on (1, x) with weights w_i, or 1/pi_i
/// when `use_inverse_pi` is set; the same weights multiply the residuals.
pub fn variance_calibration(
    sample: &DrawnSample<'_>,
    g_hat: &[f64],
    x_sample: &[f64],
    weights: &CalibrationWeights,
    population_size: f64,
    use_inverse_pi: bool,
    method: VarianceMethod,
) -> VarianceEstimate {
    let reg_w: Vec<f64> = if use_inverse_pi {
        sample.pi().iter().map(|p| 1.0 / p).collect()
    } else {
        weights.weights.clone()
    };
    let (residuals, fallback) = wls_residuals(g_hat, x_sample, &reg_w);
    let u: Vec<f64> = reg_w.iter().zip(&residuals).map(|(w, e)| w * e).collect();
    let n2 = population_size * population_size;
    VarianceEstimate {
        v2_ht: ht_quadratic(sample, &u) / n2,
        v2_syg: syg_quadratic(sample, &u) / n2,
        method,
        fallback,
    }
}

/// Residuals of the weighted least squares fit of `g` on (1, x). Falls back
/// to weighted mean-centering when x has no weighted spread.
pub fn wls_residuals(g: &[f64], x: &[f64], w: &[f64]) -> (Vec<f64>, bool) {
    let sw = csum(w.iter().copied());
    let x_bar = csum(w.iter().zip(x).map(|(w, x)| w * x)) / sw;
    let g_bar = csum(w.iter().zip(g).map(|(w, g)| w * g)) / sw;
    let sxx = csum(w.iter().zip(x).map(|(w, x)| w * (x - x_bar).powi(2)));
    let scale = csum(w.iter().zip(x).map(|(w, x)| w * x * x));
    if !(sxx > 1e-12 * scale) {
        log::warn!("rank-deficient residual regression; using mean-centered g");
        return (g.iter().map(|v| v - g_bar).collect(), true);
    }
    let sxg = csum(
        w.iter()
            .zip(x)
            .zip(g)
            .map(|((w, x), g)| w * (x - x_bar) * (g - g_bar)),
    );
    let slope = sxg / sxx;
    let res = g
        .iter()
        .zip(x)
        .map(|(g, x)| (g - g_bar) - slope * (x - x_bar))
        .collect();
    (res, false)
}

/// Two-sided normal interval estimate -+ z_{alpha/2} sqrt(v).
pub fn normal_ci(estimate: f64, v: f64, level: f64) -> Result<(f64, f64)> {
    if !(v >= 0.0) {
        return Err(SkewError::InvalidInput(format!("variance {v}")));
    }
    let half = z_for_level(level)? * v.sqrt();
    Ok((estimate - half, estimate + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub method: VarianceMethod,
    pub use_inverse_pi: bool,
    pub levels: Vec<f64>,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            method: VarianceMethod::Syg,
            use_inverse_pi: false,
            levels: vec![0.90, 0.95, 0.99],
            solver: SolverOptions::default(),
        }
    }
}

/// Point estimate, variance estimate and normal intervals for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub estimator: String,
    pub kind: EstimatorKind,
    pub estimate: f64,
    pub variance: VarianceEstimate,
    /// sqrt of the selected variance (the V-hat of the intervals).
    pub sd: f64,
    pub intervals: Vec<Interval>,
    pub g_params: Option<GFunctionParams>,
    pub calibration: Option<CalibrationDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationDiagnostics {
    pub beta: [f64; 2],
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Plug-in g-function parameters from the basis cdf, with Woodruff
/// densities using a basis-matched sigma.
pub fn plug_in_params(view: &SampleView<'_, '_>, kind: EstimatorKind) -> Result<GFunctionParams> {
    let basis = kind.basis;
    let cdf = view.cdf(basis)?;
    let weights = match basis {
        CdfBasis::Calibration => Some(view.calibration()?),
        _ => None,
    };
    let density = |p: f64| -> Result<f64> {
        let nu_p = cdf.quantile(p)?;
        let sigma = woodruff_sigma(
            view.sample(),
            view.y(),
            basis,
            nu_p,
            view.population_size(),
            weights,
        )?;
        if sigma == 0.0 {
            return Err(SkewError::DensityDegenerate { r: p });
        }
        woodruff_density(cdf, p, sigma)
    };
    match kind.target {
        Target::Mean => Ok(GFunctionParams::Mean),
        Target::B3 => {
            let s = cdf.summary();
            if !(s.mad > 0.0) {
                return Err(SkewError::DegeneratePopulation);
            }
            Ok(GFunctionParams::B3(G3Params {
                nu: s.median,
                f_nu: density(0.5)?,
                delta: s.mad,
                b3: (s.mean - s.median) / s.mad,
            }))
        }
        Target::B2 { r } => {
            check_open_unit(r)?;
            let (rc, sign) = if r > 0.5 { (1.0 - r, -1.0) } else { (r, 1.0) };
            let params = G2Params {
                r: rc,
                nu_r: cdf.quantile(rc)?,
                nu_upper: cdf.quantile(1.0 - rc)?,
                nu: cdf.median(),
                f_nu_r: density(rc)?,
                f_nu_upper: density(1.0 - rc)?,
                f_nu: density(0.5)?,
                b2: cdf.b2(rc)?,
            };
            Ok(GFunctionParams::B2 { params, sign })
        }
    }
}

/// Full single-sample inference: point estimate, linearization variance and
/// normal intervals at `opts.levels`.
///
/// When every sampled unit has pi = 1 the design variance is zero and the
/// g-function (whose densities are not estimable) is skipped.
pub fn infer(view: &SampleView<'_, '_>, kind: EstimatorKind, opts: &InferenceOptions) -> Result<EstimateRecord> {
    let estimate = view.estimate(kind)?;
    let sample = view.sample();
    let calibration = match kind.basis {
        CdfBasis::Calibration => {
            let w = view.calibration()?;
            Some(CalibrationDiagnostics {
                beta: w.beta,
                iterations: w.iterations,
                residual_norm: w.residual_norm,
            })
        }
        _ => None,
    };
    let (variance, g_params) = if sample.is_census() {
        (VarianceEstimate::zero(opts.method), None)
    } else {
        let params = plug_in_params(view, kind)?;
        let g = params.values(view.y())?;
        let n = view.population_size();
        let v = match kind.basis {
            CdfBasis::Hajek | CdfBasis::HorvitzThompson => variance_hajek(sample, &g, n, opts.method),
            CdfBasis::Calibration => variance_calibration(
                sample,
                &g,
                view.x(),
                view.calibration()?,
                n,
                opts.use_inverse_pi,
                opts.method,
            ),
        };
        (v, Some(params))
    };
    let v2 = variance.v2();
    let intervals = opts
        .levels
        .iter()
        .map(|&level| {
            normal_ci(estimate, v2, level).map(|(lower, upper)| Interval { level, lower, upper })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateRecord {
        estimator: kind.label(),
        kind,
        estimate,
        variance,
        sd: variance.sd(),
        intervals,
        g_params,
        calibration,
    })
}
