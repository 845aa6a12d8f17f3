//! Cdf estimators from a drawn sample and the plug-in point estimators of
//! b2(r), b3 and the mean.

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_cdf, solve_raking, CalibrationWeights, SolverOptions};
use crate::designs::DrawnSample;
use crate::error::{Result, SkewError};
use crate::numeric::csum;
use crate::population::FinitePopulation;
use crate::wcdf::WeightedCdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfBasis {
    Hajek,
    #[serde(rename = "ht")]
    HorvitzThompson,
    Calibration,
}

impl CdfBasis {
    pub fn label(&self) -> &'static str {
        match self {
            CdfBasis::Hajek => "hajek",
            CdfBasis::HorvitzThompson => "ht",
            CdfBasis::Calibration => "calibration",
        }
    }
}

impl FromStr for CdfBasis {
    type Err = SkewError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hajek" | "ha" => Ok(CdfBasis::Hajek),
            "ht" | "horvitz_thompson" => Ok(CdfBasis::HorvitzThompson),
            "calibration" | "cal" => Ok(CdfBasis::Calibration),
            other => Err(SkewError::InvalidInput(format!("unknown cdf basis `{other}`"))),
        }
    }
}

/// Parameter being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Target {
    B2 { r: f64 },
    B3,
    Mean,
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::B2 { r } => format!("b2({r})"),
            Target::B3 => "b3".to_string(),
            Target::Mean => "mean".to_string(),
        }
    }

    /// Parses `mean`, `b3`, `b2` (with `r`) or `b2(0.75)`.
    pub fn parse(s: &str, r: Option<f64>) -> Result<Self> {
        let s = s.trim();
        match s {
            "mean" => Ok(Target::Mean),
            "b3" => Ok(Target::B3),
            "b2" => r
                .map(|r| Target::B2 { r })
                .ok_or_else(|| SkewError::InvalidInput("target b2 needs r".into())),
            _ => {
                let inner = s
                    .strip_prefix("b2(")
                    .and_then(|t| t.strip_suffix(')'))
                    .ok_or_else(|| SkewError::InvalidInput(format!("unknown target `{s}`")))?;
                let r = inner
                    .parse()
                    .map_err(|_| SkewError::InvalidInput(format!("bad r in `{s}`")))?;
                Ok(Target::B2 { r })
            }
        }
    }

    /// Population value of this parameter.
    pub fn evaluate(&self, cdf: &WeightedCdf) -> Result<f64> {
        match *self {
            Target::B2 { r } => cdf.b2(r),
            Target::B3 => cdf.b3(),
            Target::Mean => Ok(cdf.mean()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorKind {
    pub basis: CdfBasis,
    pub target: Target,
}

impl EstimatorKind {
    pub fn new(basis: CdfBasis, target: Target) -> Self {
        Self { basis, target }
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.target.label(), self.basis.label())
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Hájek cdf: masses (1/pi_i) / N_hat with N_hat = sum 1/pi_i.
pub fn hajek_cdf(sample: &DrawnSample<'_>, y: &[f64]) -> Result<WeightedCdf> {
    if sample.is_empty() {
        return Err(SkewError::EmptyCdf);
    }
    let n_hat = csum(sample.pi().iter().map(|p| 1.0 / p));
    WeightedCdf::new(
        sample
            .units()
            .iter()
            .zip(sample.pi())
            .map(|(&u, &p)| (y[u], (1.0 / p) / n_hat)),
    )
}

/// Horvitz-Thompson cdf: masses (1/pi_i) / N. The raw total is kept in
/// [`WeightedCdf::raw_total`]; functionals see the normalized cdf.
pub fn ht_cdf(sample: &DrawnSample<'_>, y: &[f64], population_size: f64) -> Result<WeightedCdf> {
    if sample.is_empty() {
        return Err(SkewError::EmptyCdf);
    }
    WeightedCdf::new(
        sample
            .units()
            .iter()
            .zip(sample.pi())
            .map(|(&u, &p)| (y[u], (1.0 / p) / population_size)),
    )
}

/// Population-level auxiliary information available to the estimators.
#[derive(Debug, Clone, Copy)]
pub struct Auxiliary<'a> {
    pub x: &'a [f64],
    pub population_size: f64,
    pub sum_x: f64,
}

impl<'a> Auxiliary<'a> {
    pub fn from_population(pop: &'a FinitePopulation) -> Self {
        Self {
            x: pop.x(),
            population_size: pop.len() as f64,
            sum_x: pop.sum_x(),
        }
    }
}

/// A drawn sample together with the study values and auxiliary totals,
/// with the cdf estimators built on demand and cached.
pub struct SampleView<'s, 'd> {
    sample: &'s DrawnSample<'d>,
    y_pop: &'s [f64],
    y: Vec<f64>,
    x: Vec<f64>,
    aux: Auxiliary<'s>,
    solver: SolverOptions,
    hajek: OnceCell<WeightedCdf>,
    ht: OnceCell<WeightedCdf>,
    calibration: OnceCell<(CalibrationWeights, WeightedCdf)>,
}

impl<'s, 'd> SampleView<'s, 'd> {
    /// `y` is population-level; only the sampled entries are read.
    pub fn new(
        sample: &'s DrawnSample<'d>,
        y: &'s [f64],
        aux: Auxiliary<'s>,
        solver: SolverOptions,
    ) -> Self {
        Self {
            sample,
            y_pop: y,
            y: sample.gather(y),
            x: sample.gather(aux.x),
            aux,
            solver,
            hajek: OnceCell::new(),
            ht: OnceCell::new(),
            calibration: OnceCell::new(),
        }
    }

    pub fn sample(&self) -> &'s DrawnSample<'d> {
        self.sample
    }

    /// Sampled study values in sample order.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Sampled auxiliary values in sample order.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn population_size(&self) -> f64 {
        self.aux.population_size
    }

    pub fn calibration(&self) -> Result<&CalibrationWeights> {
        self.calibrated().map(|(w, _)| w)
    }

    fn calibrated(&self) -> Result<&(CalibrationWeights, WeightedCdf)> {
        cached(&self.calibration, || {
            let w = solve_raking(
                self.sample,
                self.aux.x,
                self.aux.population_size,
                self.aux.sum_x,
                &self.solver,
            )?;
            let cdf = calibration_cdf(&self.y, &w, self.aux.population_size)?;
            Ok((w, cdf))
        })
    }

    pub fn cdf(&self, basis: CdfBasis) -> Result<&WeightedCdf> {
        match basis {
            CdfBasis::Hajek => cached(&self.hajek, || hajek_cdf(self.sample, self.y_pop)),
            CdfBasis::HorvitzThompson => cached(&self.ht, || {
                ht_cdf(self.sample, self.y_pop, self.aux.population_size)
            }),
            CdfBasis::Calibration => self.calibrated().map(|(_, f)| f),
        }
    }

    /// Plug-in point estimate: the target functional of the basis cdf. The
    /// calibrated mean sum w y / sum w equals sum w y / N up to the solver
    /// tolerance.
    pub fn estimate(&self, kind: EstimatorKind) -> Result<f64> {
        kind.target.evaluate(self.cdf(kind.basis)?)
    }
}

fn cached<T>(cell: &OnceCell<T>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = f()?;
    Ok(cell.get_or_init(|| v))
}

/// One-shot plug-in estimate for a sample of `pop`.
pub fn estimate(
    kind: EstimatorKind,
    sample: &DrawnSample<'_>,
    pop: &FinitePopulation,
) -> Result<f64> {
    let view = SampleView::new(
        sample,
        pop.y(),
        Auxiliary::from_population(pop),
        SolverOptions::default(),
    );
    view.estimate(kind)
}
