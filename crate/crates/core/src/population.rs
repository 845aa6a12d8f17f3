//! Synthetic finite populations, x-based stratification and exact
//! population-level skewness parameters.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkewError};
use crate::numeric::{check_open_unit, csum};
use crate::wcdf::WeightedCdf;

/// Name of the generator used by [`generate_population`]; echoed in reports.
pub const POPULATION_RNG: &str = "chacha20";

/// Labelled units with an auxiliary variable `x`, a study variable `y` and
/// stratum labels (all zero when unstratified, otherwise 1..=H).
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    ids: Vec<u64>,
    x: Vec<f64>,
    y: Vec<f64>,
    strata: Vec<u32>,
}

/// Exact population parameters computed from the equal-weight cdf of `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub r: f64,
    pub mu: f64,
    pub nu: f64,
    pub delta: f64,
    pub b2: f64,
    pub b3: f64,
}

impl FinitePopulation {
    pub fn new(ids: Vec<u64>, x: Vec<f64>, y: Vec<f64>, strata: Vec<u32>) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(SkewError::EmptyPopulation);
        }
        if x.len() != n || y.len() != n || strata.len() != n {
            return Err(SkewError::InvalidInput(
                "population columns have different lengths".into(),
            ));
        }
        if let Some(bad) = x.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(SkewError::InvalidInput(format!(
                "auxiliary values must be positive and finite, found {bad}"
            )));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(SkewError::InvalidInput(format!("non-finite study value {bad}")));
        }
        check_strata_labels(&strata)?;
        Ok(Self { ids, x, y, strata })
    }

    /// Unstratified population with ids 1..=N.
    pub fn from_xy(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        Self::new((1..=n as u64).collect(), x, y, vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn strata(&self) -> &[u32] {
        &self.strata
    }

    /// Number of strata H (0 when unstratified).
    pub fn num_strata(&self) -> usize {
        self.strata.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn sum_x(&self) -> f64 {
        csum(self.x.iter().copied())
    }

    /// Population cdf of `y`.
    pub fn cdf(&self) -> WeightedCdf {
        WeightedCdf::equal_weight(&self.y).expect("population is nonempty with finite y")
    }

    pub fn with_strata(&self, strata: Vec<u32>) -> Result<Self> {
        Self::new(self.ids.clone(), self.x.clone(), self.y.clone(), strata)
    }

    /// Writes the population as CSV with header `id,x,y,stratum`. Reals are
    /// written with 17 significant digits so a read-back is bit-identical.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "x", "y", "stratum"])?;
        for i in 0..self.len() {
            w.write_record([
                self.ids[i].to_string(),
                fmt_real(self.x[i]),
                fmt_real(self.y[i]),
                self.strata[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let expected = ["id", "x", "y", "stratum"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(SkewError::InvalidInput(format!(
                "expected header id,x,y,stratum, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let (mut ids, mut x, mut y, mut strata) = (vec![], vec![], vec![], vec![]);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let bad = |what: &str| {
                SkewError::InvalidInput(format!("row {}: cannot parse {what}", line + 1))
            };
            ids.push(field(0).parse().map_err(|_| bad("id"))?);
            x.push(field(1).parse().map_err(|_| bad("x"))?);
            y.push(field(2).parse().map_err(|_| bad("y"))?);
            strata.push(field(3).parse().map_err(|_| bad("stratum"))?);
        }
        Self::new(ids, x, y, strata)
    }
}

/// 17 significant digits, round-trip exact.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_strata_labels(strata: &[u32]) -> Result<()> {
    let h = strata.iter().copied().max().unwrap_or(0) as usize;
    if h == 0 {
        return Ok(());
    }
    let mut seen = vec![false; h];
    for &s in strata {
        if s == 0 {
            return Err(SkewError::InvalidInput(
                "stratum label 0 mixed with positive labels".into(),
            ));
        }
        seen[s as usize - 1] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(SkewError::InvalidInput(format!(
            "stratum labels must be contiguous 1..={h}"
        )));
    }
    Ok(())
}

/// Draws x_i = exp(z_i) with z_i standard normal and
/// y_i = x_i + x_i^gamma * eps_i with eps_i standard normal.
///
/// All `z` are drawn first, then all `eps`, from one ChaCha20 stream seeded
/// with `seed`.
pub fn generate_population(seed: u64, size: usize, gamma: f64) -> Result<FinitePopulation> {
    if size == 0 {
        return Err(SkewError::EmptyPopulation);
    }
    if !gamma.is_finite() {
        return Err(SkewError::InvalidInput(format!("gamma = {gamma}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..size)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.exp()
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            xi + xi.powf(gamma) * eps
        })
        .collect();
    FinitePopulation::from_xy(x, y)
}

/// Cuts the x-sorted units into `h` contiguous intervals of x whose x-totals
/// are close to total/h.
///
/// Cut k (k = 1..h-1) is placed at the boundary between distinct x values
/// whose running x-sum is nearest to k * total / h, subject to leaving at
/// least one distinct value for every remaining stratum. Units sharing an x
/// value always land in the same stratum. Labels increase with x.
pub fn stratify_by_x(pop: &FinitePopulation, h: usize) -> Result<FinitePopulation> {
    if h == 0 {
        return Err(SkewError::InvalidStrata {
            requested: 0,
            available: pop.len(),
        });
    }
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.sort_by(|&a, &b| pop.x[a].total_cmp(&pop.x[b]).then(a.cmp(&b)));

    // group boundaries: group g covers order[starts[g]..starts[g+1]]
    let mut starts = vec![0usize];
    for k in 1..order.len() {
        if pop.x[order[k]] != pop.x[order[k - 1]] {
            starts.push(k);
        }
    }
    let groups = starts.len();
    if h > groups {
        return Err(SkewError::InvalidStrata {
            requested: h,
            available: groups,
        });
    }
    // prefix[g] = x-sum of all groups before g
    let mut prefix = Vec::with_capacity(groups + 1);
    prefix.push(0.0);
    for g in 0..groups {
        let end = if g + 1 < groups { starts[g + 1] } else { order.len() };
        let s = csum(order[starts[g]..end].iter().map(|&i| pop.x[i]));
        prefix.push(prefix[g] + s);
    }
    let total = prefix[groups];

    // cut_after[k] = number of groups in strata 1..=k+1
    let mut cuts = Vec::with_capacity(h - 1);
    let mut prev = 0usize;
    for k in 1..h {
        let target = total * k as f64 / h as f64;
        let lo = prev + 1;
        let hi = groups - (h - k);
        let mut best = lo;
        for c in lo..=hi {
            if (prefix[c] - target).abs() < (prefix[best] - target).abs() {
                best = c;
            }
        }
        cuts.push(best);
        prev = best;
    }

    let mut strata = vec![0u32; pop.len()];
    let mut label = 1u32;
    let mut next_cut = cuts.iter().copied().peekable();
    for g in 0..groups {
        if next_cut.peek() == Some(&g) {
            label += 1;
            next_cut.next();
        }
        let end = if g + 1 < groups { starts[g + 1] } else { order.len() };
        for &i in &order[starts[g]..end] {
            strata[i] = label;
        }
    }
    pop.with_strata(strata)
}

/// Exact mu, nu, delta, b2(r) and b3 of the population cdf.
pub fn true_parameters(pop: &FinitePopulation, r: f64) -> Result<PopulationParams> {
    check_open_unit(r)?;
    if r == 0.5 {
        return Err(SkewError::InvalidProbability(r));
    }
    let cdf = pop.cdf();
    let s = cdf.summary();
    if s.mad <= 0.0 {
        return Err(SkewError::DegeneratePopulation);
    }
    Ok(PopulationParams {
        r,
        mu: s.mean,
        nu: s.median,
        delta: s.mad,
        b2: cdf.b2(r)?,
        b3: cdf.b3()?,
    })
}
