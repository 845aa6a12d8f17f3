//! Fixed-size without-replacement designs (SRSWOR and stratified SRSWOR)
//! with exact first and second order inclusion probabilities.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkewError};
use crate::population::{fmt_real, FinitePopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Srswor,
    StratifiedSrswor,
}

/// Serializable description of a design; the population supplies the strata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub sample_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Stratum {
    units: Vec<usize>,
    sample_size: usize,
}

impl Stratum {
    fn pi(&self) -> f64 {
        self.sample_size as f64 / self.units.len() as f64
    }

    fn pi_pair(&self) -> f64 {
        let (n, m) = (self.sample_size as f64, self.units.len() as f64);
        if m < 2.0 {
            // a single-unit stratum has no distinct pairs
            return 0.0;
        }
        n * (n - 1.0) / (m * (m - 1.0))
    }
}

/// A fixed-size design over units 0..N. SRSWOR is stored as one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDesign {
    kind: DesignKind,
    population_size: usize,
    sample_size: usize,
    strata: Vec<Stratum>,
    unit_stratum: Vec<usize>,
}

impl SamplingDesign {
    pub fn srswor(population_size: usize, sample_size: usize) -> Result<Self> {
        if population_size == 0 {
            return Err(SkewError::EmptyPopulation);
        }
        if sample_size == 0 || sample_size > population_size {
            return Err(SkewError::InvalidInput(format!(
                "sample size {sample_size} not in 1..={population_size}"
            )));
        }
        Ok(Self {
            kind: DesignKind::Srswor,
            population_size,
            sample_size,
            strata: vec![Stratum {
                units: (0..population_size).collect(),
                sample_size,
            }],
            unit_stratum: vec![0; population_size],
        })
    }

    /// Stratified SRSWOR with explicit per-stratum sample sizes.
    /// `labels` are 1-based stratum labels per unit.
    pub fn stratified(labels: &[u32], allocation: &[usize]) -> Result<Self> {
        let h = allocation.len();
        if labels.is_empty() {
            return Err(SkewError::EmptyPopulation);
        }
        let mut strata: Vec<Stratum> = (0..h)
            .map(|k| Stratum {
                units: Vec::new(),
                sample_size: allocation[k],
            })
            .collect();
        let mut unit_stratum = Vec::with_capacity(labels.len());
        for (i, &l) in labels.iter().enumerate() {
            let k = (l as usize).checked_sub(1).filter(|&k| k < h).ok_or_else(|| {
                SkewError::InvalidInput(format!("unit {i} has stratum label {l} outside 1..={h}"))
            })?;
            strata[k].units.push(i);
            unit_stratum.push(k);
        }
        for (k, s) in strata.iter().enumerate() {
            if s.units.is_empty() || s.sample_size == 0 || s.sample_size > s.units.len() {
                return Err(SkewError::Allocation(format!(
                    "stratum {}: n_h = {} with N_h = {}",
                    k + 1,
                    s.sample_size,
                    s.units.len()
                )));
            }
        }
        Ok(Self {
            kind: DesignKind::StratifiedSrswor,
            population_size: labels.len(),
            sample_size: allocation.iter().sum(),
            strata,
            unit_stratum,
        })
    }

    /// Stratified SRSWOR with proportional allocation.
    pub fn stratified_proportional(labels: &[u32], sample_size: usize) -> Result<Self> {
        let h = labels.iter().copied().max().unwrap_or(0) as usize;
        if h == 0 {
            return Err(SkewError::InvalidInput(
                "stratified design needs stratum labels".into(),
            ));
        }
        let mut sizes = vec![0usize; h];
        for &l in labels {
            if l == 0 {
                return Err(SkewError::InvalidInput("stratum label 0".into()));
            }
            sizes[l as usize - 1] += 1;
        }
        let allocation = proportional_allocation(&sizes, sample_size)?;
        Self::stratified(labels, &allocation)
    }

    pub fn from_spec(pop: &FinitePopulation, spec: &DesignSpec) -> Result<Self> {
        match spec.kind {
            DesignKind::Srswor => Self::srswor(pop.len(), spec.sample_size),
            DesignKind::StratifiedSrswor => {
                Self::stratified_proportional(pop.strata(), spec.sample_size)
            }
        }
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    /// (N_h, n_h) per stratum.
    pub fn stratum_sizes(&self) -> Vec<(usize, usize)> {
        self.strata
            .iter()
            .map(|s| (s.units.len(), s.sample_size))
            .collect()
    }

    /// Units of stratum `k` (0-based).
    pub fn stratum_units(&self, k: usize) -> &[usize] {
        &self.strata[k].units
    }

    pub fn pi(&self, i: usize) -> f64 {
        self.strata[self.unit_stratum[i]].pi()
    }

    /// Joint inclusion probability; `i == j` returns the first-order pi.
    pub fn pi2(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.pi(i);
        }
        let (si, sj) = (self.unit_stratum[i], self.unit_stratum[j]);
        if si == sj {
            self.strata[si].pi_pair()
        } else {
            self.strata[si].pi() * self.strata[sj].pi()
        }
    }

    pub fn draw(&self, seed: u64) -> DrawnSample<'_> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        self.draw_with(&mut rng)
    }

    /// Independent partial Fisher-Yates shuffles within each stratum.
    pub fn draw_with<R: Rng + ?Sized>(&self, rng: &mut R) -> DrawnSample<'_> {
        let mut units = Vec::with_capacity(self.sample_size);
        for s in &self.strata {
            let mut pool = s.units.clone();
            let (chosen, _) = pool.partial_shuffle(rng, s.sample_size);
            units.extend_from_slice(chosen);
        }
        units.sort_unstable();
        self.sample_from_sorted(units)
    }

    /// Wraps a given unit set as a sample of this design. The per-stratum
    /// counts must match the allocation.
    pub fn sample_from_units(&self, mut units: Vec<usize>) -> Result<DrawnSample<'_>> {
        units.sort_unstable();
        if units.windows(2).any(|w| w[0] == w[1]) {
            return Err(SkewError::InvalidInput("duplicate units in sample".into()));
        }
        if units.last().is_some_and(|&u| u >= self.population_size) {
            return Err(SkewError::InvalidInput("unit index out of range".into()));
        }
        let mut counts = vec![0usize; self.strata.len()];
        for &u in &units {
            counts[self.unit_stratum[u]] += 1;
        }
        if counts.iter().zip(&self.strata).any(|(c, s)| *c != s.sample_size) {
            return Err(SkewError::InvalidInput(
                "sample does not match the design's stratum sample sizes".into(),
            ));
        }
        Ok(self.sample_from_sorted(units))
    }

    /// The census sample (only valid when n = N).
    pub fn census(&self) -> Result<DrawnSample<'_>> {
        self.sample_from_units((0..self.population_size).collect())
    }

    fn sample_from_sorted(&self, units: Vec<usize>) -> DrawnSample<'_> {
        let pi = units.iter().map(|&u| self.pi(u)).collect();
        DrawnSample {
            design: self,
            units,
            pi,
        }
    }
}

/// Largest-remainder proportional allocation; strata left with zero units
/// take one from the currently largest allocation.
pub fn proportional_allocation(stratum_sizes: &[usize], sample_size: usize) -> Result<Vec<usize>> {
    let h = stratum_sizes.len();
    let total: usize = stratum_sizes.iter().sum();
    if h == 0 || total == 0 {
        return Err(SkewError::EmptyPopulation);
    }
    if stratum_sizes.contains(&0) {
        return Err(SkewError::Allocation("empty stratum".into()));
    }
    if sample_size < h || sample_size > total {
        return Err(SkewError::Allocation(format!(
            "sample size {sample_size} cannot give every one of {h} strata a unit (N = {total})"
        )));
    }
    let mut alloc: Vec<usize> = stratum_sizes
        .iter()
        .map(|&m| sample_size * m / total)
        .collect();
    let mut rem: Vec<(usize, usize)> = stratum_sizes
        .iter()
        .enumerate()
        .map(|(k, &m)| ((sample_size * m) % total, k))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = sample_size - alloc.iter().sum::<usize>();
    for &(_, k) in rem.iter().take(missing) {
        alloc[k] += 1;
    }
    while let Some(empty) = alloc.iter().position(|&a| a == 0) {
        let donor = (0..h)
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            .expect("at least one stratum");
        if alloc[donor] <= 1 {
            return Err(SkewError::Allocation("cannot give every stratum a unit".into()));
        }
        alloc[donor] -= 1;
        alloc[empty] += 1;
    }
    Ok(alloc)
}

/// A realized sample: population unit indices with their inclusion
/// probabilities, plus the design for joint probabilities.
#[derive(Debug, Clone)]
pub struct DrawnSample<'d> {
    design: &'d SamplingDesign,
    units: Vec<usize>,
    pi: Vec<f64>,
}

impl<'d> DrawnSample<'d> {
    pub fn design(&self) -> &'d SamplingDesign {
        self.design
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Joint inclusion probability of the sample members at positions a, b.
    pub fn pi2_at(&self, a: usize, b: usize) -> f64 {
        self.design.pi2(self.units[a], self.units[b])
    }

    /// Values of a population-level variable at the sampled units.
    pub fn gather(&self, values: &[f64]) -> Vec<f64> {
        self.units.iter().map(|&u| values[u]).collect()
    }

    /// Writes the sample as CSV with header `id,x,y,stratum,pi`.
    pub fn write_csv<W: std::io::Write>(&self, pop: &FinitePopulation, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "x", "y", "stratum", "pi"])?;
        for (&u, &p) in self.units.iter().zip(&self.pi) {
            w.write_record([
                pop.ids()[u].to_string(),
                fmt_real(pop.x()[u]),
                fmt_real(pop.y()[u]),
                pop.strata()[u].to_string(),
                fmt_real(p),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// True when every sampled unit has pi = 1 (the design has no sampling
    /// variance).
    pub fn is_census(&self) -> bool {
        self.pi.iter().all(|&p| p == 1.0)
    }
}

/// Reads the `id` column of a sample CSV and maps the ids to population
/// unit indices.
pub fn read_sample_units<R: std::io::Read>(pop: &FinitePopulation, reader: R) -> Result<Vec<usize>> {
    let index: std::collections::HashMap<u64, usize> =
        pop.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let col = r
        .headers()?
        .iter()
        .position(|h| h == "id")
        .ok_or_else(|| SkewError::InvalidInput("sample file has no id column".into()))?;
    let mut units = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let raw = rec.get(col).unwrap_or("");
        let id: u64 = raw
            .parse()
            .map_err(|_| SkewError::InvalidInput(format!("bad id `{raw}`")))?;
        units.push(
            *index
                .get(&id)
                .ok_or_else(|| SkewError::InvalidInput(format!("id {id} not in population")))?,
        );
    }
    Ok(units)
}
