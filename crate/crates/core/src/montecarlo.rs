//! Seeded two-set Monte Carlo harness.
//!
//! Set 1 estimates the mse of every point estimator. Set 2, drawn from
//! independent streams, gives bias, interval coverage with tail errors, and
//! the relative bias and stability of the variance estimators against the
//! set-1 mse.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::SolverOptions;
use crate::designs::{DesignKind, DesignSpec, SamplingDesign};
use crate::error::{Result, SkewError};
use crate::estimators::{Auxiliary, CdfBasis, EstimatorKind, SampleView, Target};
use crate::numeric::{check_open_unit, csum};
use crate::population::{generate_population, stratify_by_x, FinitePopulation};
use crate::variance::{infer, EstimateRecord, InferenceOptions, VarianceMethod};

pub const REPORT_SCHEMA: &str = "fps-skew/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    /// CSV population (id,x,y,stratum); overrides size, gamma and seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Number of x-strata built when the design is stratified and the
    /// population carries no labels.
    #[serde(default = "default_strata")]
    pub strata: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_bases")]
    pub bases: Vec<CdfBasis>,
    /// Any of `mean`, `b2`, `b3`; `b2` uses `r`.
    #[serde(default = "default_targets")]
    pub targets: Vec<String>,
    #[serde(default)]
    pub variance_method: VarianceMethod,
    #[serde(default)]
    pub use_inverse_pi: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; unset uses all cores. Not echoed in reports, since
    /// results do not depend on it.
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub population: PopulationConfig,
    pub design: DesignSpec,
    #[serde(default)]
    pub estimators: EstimatorConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_size() -> usize {
    800
}
fn default_strata() -> usize {
    3
}
fn default_r() -> f64 {
    0.75
}
fn default_bases() -> Vec<CdfBasis> {
    vec![CdfBasis::Hajek, CdfBasis::Calibration]
}
fn default_targets() -> Vec<String> {
    ["mean", "b2", "b3"].iter().map(|s| s.to_string()).collect()
}
fn default_replications() -> usize {
    1000
}
fn default_levels() -> Vec<f64> {
    vec![0.90, 0.95, 0.99]
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            r: default_r(),
            bases: default_bases(),
            targets: default_targets(),
            variance_method: VarianceMethod::Syg,
            use_inverse_pi: false,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            replications: default_replications(),
            levels: default_levels(),
        }
    }
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SkewError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative population file is resolved against
    /// the config's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let Some(file) = &cfg.population.file {
            if file.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.population.file = Some(base.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SkewError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.replications == 0 {
            return Err(SkewError::Config("replications must be at least 1".into()));
        }
        for &l in &self.metrics.levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(SkewError::Config(format!("level {l} not in (0, 1)")));
            }
        }
        check_open_unit(self.estimators.r)
            .map_err(|_| SkewError::Config(format!("r = {} not in (0, 1)", self.estimators.r)))?;
        if self.estimators.r == 0.5 {
            return Err(SkewError::Config("r = 0.5 makes b2 undefined".into()));
        }
        if self.estimators.bases.is_empty() || self.estimators.targets.is_empty() {
            return Err(SkewError::Config("no estimators configured".into()));
        }
        self.estimator_kinds()?;
        Ok(())
    }

    /// Targets in config order, each with every basis.
    pub fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>> {
        let mut kinds = Vec::new();
        for t in &self.estimators.targets {
            let target = Target::parse(t, Some(self.estimators.r))
                .map_err(|e| SkewError::Config(e.to_string()))?;
            for &basis in &self.estimators.bases {
                kinds.push(EstimatorKind::new(basis, target));
            }
        }
        Ok(kinds)
    }

    /// Loads or generates the population and adds x-strata when a
    /// stratified design needs them.
    pub fn build_population(&self) -> Result<FinitePopulation> {
        let pop = match &self.population.file {
            Some(path) => FinitePopulation::read_csv(std::fs::File::open(path)?)?,
            None => generate_population(self.population.seed, self.population.size, self.population.gamma)?,
        };
        if self.design.kind == DesignKind::StratifiedSrswor && pop.num_strata() == 0 {
            return stratify_by_x(&pop, self.population.strata);
        }
        Ok(pop)
    }
}

/// sqrt(2 / (n - 1)): relative stability of the unbiased variance estimator
/// of the mean under iid normal sampling.
pub fn krw_benchmark(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(SkewError::InvalidInput(format!("benchmark needs n >= 2, got {n}")));
    }
    Ok((2.0 / (n as f64 - 1.0)).sqrt())
}

/// RNG for replication `h` of set `set`: the master seed keys ChaCha20 and
/// (set, h) selects the stream, so results do not depend on scheduling.
pub fn replication_rng(master_seed: u64, set: u32, h: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(((set as u64) << 40) | h as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelMetrics {
    pub level: f64,
    pub coverage: f64,
    pub lte: f64,
    pub rte: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorMetrics {
    pub estimator: String,
    pub kind: EstimatorKind,
    pub truth: f64,
    pub bias: f64,
    pub rmse: f64,
    pub bias2_over_mse: f64,
    pub avg_v: f64,
    pub rel_bias: f64,
    pub rel_stab_literal: f64,
    pub rel_stab_krw: f64,
    pub levels: Vec<LevelMetrics>,
    pub used_set1: usize,
    pub used_set2: usize,
    pub excluded_set1: usize,
    pub excluded_set2: usize,
}

/// Point estimate and sd of one successful set-2 replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replicate {
    pub estimate: f64,
    pub sd: f64,
}

/// Aggregates one estimator's replications. Intervals are estimate -+
/// z sd, and coverage counts strict containment of `truth`.
pub fn aggregate(
    kind: EstimatorKind,
    truth: f64,
    set1: &[f64],
    set2: &[Replicate],
    levels: &[f64],
) -> Result<EstimatorMetrics> {
    if set1.is_empty() || set2.is_empty() {
        return Err(SkewError::InvalidInput(format!(
            "{kind}: no successful replications in one of the sets"
        )));
    }
    let r1 = set1.len() as f64;
    let r2 = set2.len() as f64;
    let mse = csum(set1.iter().map(|b| (b - truth).powi(2))) / r1;
    let bias = csum(set2.iter().map(|x| x.estimate)) / r2 - truth;
    let avg_v = csum(set2.iter().map(|x| x.sd)) / r2;
    let mean_v2 = csum(set2.iter().map(|x| x.sd * x.sd)) / r2;
    let stab = (csum(set2.iter().map(|x| (x.sd * x.sd - mse).powi(2))) / r2).sqrt() / mse;
    let mut level_rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let z = crate::numeric::z_for_level(level)?;
        let (mut cover, mut left, mut right) = (0usize, 0usize, 0usize);
        for x in set2 {
            let lo = x.estimate - z * x.sd;
            let hi = x.estimate + z * x.sd;
            if lo < truth && truth < hi {
                cover += 1;
            }
            if truth < lo {
                left += 1;
            }
            if hi < truth {
                right += 1;
            }
        }
        level_rows.push(LevelMetrics {
            level,
            coverage: cover as f64 / r2,
            lte: left as f64 / r2,
            rte: right as f64 / r2,
        });
    }
    Ok(EstimatorMetrics {
        estimator: kind.label(),
        kind,
        truth,
        bias,
        rmse: mse.sqrt(),
        bias2_over_mse: bias * bias / mse,
        avg_v,
        rel_bias: mean_v2 / mse - 1.0,
        rel_stab_literal: stab - 1.0,
        rel_stab_krw: stab,
        levels: level_rows,
        used_set1: set1.len(),
        used_set2: set2.len(),
        excluded_set1: 0,
        excluded_set2: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSummary {
    pub size: usize,
    pub strata: usize,
    pub mean: f64,
    pub median: f64,
    pub mad: f64,
    pub r: f64,
    pub b2_r: f64,
    pub b2_one_minus_r: f64,
    /// b2(r) == -b2(1 - r) for this population.
    pub b2_antisymmetric: bool,
    pub b3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub estimator: String,
    pub set: u32,
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub schema: String,
    pub config: SimulationConfig,
    pub population: PopulationSummary,
    pub stratum_allocation: Vec<(usize, usize)>,
    pub krw_benchmark: f64,
    pub estimators: Vec<EstimatorMetrics>,
    /// Failed replications, in (set, replication, estimator) order.
    pub exclusions: Vec<Exclusion>,
    pub footnotes: Vec<String>,
}

type Outcome<T> = std::result::Result<T, SkewError>;

fn run_set<T, F>(reps: usize, set: u32, seed: u64, design: &SamplingDesign, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&crate::designs::DrawnSample<'_>) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|h| {
            let mut rng = replication_rng(seed, set, h);
            let sample = design.draw_with(&mut rng);
            f(&sample)
        })
        .collect()
}

/// Runs both replication sets and assembles the report.
pub fn run(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.threads.unwrap_or(0))
        .build()
        .map_err(|e| SkewError::Config(e.to_string()))?;
    pool.install(|| run_inner(config))
}

fn run_inner(config: &SimulationConfig) -> Result<SimulationReport> {
    let pop = config.build_population()?;
    let design = SamplingDesign::from_spec(&pop, &config.design)?;
    let kinds = config.estimator_kinds()?;
    let cdf = pop.cdf();
    let truths = kinds
        .iter()
        .map(|k| k.target.evaluate(&cdf))
        .collect::<Result<Vec<_>>>()?;
    let aux = Auxiliary::from_population(&pop);
    let solver = SolverOptions::default();
    let opts = InferenceOptions {
        method: config.estimators.variance_method,
        use_inverse_pi: config.estimators.use_inverse_pi,
        levels: config.metrics.levels.clone(),
        solver,
    };
    let reps = config.metrics.replications;
    let seed = config.run.master_seed;

    let set1: Vec<Vec<Outcome<f64>>> = run_set(reps, 1, seed, &design, |sample| {
        let view = SampleView::new(sample, pop.y(), aux, solver);
        kinds.iter().map(|&k| view.estimate(k)).collect()
    });
    let set2: Vec<Vec<Outcome<EstimateRecord>>> = run_set(reps, 2, seed, &design, |sample| {
        let view = SampleView::new(sample, pop.y(), aux, solver);
        kinds.iter().map(|&k| infer(&view, k, &opts)).collect()
    });

    let mut exclusions = Vec::new();
    let mut ok1: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); kinds.len()];
    let mut ok2: Vec<Vec<Replicate>> = vec![Vec::with_capacity(reps); kinds.len()];
    for (h, row) in set1.into_iter().enumerate() {
        for (k, out) in row.into_iter().enumerate() {
            match out {
                Ok(v) => ok1[k].push(v),
                Err(e) => exclusions.push(exclude(&kinds[k], 1, h, e)?),
            }
        }
    }
    for (h, row) in set2.into_iter().enumerate() {
        for (k, out) in row.into_iter().enumerate() {
            match out {
                Ok(rec) => ok2[k].push(Replicate {
                    estimate: rec.estimate,
                    sd: rec.sd,
                }),
                Err(e) => exclusions.push(exclude(&kinds[k], 2, h, e)?),
            }
        }
    }

    let mut estimators = Vec::with_capacity(kinds.len());
    for (k, kind) in kinds.iter().enumerate() {
        let mut m = aggregate(*kind, truths[k], &ok1[k], &ok2[k], &config.metrics.levels)?;
        m.excluded_set1 = reps - ok1[k].len();
        m.excluded_set2 = reps - ok2[k].len();
        estimators.push(m);
    }

    let r = config.estimators.r;
    let summary = cdf.summary();
    let (b2_r, b2_c) = (cdf.b2(r)?, cdf.b2(1.0 - r)?);
    Ok(SimulationReport {
        schema: REPORT_SCHEMA.to_string(),
        config: config.clone(),
        population: PopulationSummary {
            size: pop.len(),
            strata: pop.num_strata(),
            mean: summary.mean,
            median: summary.median,
            mad: summary.mad,
            r,
            b2_r,
            b2_one_minus_r: b2_c,
            b2_antisymmetric: b2_r == -b2_c,
            b3: cdf.b3()?,
        },
        stratum_allocation: design.stratum_sizes(),
        krw_benchmark: krw_benchmark(design.sample_size())?,
        estimators,
        exclusions,
        footnotes: vec![
            "mse (and rmse) come from set 1; all other columns from set 2".into(),
            "bias2_over_mse divides the squared set-2 bias by the set-1 mse".into(),
            "rel_stab_literal = sqrt(mean((V^2 - mse)^2)) / mse - 1; rel_stab_krw omits the -1 and compares with krw_benchmark".into(),
            "coverage counts strict containment; lte and rte count strict one-sided misses".into(),
            "failed replications are excluded per estimator and listed under exclusions".into(),
        ],
    })
}

fn exclude(kind: &EstimatorKind, set: u32, replication: usize, e: SkewError) -> Result<Exclusion> {
    if !e.is_numerical() {
        return Err(e);
    }
    log::warn!("{kind}: set {set} replication {replication} excluded: {e}");
    Ok(Exclusion {
        estimator: kind.label(),
        set,
        replication,
        error: e.kind().to_string(),
    })
}

impl SimulationReport {
    /// Columns: estimator, level, coverage, lte, rte.
    pub fn write_coverage_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["estimator", "level", "coverage", "lte", "rte"])?;
        for m in &self.estimators {
            for l in &m.levels {
                w.write_record([
                    m.estimator.clone(),
                    l.level.to_string(),
                    l.coverage.to_string(),
                    l.lte.to_string(),
                    l.rte.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Columns: estimator, bias, rmse, bias2_over_mse, avg_v, rel_bias,
    /// rel_stab_literal, rel_stab_krw.
    pub fn write_metrics_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "estimator",
            "bias",
            "rmse",
            "bias2_over_mse",
            "avg_v",
            "rel_bias",
            "rel_stab_literal",
            "rel_stab_krw",
        ])?;
        for m in &self.estimators {
            let row = [m.bias, m.rmse, m.bias2_over_mse, m.avg_v, m.rel_bias, m.rel_stab_literal, m.rel_stab_krw];
            let mut rec = vec![m.estimator.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writeln!(writer)?;
        Ok(())
    }

    /// Fixed-width text rendering of the two tables, three decimals.
    pub fn render_tables(&self) -> String {
        let mut out = String::new();
        let levels: Vec<f64> = self.config.metrics.levels.clone();
        out.push_str(&format!("{:<20}", "confidence interval"));
        for prefix in ["cov", "lte", "rte"] {
            for l in &levels {
                out.push_str(&format!(" {:>9}", format!("{prefix}{l}")));
            }
        }
        out.push('\n');
        for m in &self.estimators {
            out.push_str(&format!("{:<20}", m.estimator));
            for pick in 0..3 {
                for l in &m.levels {
                    let v = [l.coverage, l.lte, l.rte][pick];
                    out.push_str(&format!(" {v:>9.3}"));
                }
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "estimator", "bias", "rmse", "b2/mse", "avg_v", "rel.bias", "stab.lit", "stab.krw"
        ));
        for m in &self.estimators {
            out.push_str(&format!(
                "{:<20} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
                m.estimator, m.bias, m.rmse, m.bias2_over_mse, m.avg_v, m.rel_bias, m.rel_stab_literal, m.rel_stab_krw
            ));
        }
        out.push_str(&format!(
            "krw benchmark sqrt(2/(n-1)) = {:.3}; exclusions: {}\n",
            self.krw_benchmark,
            self.exclusions.len()
        ));
        out
    }
}
