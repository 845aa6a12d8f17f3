//! `fps-skew` command line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fps_skew::designs::read_sample_units;
use fps_skew::montecarlo;
use fps_skew::oracle::run_verification;
use fps_skew::{
    generate_population, infer, stratify_by_x, Auxiliary, CdfBasis, EstimatorKind, FinitePopulation,
    InferenceOptions, SampleView, SamplingDesign, SimulationConfig, SkewError, SolverOptions, Target,
    VarianceMethod,
};

#[derive(Parser)]
#[command(name = "fps-skew", version, about = "Design-based inference for skewness indices in finite populations")]
struct Cli {
    /// On failure, also print a JSON error object to stderr.
    #[arg(long, global = true)]
    error_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a population from the lognormal-x model.
    GenPop(GenPopArgs),
    /// Draw one sample and write it as CSV.
    Draw(DrawArgs),
    /// Estimate a target from one sample and print a JSON record.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study from a config file.
    Simulate(SimulateArgs),
    /// Run the brute-force oracle checks.
    Verify,
    /// Write x, y and stratum columns for scatter plots.
    ExportFigureData(FigureArgs),
}

#[derive(Args)]
struct PopulationSource {
    /// Population CSV (id,x,y,stratum).
    #[arg(long, conflicts_with_all = ["n", "gamma", "pop_seed"])]
    population: Option<PathBuf>,
    /// Population size when generating.
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Population seed when generating.
    #[arg(long = "pop-seed", default_value_t = 0)]
    pop_seed: u64,
}

#[derive(Args)]
struct GenPopArgs {
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of x-strata with about equal x totals (0 = none).
    #[arg(long, default_value_t = 0)]
    strata: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Srswor,
    Stratified,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_enum, default_value = "srswor")]
    design: DesignArg,
    /// Sample size.
    #[arg(long = "sample-size")]
    sample_size: Option<usize>,
    /// Strata built when a stratified design meets an unlabeled population.
    #[arg(long, default_value_t = 3)]
    strata: usize,
    /// Sample seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DrawArgs {
    #[command(flatten)]
    source: PopulationSource,
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    source: PopulationSource,
    #[command(flatten)]
    design: DesignArgs,
    /// Use the sample in this CSV (id column) instead of drawing one.
    #[arg(long, conflicts_with = "census")]
    sample: Option<PathBuf>,
    /// Use the whole population as the sample.
    #[arg(long)]
    census: bool,
    /// hajek, ht or calibration.
    #[arg(long, default_value = "hajek")]
    basis: String,
    /// mean, b3, b2 or b2(r).
    #[arg(long, default_value = "b3")]
    target: String,
    /// r for target b2.
    #[arg(long, default_value_t = 0.75)]
    r: f64,
    /// ht or syg.
    #[arg(long = "variance-method", default_value = "syg")]
    variance_method: String,
    /// Regress on (1, x) with 1/pi weights instead of calibration weights.
    #[arg(long = "use-inverse-pi")]
    use_inverse_pi: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.90,0.95,0.99")]
    levels: Vec<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory for coverage.csv, metrics.csv and report.json.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    threads: Option<usize>,
    /// Replications per set (overrides the config).
    #[arg(long)]
    replications: Option<usize>,
    /// Do not print the tables.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct FigureArgs {
    #[command(flatten)]
    source: PopulationSource,
    #[arg(long, default_value_t = 3)]
    strata: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let skew = err.downcast_ref::<SkewError>();
            let numerical = skew.is_some_and(SkewError::is_numerical);
            eprintln!("error: {err:#}");
            if cli.error_json {
                let body = serde_json::json!({
                    "error": skew.map(SkewError::kind).unwrap_or("usage"),
                    "numerical": numerical,
                    "message": format!("{err:#}"),
                });
                eprintln!("{body}");
            }
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenPop(a) => gen_pop(a),
        Command::Draw(a) => draw(a),
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Verify => verify(),
        Command::ExportFigureData(a) => figure(a),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_population(src: &PopulationSource) -> anyhow::Result<FinitePopulation> {
    Ok(match &src.population {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            FinitePopulation::read_csv(f)?
        }
        None => generate_population(src.pop_seed, src.n, src.gamma)?,
    })
}

fn build_design(pop: FinitePopulation, args: &DesignArgs, census: bool) -> anyhow::Result<(FinitePopulation, SamplingDesign)> {
    let n = if census {
        pop.len()
    } else {
        match args.sample_size {
            Some(n) => n,
            None => bail!("--sample-size is required"),
        }
    };
    Ok(match args.design {
        DesignArg::Srswor => {
            let d = SamplingDesign::srswor(pop.len(), n)?;
            (pop, d)
        }
        DesignArg::Stratified => {
            let pop = if pop.num_strata() == 0 { stratify_by_x(&pop, args.strata)? } else { pop };
            let d = SamplingDesign::stratified_proportional(pop.strata(), n)?;
            (pop, d)
        }
    })
}

fn gen_pop(a: GenPopArgs) -> anyhow::Result<()> {
    let mut pop = generate_population(a.seed, a.n, a.gamma)?;
    if a.strata > 0 {
        pop = stratify_by_x(&pop, a.strata)?;
    }
    let mut out = output(a.out.as_deref())?;
    pop.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn draw(a: DrawArgs) -> anyhow::Result<()> {
    let pop = load_population(&a.source)?;
    let (pop, design) = build_design(pop, &a.design, false)?;
    let sample = design.draw(a.design.seed);
    let mut out = output(a.out.as_deref())?;
    sample.write_csv(&pop, &mut out)?;
    out.flush()?;
    Ok(())
}

fn estimate(a: EstimateArgs) -> anyhow::Result<()> {
    let basis: CdfBasis = a.basis.parse()?;
    let target = Target::parse(&a.target, Some(a.r))?;
    let method: VarianceMethod = a.variance_method.parse()?;
    let pop = load_population(&a.source)?;
    let from_file = match &a.sample {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            Some(read_sample_units(&pop, f)?)
        }
        None => None,
    };
    let mut design_args_n = a.design.sample_size;
    if let Some(units) = &from_file {
        design_args_n = Some(units.len());
    }
    let design_args = DesignArgs {
        sample_size: design_args_n,
        ..a.design
    };
    let (pop, design) = build_design(pop, &design_args, a.census)?;
    let sample = match from_file {
        Some(units) => design.sample_from_units(units)?,
        None if a.census => design.census()?,
        None => design.draw(design_args.seed),
    };
    let solver = SolverOptions::default();
    let view = SampleView::new(&sample, pop.y(), Auxiliary::from_population(&pop), solver);
    let opts = InferenceOptions {
        method,
        use_inverse_pi: a.use_inverse_pi,
        levels: a.levels,
        solver,
    };
    let record = infer(&view, EstimatorKind::new(basis, target), &opts)?;
    let mut out = output(None)?;
    serde_json::to_writer_pretty(&mut out, &record)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = SimulationConfig::from_path(&a.config)
        .with_context(|| format!("cannot load config {}", a.config.display()))?;
    if a.threads.is_some() {
        cfg.run.threads = a.threads;
    }
    if let Some(r) = a.replications {
        cfg.metrics.replications = r;
    }
    let report = montecarlo::run(&cfg)?;
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut w = output(Some(&dir.join("coverage.csv")))?;
        report.write_coverage_csv(&mut w)?;
        w.flush()?;
        let mut w = output(Some(&dir.join("metrics.csv")))?;
        report.write_metrics_csv(&mut w)?;
        w.flush()?;
        let mut w = output(Some(&dir.join("report.json")))?;
        report.write_json(&mut w)?;
        w.flush()?;
    }
    if !a.quiet {
        let mut out = output(None)?;
        write!(out, "{}", report.render_tables())?;
        out.flush()?;
    }
    Ok(())
}

fn verify() -> anyhow::Result<()> {
    let checks = run_verification()?;
    let mut out = output(None)?;
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{status}  {:<width$}  {}", c.name, c.detail)?;
    }
    out.flush()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("error: {failed} oracle checks failed");
        std::process::exit(2);
    }
    Ok(())
}

fn figure(a: FigureArgs) -> anyhow::Result<()> {
    let pop = load_population(&a.source)?;
    let pop = if pop.num_strata() == 0 && a.strata > 0 { stratify_by_x(&pop, a.strata)? } else { pop };
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "x,y,stratum")?;
    for i in 0..pop.len() {
        writeln!(
            out,
            "{},{},{}",
            fps_skew::population::fmt_real(pop.x()[i]),
            fps_skew::population::fmt_real(pop.y()[i]),
            pop.strata()[i]
        )?;
    }
    out.flush()?;
    Ok(())
}
