//! Argument parsing and subcommand execution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use pooltest_core::analytic::{self, AnalyticError};
use pooltest_core::cohort::{self, Cohort, PlanFamily, PlanPolicy, Planner, RiskEstimator};
use pooltest_core::simulator::{
    self, derive_seed, SimulationConfig, SimulationError, SweepStrategy, TppCache, REFERENCE_DOUBLE,
    REFERENCE_GRID_SIMULATED, REFERENCE_GRID_WORST, REFERENCE_SINGLE, REFERENCE_TABLE1, REFERENCE_TREE,
    TABLE1_PREVALENCES, TABLE1_SIZES, TABLE2_PREVALENCES,
};
use pooltest_core::strategies::{GridShape, Strategy};
use pooltest_core::{PoolSize, PopulationSize, Probability};

use crate::formats::{self, FormatError};
use crate::report::{Cell, Format, Report};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Input(#[from] FormatError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) | CliError::File { .. } => 2,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        usage(e)
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        usage(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "pooltest", version, about = "Pooled PCR testing: cost analysis, simulation and cohort planning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Individual,
    Dorfman,
    Tree,
    Grid2d,
    Double,
}

impl StrategyArg {
    fn family(self) -> PlanFamily {
        match self {
            StrategyArg::Individual => PlanFamily::Individual,
            StrategyArg::Dorfman => PlanFamily::Dorfman,
            StrategyArg::Tree => PlanFamily::Tree,
            StrategyArg::Grid2d => PlanFamily::Grid2d,
            StrategyArg::Double => PlanFamily::Double,
        }
    }

    fn name(self) -> &'static str {
        self.family().name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableArg {
    Table1,
    Table2,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeFlag {
    /// Infer results that follow from earlier tests (tree siblings, last grid candidates).
    #[arg(long, overrides_with = "no_optimize")]
    optimize: bool,
    #[arg(long = "no-optimize")]
    no_optimize: bool,
}

impl OptimizeFlag {
    pub fn enabled(&self) -> bool {
        !self.no_optimize
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrevalenceArgs {
    /// Prevalence; repeat or separate with commas.
    #[arg(short = 'p', long = "prevalence", value_delimiter = ',', allow_negative_numbers = true)]
    pub prevalence: Vec<f64>,
    /// Inclusive prevalence range FROM:TO:STEP.
    #[arg(long, value_name = "FROM:TO:STEP")]
    pub p_range: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form expected tests for one configuration.
    Analyze {
        #[arg(long, value_enum, default_value_t = StrategyArg::Dorfman)]
        strategy: StrategyArg,
        #[arg(short = 'p', long = "prevalence", allow_negative_numbers = true)]
        p: f64,
        #[arg(short = 'n', long = "pool-size")]
        n: usize,
        #[arg(short = 'm', long = "population", default_value_t = 32)]
        m: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Best pool size per prevalence.
    Optimize {
        #[arg(long, value_enum, default_value_t = StrategyArg::Dorfman)]
        strategy: StrategyArg,
        #[command(flatten)]
        prevalence: PrevalenceArgs,
        /// Population that grid sides must fit in (default: max-pool squared).
        #[arg(short = 'm', long = "population")]
        m: Option<usize>,
        #[arg(long, default_value_t = 32)]
        max_pool: usize,
        /// Trials per size for the simulated tree search.
        #[arg(long, default_value_t = 20_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        optimize: OptimizeFlag,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Monte Carlo cost of one configuration.
    Simulate {
        #[arg(long, value_enum, default_value_t = StrategyArg::Dorfman)]
        strategy: StrategyArg,
        #[arg(short = 'p', long = "prevalence", allow_negative_numbers = true)]
        p: f64,
        /// Pool size (grid side for grid2d).
        #[arg(short = 'n', long = "pool-size", default_value_t = 1)]
        n: usize,
        /// Population (default: one pool, or one n x n block for grid2d and double).
        #[arg(short = 'm', long = "population")]
        m: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        optimize: OptimizeFlag,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Replicate the reference tables with deltas against published values.
    Tables {
        #[arg(value_enum)]
        which: TableArg,
        #[arg(long, default_value_t = 20_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Build a pooling plan for a cohort of risk-scored patients.
    Plan {
        /// Patients file with header `patient_id,risk`.
        #[arg(long, value_name = "PATH", conflicts_with = "cdf", required_unless_present = "cdf")]
        patients: Option<PathBuf>,
        /// Risk CDF file with header `risk,cum_fraction`; a cohort of size -m is sampled from it.
        #[arg(long, value_name = "PATH", requires = "m")]
        cdf: Option<PathBuf>,
        #[arg(short = 'm', long = "population")]
        m: Option<usize>,
        /// Pooling family for the pooled groups.
        #[arg(long, value_enum, default_value_t = StrategyArg::Dorfman)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        max_pool: usize,
        #[arg(long, value_enum, default_value_t = EstimatorArg::Mean)]
        estimator: EstimatorArg,
        /// Largest risk spread inside a pooled group.
        #[arg(long, default_value_t = 0.05)]
        max_spread: f64,
        /// Keep input order instead of sorting by risk.
        #[arg(long)]
        unsorted: bool,
        /// Trials per cell of the tree and grid cost estimates.
        #[arg(long, default_value_t = 2000)]
        cache_trials: usize,
        /// Also simulate the plan with this many trials.
        #[arg(long, default_value_t = 0)]
        evaluate: usize,
        #[command(flatten)]
        optimize: OptimizeFlag,
        /// Summary format.
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Plan document; `.json` selects JSON, anything else CSV.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Tests per patient over a grid of prevalences and sizes.
    Sweep {
        #[arg(long, value_enum, default_value_t = StrategyArg::Dorfman)]
        strategy: StrategyArg,
        /// For grid2d, use the worst-case closed form instead of simulation.
        #[arg(long)]
        worst_case: bool,
        #[command(flatten)]
        prevalence: PrevalenceArgs,
        /// Sizes; repeat or separate with commas (default 1..=max-pool).
        #[arg(short = 'n', long = "pool-size", value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        max_pool: usize,
        #[arg(short = 'm', long = "population", default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        optimize: OptimizeFlag,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn probability(p: f64) -> Result<Probability, CliError> {
    Probability::new(p).map_err(|_| usage(format!("prevalence {p} is outside [0, 1]")))
}

fn pool_size(n: usize, cap: usize) -> Result<PoolSize, CliError> {
    let cap = PoolSize::new(cap).map_err(usage)?;
    PoolSize::with_cap(n, cap).map_err(usage)
}

fn population(m: usize) -> Result<PopulationSize, CliError> {
    PopulationSize::new(m).map_err(usage)
}

fn prevalences(args: &PrevalenceArgs) -> Result<Vec<Probability>, CliError> {
    let mut out: Vec<Probability> = args.prevalence.iter().map(|&p| probability(p)).collect::<Result<_, _>>()?;
    if let Some(range) = &args.p_range {
        let parts: Vec<f64> = range
            .split(':')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| usage(format!("--p-range `{range}`: expected FROM:TO:STEP")))?;
        let [from, to, step] = parts[..] else {
            return Err(usage(format!("--p-range `{range}`: expected FROM:TO:STEP")));
        };
        if step <= 0.0 || to < from {
            return Err(usage(format!("--p-range `{range}`: need FROM <= TO and STEP > 0")));
        }
        let count = ((to - from) / step + 1e-9).floor() as usize;
        for k in 0..=count {
            // snap to the step's decimal grid so 0.01 + 2 * 0.01 prints as 0.03
            let p = ((from + k as f64 * step) * 1e9).round() / 1e9;
            out.push(probability(p)?);
        }
    }
    if out.is_empty() {
        return Err(usage("give at least one prevalence with -p or --p-range"));
    }
    Ok(out)
}

fn tpp_cell(v: f64) -> Cell {
    Cell::Float(v, 4)
}

fn emit(report: &Report, output: &OutputArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let text = report.render(output.format);
    match &output.out {
        Some(path) => write_file(path, |w| w.write_all(text.as_bytes()).map_err(FormatError::from)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Input(e.into())),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), FormatError>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn warn(stderr: &mut dyn Write, msg: &str) {
    let _ = writeln!(stderr, "warning: {msg}");
}

/// Runs a parsed command, writing reports to `stdout` and warnings to `stderr`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { strategy, p, n, m, output } => {
            let report = analyze(strategy, p, n, m, stderr)?;
            emit(&report, &output, stdout)
        }
        Command::Optimize { strategy, prevalence, m, max_pool, trials, seed, optimize, output } => {
            let report = optimize_report(strategy, &prevalences(&prevalence)?, m, max_pool, trials, seed, optimize.enabled())?;
            emit(&report, &output, stdout)
        }
        Command::Simulate { strategy, p, n, m, trials, seed, optimize, output } => {
            let report = simulate_report(strategy, p, n, m, trials, seed, optimize.enabled())?;
            emit(&report, &output, stdout)
        }
        Command::Tables { which, trials, seed, output } => {
            let report = match which {
                TableArg::Table1 => table1_report(trials, seed)?,
                TableArg::Table2 => table2_report(trials, seed)?,
                TableArg::Double => double_report(),
            };
            emit(&report, &output, stdout)
        }
        Command::Plan {
            patients,
            cdf,
            m,
            strategy,
            seed,
            max_pool,
            estimator,
            max_spread,
            unsorted,
            cache_trials,
            evaluate,
            optimize,
            format,
            out,
        } => {
            let cohort = match (&patients, &cdf) {
                (Some(path), _) => formats::load_patients(open(path)?)?,
                (None, Some(path)) => {
                    let cdf = formats::load_cdf(open(path)?)?;
                    let m = population(m.ok_or_else(|| usage("--cdf needs -m"))?)?;
                    cohort::sample_cohort(&cdf, m, seed)
                }
                (None, None) => return Err(usage("give --patients or --cdf")),
            };
            if !(0.0..=1.0).contains(&max_spread) {
                return Err(usage(format!("--max-spread {max_spread} is outside [0, 1]")));
            }
            if cache_trials == 0 {
                return Err(usage("--cache-trials must be positive"));
            }
            let policy = PlanPolicy {
                max_pool: pool_size(max_pool, PoolSize::MAX.get())?,
                estimator: match estimator {
                    EstimatorArg::Mean => RiskEstimator::Mean,
                    EstimatorArg::Max => RiskEstimator::Max,
                },
                max_spread,
                sort_by_risk: !unsorted,
                optimize: optimize.enabled(),
                cache_trials,
                cache_seed: derive_seed(seed, &[0x9ca5]),
            };
            let plan = Planner::new(policy).partition(&cohort, strategy.family()).map_err(usage)?;
            if let Some(path) = &out {
                let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
                write_file(path, |w| {
                    if json {
                        formats::write_plan_json(w, &cohort, &plan)
                    } else {
                        formats::write_plan_csv(w, &cohort, &plan)
                    }
                })?;
            }
            let report = plan_report(&cohort, &plan, evaluate, seed)?;
            let output = OutputArgs { format, out: None };
            emit(&report, &output, stdout)
        }
        Command::Sweep { strategy, worst_case, prevalence, n, max_pool, m, trials, seed, optimize, output } => {
            let ps = prevalences(&prevalence)?;
            let sizes: Vec<PoolSize> = if n.is_empty() {
                pool_size(max_pool, PoolSize::MAX.get())?.up_to().collect()
            } else {
                n.iter().map(|&n| pool_size(n, max_pool)).collect::<Result<_, _>>()?
            };
            let optimize = optimize.enabled();
            let kind = match strategy {
                StrategyArg::Individual => SweepStrategy::Individual,
                StrategyArg::Dorfman => SweepStrategy::Dorfman,
                StrategyArg::Tree => SweepStrategy::BinaryTree { optimize },
                StrategyArg::Grid2d if worst_case => SweepStrategy::Grid2dWorstCase,
                StrategyArg::Grid2d => SweepStrategy::Grid2dSimulated { optimize },
                StrategyArg::Double => SweepStrategy::DoublePooling,
            };
            if trials == 0 {
                return Err(usage("--trials must be positive"));
            }
            let rows = simulator::sweep(kind, &ps, &sizes, population(m)?, trials, seed)?;
            let mut report = Report::new(
                "",
                &["strategy", "p", "n", "m", "trials", "mean_tests", "stderr", "mean_tpp", "mean_rounds"],
            );
            for r in rows {
                report.push(vec![
                    r.strategy.into(),
                    Cell::Float(r.p, 3),
                    r.n.into(),
                    r.m.into(),
                    r.trials.into(),
                    Cell::Float(r.mean_tests, 4),
                    Cell::Float(r.stderr, 4),
                    tpp_cell(r.mean_tpp),
                    r.mean_rounds.map(|v| Cell::Float(v, 3)).unwrap_or(Cell::Empty),
                ]);
            }
            emit(&report, &output, stdout)
        }
    }
}

fn analyze(strategy: StrategyArg, p: f64, n: usize, m: usize, stderr: &mut dyn Write) -> Result<Report, CliError> {
    let prob = probability(p)?;
    let size = pool_size(n, PoolSize::MAX.get())?;
    let pop = population(m)?;
    let tpp = match strategy {
        StrategyArg::Individual => 1.0,
        StrategyArg::Dorfman => {
            if !m.is_multiple_of(n) {
                warn(stderr, &format!("population {m} is not a multiple of pool size {n}; using fractional pools"));
            }
            analytic::dorfman_expected_tests(prob, size, pop) / m as f64
        }
        StrategyArg::Grid2d => {
            if n < 2 {
                return Err(usage("grid2d needs a side of at least 2"));
            }
            let bound = analytic::grid2d_validity_bound(size)?;
            if p >= bound.value() {
                warn(
                    stderr,
                    &format!(
                        "p = {p} exceeds the worst-case validity bound sqrt((n-2)/n^3) = {:.4} for n = {n}",
                        bound.value()
                    ),
                );
            }
            if n * n > m {
                warn(stderr, &format!("an {n}x{n} grid needs {} samples but the population is {m}", n * n));
            }
            analytic::grid2d_worstcase_tpp(prob, size)
        }
        StrategyArg::Double => {
            if n * n > m {
                warn(stderr, &format!("double pooling with s = {n} needs {} samples but the population is {m}", n * n));
            }
            analytic::double_pooling_tpp(prob, size)
        }
        StrategyArg::Tree => {
            return Err(usage("the binary tree has no closed form; use `pooltest simulate --strategy tree`"));
        }
    };
    let mut report = Report::new("", &["strategy", "p", "n", "m", "expected_tests", "tpp"]);
    report.push(vec![
        strategy.name().into(),
        Cell::Float(p, 4),
        n.into(),
        m.into(),
        Cell::Float(tpp * m as f64, 4),
        tpp_cell(tpp),
    ]);
    Ok(report)
}

fn optimize_report(
    strategy: StrategyArg,
    ps: &[Probability],
    m: Option<usize>,
    max_pool: usize,
    trials: usize,
    seed: u64,
    optimize: bool,
) -> Result<Report, CliError> {
    let max = pool_size(max_pool, PoolSize::MAX.get())?;
    let mut cache = TppCache::new(trials.max(1), seed);
    let mut report = Report::new("", &["strategy", "p", "best_n", "best_tpp", "decision"]);
    for &p in ps {
        let (best, tpp) = match strategy {
            StrategyArg::Individual => (PoolSize::ONE, 1.0),
            StrategyArg::Dorfman => {
                let r = analytic::dorfman_optimal_size(p, max);
                (r.best_size, r.best_tpp)
            }
            StrategyArg::Double => {
                let r = analytic::double_pooling_optimal_size(p, max);
                (r.best_size, r.best_tpp)
            }
            StrategyArg::Grid2d => {
                let pop = population(m.unwrap_or(max_pool * max_pool))?;
                let r = analytic::grid2d_optimal_size(p, pop, max)?;
                (r.best_size, r.best_tpp)
            }
            StrategyArg::Tree => {
                if trials == 0 {
                    return Err(usage("--trials must be positive"));
                }
                cache.best_tree_size(p, max, optimize)?
            }
        };
        let decision = if best.get() == 1 { "do not pool" } else { "pool" };
        report.push(vec![strategy.name().into(), Cell::Float(p.value(), 4), best.get().into(), tpp_cell(tpp), decision.into()]);
    }
    Ok(report)
}

fn simulate_report(
    strategy: StrategyArg,
    p: f64,
    n: usize,
    m: Option<usize>,
    trials: usize,
    seed: u64,
    optimize: bool,
) -> Result<Report, CliError> {
    let prob = probability(p)?;
    let size = pool_size(n, PoolSize::MAX.get())?;
    let executable = match strategy {
        StrategyArg::Individual => Strategy::Individual,
        StrategyArg::Dorfman => Strategy::SinglePooling { pool: size },
        StrategyArg::Tree => Strategy::BinaryTree { pool: size, optimize },
        StrategyArg::Grid2d => Strategy::grid2d_for(prob, GridShape::new(size).map_err(usage)?, optimize),
        StrategyArg::Double => Strategy::DoublePooling { pool: size },
    };
    let default_m = match strategy {
        StrategyArg::Grid2d | StrategyArg::Double => n * n,
        _ => n,
    };
    if trials == 0 {
        return Err(usage("--trials must be positive"));
    }
    let config = SimulationConfig { strategy: executable, p: prob, m: population(m.unwrap_or(default_m))?, trials, master_seed: seed };
    let s = simulator::simulate(&config)?;
    let mut report = Report::new(
        "",
        &["strategy", "p", "n", "m", "trials", "mean_tests", "stderr", "mean_tpp", "mean_rounds", "max_rounds"],
    );
    report.push(vec![
        strategy.name().into(),
        Cell::Float(p, 4),
        n.into(),
        s.population.into(),
        s.trials.into(),
        Cell::Float(s.mean_tests, 4),
        Cell::Float(s.stderr_tests, 4),
        tpp_cell(s.mean_tpp),
        Cell::Float(s.mean_rounds, 3),
        s.max_rounds.into(),
    ]);
    Ok(report)
}

fn table1_report(trials: usize, seed: u64) -> Result<Report, CliError> {
    let t = simulator::replicate_table1(trials, seed)?;
    let mut report = Report::new(
        format!("Binary tree with sibling inference, m = 32, {trials} trials per cell"),
        &["p", "n", "mean_tests", "stderr", "reference", "delta", "best"],
    );
    for (pi, &p) in TABLE1_PREVALENCES.iter().enumerate() {
        let best = t.best_size_index(pi);
        for (ni, &n) in TABLE1_SIZES.iter().enumerate() {
            let s = &t.cells[pi][ni];
            let reference = REFERENCE_TABLE1[pi][ni];
            report.push(vec![
                Cell::Float(p, 2),
                n.into(),
                Cell::Float(s.mean_tests, 2),
                Cell::Float(s.stderr_tests, 3),
                Cell::Float(reference, 1),
                Cell::Float(s.mean_tests - reference, 2),
                if ni == best { "*".into() } else { Cell::Empty },
            ]);
        }
    }
    Ok(report)
}

fn table2_report(trials: usize, seed: u64) -> Result<Report, CliError> {
    let t = simulator::replicate_table2(trials, seed)?;
    let mut report = Report::new(
        format!("Tests per patient at the best size ({trials} trials per simulated size)"),
        &["method", "p", "n", "tpp", "stderr", "reported", "reference", "delta"],
    );
    let rows = [
        ("single", &t.single, &REFERENCE_SINGLE, false),
        ("tree", &t.tree, &REFERENCE_TREE, false),
        ("grid2d-worst", &t.grid_worst, &REFERENCE_GRID_WORST, false),
        ("grid2d-simulated", &t.grid_simulated, &REFERENCE_GRID_SIMULATED, false),
        ("double", &t.double, &REFERENCE_DOUBLE, true),
    ];
    for (name, cells, reference, truncate) in rows {
        for (i, cell) in cells.iter().enumerate() {
            let reported =
                if truncate { simulator::truncate_to(cell.tpp, 2) } else { simulator::round_to(cell.tpp, 2) };
            report.push(vec![
                name.into(),
                Cell::Float(TABLE2_PREVALENCES[i], 2),
                cell.size.get().into(),
                tpp_cell(cell.tpp),
                tpp_cell(cell.stderr),
                Cell::Float(reported, 2),
                Cell::Float(reference[i], 2),
                Cell::Float(reported - reference[i], 2),
            ]);
        }
    }
    Ok(report)
}

fn double_report() -> Report {
    let mut report = Report::new(
        "Double pooling, integer minimization over s, truncated to two decimals",
        &["p", "s", "tpp", "reported", "reference", "delta"],
    );
    for (i, &p) in TABLE2_PREVALENCES.iter().enumerate() {
        let r = analytic::double_pooling_optimal_size(Probability::new(p).expect("table prevalence"), PoolSize::MAX);
        let reported = simulator::truncate_to(r.best_tpp, 2);
        report.push(vec![
            Cell::Float(p, 2),
            r.best_size.get().into(),
            tpp_cell(r.best_tpp),
            Cell::Float(reported, 2),
            Cell::Float(REFERENCE_DOUBLE[i], 2),
            Cell::Float(reported - REFERENCE_DOUBLE[i], 2),
        ]);
    }
    report
}

fn plan_report(cohort: &Cohort, plan: &cohort::PoolingPlan, evaluate: usize, seed: u64) -> Result<Report, CliError> {
    let tpp = plan.expected_tpp();
    let mut headers = vec![
        "family",
        "patients",
        "groups",
        "pooled_groups",
        "expected_tests",
        "expected_tpp",
        "reduction",
        "worst_case_rounds",
        "duplicated_samples",
    ];
    let mut row = vec![
        plan.family.name().into(),
        cohort.len().into(),
        plan.groups.len().into(),
        plan.groups.iter().filter(|g| g.is_pooled()).count().into(),
        Cell::Float(plan.expected_tests(), 2),
        tpp_cell(tpp),
        Cell::Float(1.0 - tpp, 4),
        plan.worst_case_rounds().into(),
        plan.duplication_count().into(),
    ];
    if evaluate > 0 {
        let s = cohort::evaluate_plan(cohort, plan, evaluate, derive_seed(seed, &[0xe7a1]))?;
        headers.extend(["simulated_tpp", "simulated_stderr"]);
        row.extend([tpp_cell(s.mean_tpp), Cell::Float(s.stderr_tests / cohort.len() as f64, 5)]);
    }
    let mut report = Report::new("", &headers);
    report.push(row);
    Ok(report)
}
