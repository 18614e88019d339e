//! Seeded Monte Carlo estimation of strategy costs, and the replication
//! harness for the reference tables.
//!
//! Trial `t` of a run draws from [`stream_rng`]`(master_seed, t)` and every
//! statistic is accumulated as an exact integer sum, so a summary is
//! bit-identical no matter how trials are scheduled across threads.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::RngCore;

use crate::analytic::{self, OptimizationResult};
use crate::math::{self, sqrt};
use crate::model::{stream_rng, InfectionVector, PoolSize, PopulationSize, Probability, StrategyOutcome};
use crate::strategies::{GridShape, Strategy, StrategyError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("trial {trial} produced a wrong classification")]
    Misclassified { trial: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub strategy: Strategy,
    pub p: Probability,
    pub m: PopulationSize,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSummary {
    pub trials: usize,
    pub population: usize,
    pub mean_tests: f64,
    pub stderr_tests: f64,
    pub mean_tpp: f64,
    pub mean_rounds: f64,
    pub max_rounds: usize,
    pub mean_max_participation: f64,
    pub mean_duplicated: f64,
}

/// Integer sums over trials. Merging is associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Tally {
    trials: u64,
    tests: u64,
    tests_sq: u128,
    rounds: u64,
    max_rounds: u64,
    max_participation: u64,
    duplicated: u64,
}

impl Tally {
    pub(crate) fn record(tests: usize, rounds: usize, max_participation: u32, duplicated: usize) -> Self {
        Tally {
            trials: 1,
            tests: tests as u64,
            tests_sq: (tests as u128) * (tests as u128),
            rounds: rounds as u64,
            max_rounds: rounds as u64,
            max_participation: max_participation as u64,
            duplicated: duplicated as u64,
        }
    }

    pub(crate) fn tests(&self) -> u64 {
        self.tests
    }

    fn of(outcome: &StrategyOutcome) -> Self {
        Self::record(outcome.tests, outcome.rounds, outcome.max_participation, outcome.duplicated_samples)
    }

    pub(crate) fn merge(self, other: Tally) -> Tally {
        Tally {
            trials: self.trials + other.trials,
            tests: self.tests + other.tests,
            tests_sq: self.tests_sq + other.tests_sq,
            rounds: self.rounds + other.rounds,
            max_rounds: self.max_rounds.max(other.max_rounds),
            max_participation: self.max_participation + other.max_participation,
            duplicated: self.duplicated + other.duplicated,
        }
    }

    pub(crate) fn summary(&self, population: usize) -> SimulationSummary {
        let n = self.trials as f64;
        let mean = self.tests as f64 / n;
        SimulationSummary {
            trials: self.trials as usize,
            population,
            mean_tests: mean,
            stderr_tests: integer_stderr(self.trials, self.tests as i128, self.tests_sq),
            mean_tpp: if population == 0 { 0.0 } else { mean / population as f64 },
            mean_rounds: self.rounds as f64 / n,
            max_rounds: self.max_rounds as usize,
            mean_max_participation: self.max_participation as f64 / n,
            mean_duplicated: self.duplicated as f64 / n,
        }
    }
}

/// Standard error of the mean from exact sums.
pub(crate) fn integer_stderr(n: u64, sum: i128, sum_sq: u128) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let n_i = n as i128;
    // n * sum_sq - sum^2 is exact and non-negative
    let numer = (n_i as u128) * sum_sq - (sum * sum) as u128;
    let var = numer as f64 / (n as f64 * (n - 1) as f64);
    sqrt(var / n as f64)
}

/// Maps every trial index through `f` and merges the results. Runs on the
/// rayon pool with `std`; the result does not depend on scheduling because
/// `merge` is exact.
pub(crate) fn fold_trials<T, F, M>(trials: usize, f: F, merge: M) -> Result<T, SimulationError>
where
    T: Default + Send,
    F: Fn(u64) -> Result<T, SimulationError> + Sync + Send,
    M: Fn(T, T) -> T + Sync + Send,
{
    #[cfg(feature = "std")]
    {
        use rayon::prelude::*;
        (0..trials as u64)
            .into_par_iter()
            .map(f)
            .try_reduce(T::default, |a, b| Ok(merge(a, b)))
    }
    #[cfg(not(feature = "std"))]
    {
        let mut acc = T::default();
        for t in 0..trials as u64 {
            acc = merge(acc, f(t)?);
        }
        Ok(acc)
    }
}

/// SplitMix64 finalizer over a few words; used to give every table cell its
/// own master seed.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut z = master;
    for &w in words {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(w);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Runs `config.trials` independent executions and summarizes them.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationSummary, SimulationError> {
    if config.trials == 0 {
        return Err(SimulationError::NoTrials);
    }
    let m = config.m.get();
    let tally = fold_trials(
        config.trials,
        |t| {
            let mut rng = stream_rng(config.master_seed, t);
            let vector = InfectionVector::sample_with(config.p, m, &mut rng);
            let partition_seed = rng.next_u64();
            let outcome = config.strategy.run(&vector, partition_seed)?;
            if !outcome.is_exact_for(&vector) {
                return Err(SimulationError::Misclassified { trial: t });
            }
            Ok(Tally::of(&outcome))
        },
        Tally::merge,
    )?;
    Ok(tally.summary(m))
}

pub const TABLE1_PREVALENCES: [f64; 9] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];
pub const TABLE1_SIZES: [usize; 6] = [1, 2, 4, 8, 16, 32];
pub const TABLE1_POPULATION: usize = 32;

/// Published mean tests for the optimized binary tree, `m = 32`, indexed
/// `[prevalence][size]`.
pub const REFERENCE_TABLE1: [[f64; 6]; 9] = [
    [32.0, 16.0, 8.0, 4.0, 2.0, 1.0],
    [32.0, 18.5, 12.7, 10.4, 10.3, 10.8],
    [32.0, 21.3, 17.1, 15.9, 17.2, 18.2],
    [32.0, 23.5, 21.1, 22.5, 23.2, 23.8],
    [32.0, 25.3, 24.8, 26.6, 28.0, 28.4],
    [32.0, 27.1, 28.2, 30.3, 31.9, 33.3],
    [32.0, 29.1, 31.4, 33.5, 36.2, 36.7],
    [32.0, 30.6, 33.5, 37.4, 38.6, 40.0],
    [32.0, 32.2, 36.3, 40.4, 42.2, 43.2],
];

pub const TABLE2_PREVALENCES: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];
pub const TABLE2_GRID_POPULATION: usize = 400;

/// Published tests per patient at the best size for each prevalence.
pub const REFERENCE_SINGLE: [f64; 5] = [0.20, 0.27, 0.33, 0.38, 0.43];
pub const REFERENCE_TREE: [f64; 5] = [0.10, 0.17, 0.23, 0.27, 0.33];
pub const REFERENCE_GRID_WORST: [f64; 5] = [0.14, 0.22, 0.29, 0.35, 0.41];
pub const REFERENCE_GRID_SIMULATED: [f64; 5] = [0.10, 0.13, 0.20, 0.27, 0.32];
pub const REFERENCE_DOUBLE: [f64; 5] = [0.13, 0.21, 0.27, 0.32, 0.37];

/// Round half away from zero to `decimals` places.
pub fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    libm::round(x * scale) / scale
}

/// Truncate toward zero to `decimals` places.
pub fn truncate_to(x: f64, decimals: i32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    // nudge so that e.g. 0.13 * 100 = 12.999... truncates to 13
    libm::trunc(x * scale + 1e-9) / scale
}

#[derive(Debug, Clone)]
pub struct Table1Replication {
    /// `[prevalence][size]`, same layout as [`REFERENCE_TABLE1`].
    pub cells: Vec<Vec<SimulationSummary>>,
}

impl Table1Replication {
    pub fn mean(&self, p_index: usize, n_index: usize) -> f64 {
        self.cells[p_index][n_index].mean_tests
    }

    /// Index into [`TABLE1_SIZES`] of the cheapest size for a prevalence.
    pub fn best_size_index(&self, p_index: usize) -> usize {
        let row = &self.cells[p_index];
        (0..row.len()).fold(0, |best, i| if row[i].mean_tests < row[best].mean_tests { i } else { best })
    }
}

/// Optimized binary tree at `m = 32` over the Table 1 grid.
pub fn replicate_table1(trials: usize, master_seed: u64) -> Result<Table1Replication, SimulationError> {
    let mut cells = Vec::with_capacity(TABLE1_PREVALENCES.len());
    for (pi, &p) in TABLE1_PREVALENCES.iter().enumerate() {
        let mut row = Vec::with_capacity(TABLE1_SIZES.len());
        for (ni, &n) in TABLE1_SIZES.iter().enumerate() {
            let config = SimulationConfig {
                strategy: Strategy::BinaryTree { pool: PoolSize::new(n).expect("table size"), optimize: true },
                p: Probability::new(p).expect("table prevalence"),
                m: PopulationSize::new(TABLE1_POPULATION).expect("non-zero"),
                trials,
                master_seed: derive_seed(master_seed, &[1, pi as u64, ni as u64]),
            };
            row.push(simulate(&config)?);
        }
        cells.push(row);
    }
    Ok(Table1Replication { cells })
}

/// One cell of a Table 2 row: the best size and its tests per patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table2Cell {
    pub size: PoolSize,
    pub tpp: f64,
    /// Zero for closed-form rows.
    pub stderr: f64,
}

impl Table2Cell {
    fn analytic(r: &OptimizationResult) -> Self {
        Table2Cell { size: r.best_size, tpp: r.best_tpp, stderr: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Table2Replication {
    pub single: Vec<Table2Cell>,
    pub tree: Vec<Table2Cell>,
    pub grid_worst: Vec<Table2Cell>,
    pub grid_simulated: Vec<Table2Cell>,
    pub double: Vec<Table2Cell>,
}

/// Searches sizes by simulation: every candidate is run on one unit of
/// `unit(size)` samples and the cheapest mean tests per patient wins.
fn simulated_best<I>(
    sizes: I,
    p: Probability,
    trials: usize,
    master_seed: u64,
    unit: impl Fn(PoolSize) -> usize,
    strategy: impl Fn(PoolSize) -> Strategy,
) -> Result<Table2Cell, SimulationError>
where
    I: IntoIterator<Item = PoolSize>,
{
    let mut best = Table2Cell { size: PoolSize::ONE, tpp: 1.0, stderr: 0.0 };
    for size in sizes {
        let m = unit(size);
        let summary = simulate(&SimulationConfig {
            strategy: strategy(size),
            p,
            m: PopulationSize::new(m).expect("non-empty unit"),
            trials,
            master_seed: derive_seed(master_seed, &[size.get() as u64]),
        })?;
        if summary.mean_tpp < best.tpp {
            best = Table2Cell { size, tpp: summary.mean_tpp, stderr: summary.stderr_tests / m as f64 };
        }
    }
    Ok(best)
}

/// Best tests per patient for each Table 2 prevalence and method.
///
/// Single pooling, worst-case grid (`m = 400`) and double pooling come from
/// the closed forms. The binary tree (one block of `n`, `n` in `2..=32`) and
/// the grid with last-candidate inference (one `n x n` matrix, `n` in
/// `2..=20`) are simulated; sizes are scored by mean tests per patient.
pub fn replicate_table2(trials: usize, master_seed: u64) -> Result<Table2Replication, SimulationError> {
    let grid_m = PopulationSize::new(TABLE2_GRID_POPULATION).expect("non-zero");
    let max_side = math::floor(sqrt(TABLE2_GRID_POPULATION as f64)) as usize;
    let mut out = Table2Replication {
        single: Vec::new(),
        tree: Vec::new(),
        grid_worst: Vec::new(),
        grid_simulated: Vec::new(),
        double: Vec::new(),
    };
    for (pi, &p) in TABLE2_PREVALENCES.iter().enumerate() {
        let p = Probability::new(p).expect("table prevalence");
        out.single.push(Table2Cell::analytic(&analytic::dorfman_optimal_size(p, PoolSize::MAX)));
        out.grid_worst.push(Table2Cell::analytic(
            &analytic::grid2d_optimal_size(p, grid_m, PoolSize::MAX).expect("m >= 4"),
        ));
        out.double.push(Table2Cell::analytic(&analytic::double_pooling_optimal_size(p, PoolSize::MAX)));
        out.tree.push(simulated_best(
            PoolSize::MAX.up_to().skip(1),
            p,
            trials,
            derive_seed(master_seed, &[2, pi as u64]),
            |n| n.get(),
            |n| Strategy::BinaryTree { pool: n, optimize: true },
        )?);
        out.grid_simulated.push(simulated_best(
            PoolSize::MAX.up_to().skip(1).take(max_side - 1),
            p,
            trials,
            derive_seed(master_seed, &[3, pi as u64]),
            |n| n.get() * n.get(),
            |n| Strategy::Grid2d {
                shape: GridShape::new(n).expect("side >= 2"),
                optimize: true,
                leftover_pool: PoolSize::ONE,
            },
        )?);
    }
    Ok(out)
}

/// Strategy families a sweep can cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepStrategy {
    Individual,
    Dorfman,
    Grid2dWorstCase,
    DoublePooling,
    BinaryTree { optimize: bool },
    Grid2dSimulated { optimize: bool },
}

impl SweepStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            SweepStrategy::Individual => "individual",
            SweepStrategy::Dorfman => "dorfman",
            SweepStrategy::Grid2dWorstCase => "grid2d-worst",
            SweepStrategy::DoublePooling => "double",
            SweepStrategy::BinaryTree { .. } => "tree",
            SweepStrategy::Grid2dSimulated { .. } => "grid2d",
        }
    }
}

/// One `(p, n)` point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub strategy: &'static str,
    pub p: f64,
    pub n: usize,
    pub m: usize,
    /// Zero for closed-form rows.
    pub trials: usize,
    pub mean_tests: f64,
    pub stderr: f64,
    pub mean_tpp: f64,
    /// `None` for closed-form rows.
    pub mean_rounds: Option<f64>,
}

/// Tests per patient over a `(p, n)` grid. Closed forms are used where they
/// exist (without their applicability checks, so curves can be drawn past
/// them); the tree and the simulated grid are run through [`simulate`].
/// Grid sides with `n^2 > m` are skipped.
pub fn sweep(
    strategy: SweepStrategy,
    prevalences: &[Probability],
    sizes: &[PoolSize],
    m: PopulationSize,
    trials: usize,
    master_seed: u64,
) -> Result<Vec<SweepRow>, SimulationError> {
    let mut rows = Vec::with_capacity(prevalences.len() * sizes.len());
    for (pi, &p) in prevalences.iter().enumerate() {
        for &n in sizes {
            let closed = match strategy {
                SweepStrategy::Individual => Some(1.0),
                SweepStrategy::Dorfman => Some(analytic::dorfman_tpp(p, n)),
                SweepStrategy::DoublePooling => Some(analytic::double_pooling_tpp(p, n)),
                SweepStrategy::Grid2dWorstCase => {
                    if n.get() < 2 || n.get() * n.get() > m.get() {
                        continue;
                    }
                    Some(analytic::grid2d_worstcase_tpp(p, n))
                }
                _ => None,
            };
            let row = match closed {
                Some(tpp) => SweepRow {
                    strategy: strategy.name(),
                    p: p.value(),
                    n: n.get(),
                    m: m.get(),
                    trials: 0,
                    mean_tests: tpp * m.get() as f64,
                    stderr: 0.0,
                    mean_tpp: tpp,
                    mean_rounds: None,
                },
                None => {
                    let executable = match strategy {
                        SweepStrategy::BinaryTree { optimize } => Strategy::BinaryTree { pool: n, optimize },
                        SweepStrategy::Grid2dSimulated { optimize } => {
                            let Ok(shape) = GridShape::new(n) else { continue };
                            if shape.cells() > m.get() {
                                continue;
                            }
                            Strategy::grid2d_for(p, shape, optimize)
                        }
                        _ => unreachable!("closed forms handled above"),
                    };
                    let s = simulate(&SimulationConfig {
                        strategy: executable,
                        p,
                        m,
                        trials,
                        master_seed: derive_seed(master_seed, &[4, pi as u64, n.get() as u64]),
                    })?;
                    SweepRow {
                        strategy: strategy.name(),
                        p: p.value(),
                        n: n.get(),
                        m: m.get(),
                        trials,
                        mean_tests: s.mean_tests,
                        stderr: s.stderr_tests,
                        mean_tpp: s.mean_tpp,
                        mean_rounds: Some(s.mean_rounds),
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Which simulated estimate a [`TppCache`] cell holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CachedKind {
    BinaryTree { optimize: bool },
    Grid2d { optimize: bool },
}

/// Lazily simulated tests-per-patient estimates on a fixed prevalence grid,
/// linearly interpolated in `p`. Each cell runs one unit (a block of `n`
/// for the tree, an `n x n` matrix for the grid) for `trials` trials.
#[derive(Debug, Clone)]
pub struct TppCache {
    trials: usize,
    master_seed: u64,
    step: f64,
    cells: BTreeMap<(CachedKind, u8, u32), f64>,
}

impl TppCache {
    pub const DEFAULT_STEP: f64 = 0.005;

    pub fn new(trials: usize, master_seed: u64) -> Self {
        TppCache { trials: trials.max(1), master_seed, step: Self::DEFAULT_STEP, cells: BTreeMap::new() }
    }

    pub fn cells_computed(&self) -> usize {
        self.cells.len()
    }

    fn cell(&mut self, kind: CachedKind, size: PoolSize, index: u32) -> Result<f64, SimulationError> {
        let key = (kind, size.get() as u8, index);
        if let Some(&v) = self.cells.get(&key) {
            return Ok(v);
        }
        let p = Probability::new((index as f64 * self.step).min(1.0)).expect("grid point in [0, 1]");
        let (strategy, unit) = match kind {
            CachedKind::BinaryTree { optimize } => (Strategy::BinaryTree { pool: size, optimize }, size.get()),
            CachedKind::Grid2d { optimize } => {
                let shape = GridShape::new(size)?;
                (Strategy::Grid2d { shape, optimize, leftover_pool: PoolSize::ONE }, shape.cells())
            }
        };
        let kind_tag = match kind {
            CachedKind::BinaryTree { optimize } => optimize as u64,
            CachedKind::Grid2d { optimize } => 2 + optimize as u64,
        };
        let summary = simulate(&SimulationConfig {
            strategy,
            p,
            m: PopulationSize::new(unit).expect("non-empty unit"),
            trials: self.trials,
            master_seed: derive_seed(self.master_seed, &[5, kind_tag, size.get() as u64, index as u64]),
        })?;
        self.cells.insert(key, summary.mean_tpp);
        Ok(summary.mean_tpp)
    }

    /// Estimated tests per patient at `p`. A tree block of one sample is
    /// exactly one test.
    pub fn tpp(&mut self, kind: CachedKind, size: PoolSize, p: Probability) -> Result<f64, SimulationError> {
        if matches!(kind, CachedKind::BinaryTree { .. }) && size.get() == 1 {
            return Ok(1.0);
        }
        let x = p.value() / self.step;
        let lo = math::floor(x) as u32;
        let frac = x - lo as f64;
        let v_lo = self.cell(kind, size, lo)?;
        if frac <= 0.0 {
            return Ok(v_lo);
        }
        let v_hi = self.cell(kind, size, lo + 1)?;
        Ok(v_lo + frac * (v_hi - v_lo))
    }

    /// Cheapest tree block size at `p` among `1..=max`.
    pub fn best_tree_size(&mut self, p: Probability, max: PoolSize, optimize: bool) -> Result<(PoolSize, f64), SimulationError> {
        let mut best = (PoolSize::ONE, 1.0);
        for n in max.up_to().skip(1) {
            let v = self.tpp(CachedKind::BinaryTree { optimize }, n, p)?;
            if v < best.1 {
                best = (n, v);
            }
        }
        Ok(best)
    }
}
