//! Risk-sorted pooling plans.
//!
//! Patients are sorted by predicted risk and walked greedily: the block being
//! built is scored by its running risk estimate, the family's optimizer picks
//! a pool size for that risk, and the block is closed once it reaches that
//! size. Blocks whose best size is 1 are tested individually.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analytic;
use crate::model::{stream_rng, InfectionVector, PoolSize, PopulationSize, Probability};
use crate::simulator::{fold_trials, integer_stderr, CachedKind, SimulationError, SimulationSummary, Tally, TppCache};
use crate::strategies::{GridShape, Strategy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CohortError {
    #[error("cohort is empty")]
    Empty,
    #[error("patient {index} has an empty id")]
    EmptyId { index: usize },
    #[error("patient {index} repeats id {id:?}")]
    DuplicateId { id: String, index: usize },
    #[error("risk CDF has no breakpoints")]
    EmptyCdf,
    #[error("risk CDF breakpoint {index} is outside [0, 1]")]
    CdfOutOfRange { index: usize },
    #[error("risk CDF breakpoint {index}: risks must strictly increase")]
    CdfRiskNotIncreasing { index: usize },
    #[error("risk CDF breakpoint {index}: cumulative fractions must not decrease")]
    CdfNotMonotone { index: usize },
    #[error("risk CDF must end at cumulative fraction 1, got {0}")]
    CdfIncomplete(f64),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub id: String,
    pub risk: Probability,
}

/// Patients with unique, non-empty ids, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    patients: Vec<Patient>,
}

impl Cohort {
    pub fn new(patients: Vec<Patient>) -> Result<Self, CohortError> {
        if patients.is_empty() {
            return Err(CohortError::Empty);
        }
        let mut seen = BTreeSet::new();
        for (index, patient) in patients.iter().enumerate() {
            if patient.id.is_empty() {
                return Err(CohortError::EmptyId { index });
            }
            if !seen.insert(patient.id.as_str()) {
                return Err(CohortError::DuplicateId { id: patient.id.clone(), index });
            }
        }
        Ok(Cohort { patients })
    }

    /// Homogeneous cohort of `len` patients at risk `p`, ids `P000000`...
    pub fn uniform(p: Probability, len: usize) -> Result<Self, CohortError> {
        Cohort::new((0..len).map(|i| Patient { id: patient_id(i), risk: p }).collect())
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn risks(&self) -> Vec<f64> {
        self.patients.iter().map(|p| p.risk.value()).collect()
    }

    /// Same patients in a seeded random order.
    pub fn shuffled(&self, seed: u64) -> Cohort {
        let mut patients = self.patients.clone();
        patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Cohort { patients }
    }

    /// Indices sorted by ascending risk, input order breaking ties.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.patients[a].risk.value().total_cmp(&self.patients[b].risk.value()));
        order
    }
}

fn patient_id(i: usize) -> String {
    format!("P{i:06}")
}

/// Piecewise-linear cumulative distribution of risk scores.
///
/// Mass below the first breakpoint sits on that breakpoint, so a single
/// breakpoint `(r, 1.0)` is a point mass at `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskCdf {
    points: Vec<(f64, f64)>,
}

impl RiskCdf {
    /// Breakpoints `(risk, cumulative fraction)`.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, CohortError> {
        if points.is_empty() {
            return Err(CohortError::EmptyCdf);
        }
        for (index, &(risk, frac)) in points.iter().enumerate() {
            if !(0.0..=1.0).contains(&risk) || !(0.0..=1.0).contains(&frac) {
                return Err(CohortError::CdfOutOfRange { index });
            }
            if index > 0 {
                let (prev_risk, prev_frac) = points[index - 1];
                if risk <= prev_risk {
                    return Err(CohortError::CdfRiskNotIncreasing { index });
                }
                if frac < prev_frac {
                    return Err(CohortError::CdfNotMonotone { index });
                }
            }
        }
        let last = points[points.len() - 1].1;
        if (last - 1.0).abs() > 1e-9 {
            return Err(CohortError::CdfIncomplete(last));
        }
        let mut points = points;
        let n = points.len();
        points[n - 1].1 = 1.0;
        Ok(RiskCdf { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Fraction of the population with risk `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let first = self.points[0];
        if x < first.0 {
            return 0.0;
        }
        for w in self.points.windows(2) {
            let ((r0, f0), (r1, f1)) = (w[0], w[1]);
            if x < r1 {
                return f0 + (x - r0) / (r1 - r0) * (f1 - f0);
            }
        }
        1.0
    }

    /// Inverse CDF at `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let (r0, f0) = self.points[0];
        if u < f0 {
            return r0;
        }
        for w in self.points.windows(2) {
            let ((r0, f0), (r1, f1)) = (w[0], w[1]);
            if u < f1 {
                return r0 + (u - f0) / (f1 - f0) * (r1 - r0);
            }
        }
        self.points[self.points.len() - 1].0
    }

    /// Kolmogorov-Smirnov distance between this CDF and the empirical
    /// distribution of `samples`.
    pub fn ks_distance(&self, samples: &[f64]) -> f64 {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut d: f64 = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let x = sorted[i];
            let mut j = i;
            while j < sorted.len() && sorted[j] == x {
                j += 1;
            }
            let f = self.cdf(x);
            d = d.max((f - i as f64 / n).abs()).max((f - j as f64 / n).abs());
            i = j;
        }
        d
    }
}

/// `m` patients with risks drawn from `cdf` by inversion.
pub fn sample_cohort(cdf: &RiskCdf, m: PopulationSize, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patients = (0..m.get())
        .map(|i| {
            let risk = cdf.quantile(rng.random::<f64>()).clamp(0.0, 1.0);
            Patient { id: patient_id(i), risk: Probability::new(risk).expect("clamped") }
        })
        .collect();
    Cohort { patients }
}

/// Which pooling method a plan assigns to its pooled groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanFamily {
    Individual,
    Dorfman,
    Tree,
    Grid2d,
    Double,
}

impl PlanFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PlanFamily::Individual => "individual",
            PlanFamily::Dorfman => "dorfman",
            PlanFamily::Tree => "tree",
            PlanFamily::Grid2d => "grid2d",
            PlanFamily::Double => "double",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskEstimator {
    Mean,
    /// Conservative: the riskiest member.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanPolicy {
    pub max_pool: PoolSize,
    pub estimator: RiskEstimator,
    /// Largest risk spread allowed inside a pooled group (sorted plans only).
    pub max_spread: f64,
    /// Walk patients by ascending risk; otherwise in input order.
    pub sort_by_risk: bool,
    /// Sibling / last-candidate inference for tree and grid groups.
    pub optimize: bool,
    /// Trials per cell of the simulated estimates for tree and grid groups.
    pub cache_trials: usize,
    pub cache_seed: u64,
}

impl Default for PlanPolicy {
    fn default() -> Self {
        PlanPolicy {
            max_pool: PoolSize::MAX,
            estimator: RiskEstimator::Mean,
            max_spread: 0.05,
            sort_by_risk: true,
            optimize: true,
            cache_trials: 2000,
            cache_seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanGroup {
    /// Cohort indices, in the order the strategy lays them out.
    pub members: Vec<usize>,
    pub strategy: Strategy,
    pub risk_estimate: f64,
    pub expected_tpp: f64,
}

impl PlanGroup {
    pub fn is_pooled(&self) -> bool {
        !matches!(self.strategy, Strategy::Individual)
    }

    pub fn expected_tests(&self) -> f64 {
        self.expected_tpp * self.members.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingPlan {
    pub family: PlanFamily,
    pub groups: Vec<PlanGroup>,
    pub cohort_size: usize,
}

impl PoolingPlan {
    pub fn expected_tests(&self) -> f64 {
        self.groups.iter().map(PlanGroup::expected_tests).sum()
    }

    pub fn expected_tpp(&self) -> f64 {
        plan_expected_tpp(self)
    }

    /// Groups run side by side, so the plan takes as many rounds as its
    /// slowest group.
    pub fn worst_case_rounds(&self) -> usize {
        self.groups.iter().map(|g| g.strategy.max_rounds()).max().unwrap_or(0)
    }

    /// Cohort indices of every patient whose sample must be split into
    /// aliquots, i.e. every member of a pooled group.
    pub fn duplicated_members(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().filter(|g| g.is_pooled()).flat_map(|g| g.members.iter().copied())
    }

    pub fn duplication_count(&self) -> usize {
        self.groups.iter().filter(|g| g.is_pooled()).map(|g| g.members.len()).sum()
    }
}

/// Expected tests per patient of a plan: group sizes weighted by each
/// group's estimate.
pub fn plan_expected_tpp(plan: &PoolingPlan) -> f64 {
    if plan.cohort_size == 0 {
        return 0.0;
    }
    plan.expected_tests() / plan.cohort_size as f64
}

/// Greedy planner. Holds the simulated estimates used by tree and grid
/// groups so repeated plans reuse them.
#[derive(Debug, Clone)]
pub struct Planner {
    policy: PlanPolicy,
    cache: TppCache,
}

/// A pooling choice for a risk level: the strategy and how many patients it
/// consumes.
#[derive(Debug, Clone, Copy)]
struct Choice {
    strategy: Strategy,
    unit: usize,
}

const INDIVIDUAL: Choice = Choice { strategy: Strategy::Individual, unit: 1 };

impl Planner {
    pub fn new(policy: PlanPolicy) -> Self {
        Planner { policy, cache: TppCache::new(policy.cache_trials, policy.cache_seed) }
    }

    pub fn policy(&self) -> &PlanPolicy {
        &self.policy
    }

    fn estimate(&self, risks: impl Iterator<Item = f64>) -> f64 {
        let (mut sum, mut max, mut n) = (0.0, 0.0f64, 0usize);
        for r in risks {
            sum += r;
            max = max.max(r);
            n += 1;
        }
        match self.policy.estimator {
            RiskEstimator::Mean => (sum / n as f64).clamp(0.0, 1.0),
            RiskEstimator::Max => max,
        }
    }

    fn dorfman_choice(&self, p: Probability) -> Choice {
        let best = analytic::dorfman_optimal_size(p, self.policy.max_pool).best_size;
        if best.get() == 1 {
            INDIVIDUAL
        } else {
            Choice { strategy: Strategy::SinglePooling { pool: best }, unit: best.get() }
        }
    }

    fn choose(&mut self, family: PlanFamily, p: Probability, remaining: usize) -> Result<Choice, CohortError> {
        let optimize = self.policy.optimize;
        Ok(match family {
            PlanFamily::Individual => INDIVIDUAL,
            PlanFamily::Dorfman => self.dorfman_choice(p),
            PlanFamily::Tree => {
                let (best, _) = self.cache.best_tree_size(p, self.policy.max_pool, optimize)?;
                if best.get() == 1 {
                    INDIVIDUAL
                } else {
                    Choice { strategy: Strategy::BinaryTree { pool: best, optimize }, unit: best.get() }
                }
            }
            PlanFamily::Grid2d => {
                let side = PopulationSize::new(remaining)
                    .ok()
                    .and_then(|m| analytic::grid2d_optimal_size(p, m, self.policy.max_pool).ok())
                    .map(|r| r.best_size)
                    .unwrap_or(PoolSize::ONE);
                match GridShape::new(side) {
                    Ok(shape) => Choice {
                        strategy: Strategy::Grid2d { shape, optimize, leftover_pool: PoolSize::ONE },
                        unit: shape.cells(),
                    },
                    Err(_) => self.dorfman_choice(p),
                }
            }
            PlanFamily::Double => {
                let s = analytic::double_pooling_optimal_size(p, self.policy.max_pool).best_size;
                if s.get() > 1 && s.get() * s.get() <= remaining {
                    Choice { strategy: Strategy::DoublePooling { pool: s }, unit: s.get() * s.get() }
                } else {
                    self.dorfman_choice(p)
                }
            }
        })
    }

    fn group_tpp(&mut self, strategy: &Strategy, p: Probability) -> Result<f64, CohortError> {
        Ok(match *strategy {
            Strategy::Individual => 1.0,
            Strategy::SinglePooling { pool } => analytic::dorfman_tpp(p, pool),
            Strategy::BinaryTree { pool, optimize } => self.cache.tpp(CachedKind::BinaryTree { optimize }, pool, p)?,
            Strategy::Grid2d { shape, optimize, .. } => {
                self.cache.tpp(CachedKind::Grid2d { optimize }, shape.pool_size(), p)?
            }
            Strategy::DoublePooling { pool } => analytic::double_pooling_tpp(p, pool),
        })
    }

    fn push_group(
        &mut self,
        groups: &mut Vec<PlanGroup>,
        risks: &[f64],
        members: &[usize],
        strategy: Strategy,
    ) -> Result<(), CohortError> {
        if let Strategy::Individual = strategy {
            if let Some(last) = groups.last_mut().filter(|g| !g.is_pooled()) {
                last.members.extend_from_slice(members);
                last.risk_estimate = self.estimate(last.members.iter().map(|&i| risks[i]));
                return Ok(());
            }
        }
        let est = self.estimate(members.iter().map(|&i| risks[i]));
        let expected_tpp = self.group_tpp(&strategy, Probability::new(est).expect("estimate in [0, 1]"))?;
        groups.push(PlanGroup { members: members.to_vec(), strategy, risk_estimate: est, expected_tpp });
        Ok(())
    }

    /// A block that ended before reaching its chosen size, because of the
    /// spread bound or the end of the cohort.
    fn close_short(
        &mut self,
        groups: &mut Vec<PlanGroup>,
        risks: &[f64],
        block: &[usize],
        choice: Choice,
    ) -> Result<(), CohortError> {
        match choice.strategy {
            Strategy::SinglePooling { .. } | Strategy::BinaryTree { .. } if block.len() >= 2 => {
                let pool = PoolSize::new(block.len()).expect("shorter than a valid pool");
                let strategy = match choice.strategy {
                    Strategy::BinaryTree { optimize, .. } => Strategy::BinaryTree { pool, optimize },
                    _ => Strategy::SinglePooling { pool },
                };
                self.push_group(groups, risks, block, strategy)
            }
            Strategy::Grid2d { .. } | Strategy::DoublePooling { .. } => {
                self.walk(groups, risks, block, PlanFamily::Dorfman)
            }
            _ => self.push_group(groups, risks, block, Strategy::Individual),
        }
    }

    fn walk(
        &mut self,
        groups: &mut Vec<PlanGroup>,
        risks: &[f64],
        order: &[usize],
        family: PlanFamily,
    ) -> Result<(), CohortError> {
        let spread_bound = self.policy.sort_by_risk;
        let mut start = 0;
        while start < order.len() {
            let mut end = start;
            let (mut sum, mut max) = (0.0, 0.0f64);
            let mut choice = INDIVIDUAL;
            let mut reached = false;
            while end < order.len() {
                let r = risks[order[end]];
                if spread_bound && end > start && r - risks[order[start]] > self.policy.max_spread {
                    break;
                }
                sum += r;
                max = max.max(r);
                end += 1;
                let est = match self.policy.estimator {
                    RiskEstimator::Mean => sum / (end - start) as f64,
                    RiskEstimator::Max => max,
                };
                let p = Probability::new(est.clamp(0.0, 1.0)).expect("clamped");
                choice = self.choose(family, p, order.len() - start)?;
                if end - start >= choice.unit {
                    reached = true;
                    break;
                }
            }
            if reached {
                let block = &order[start..start + choice.unit];
                self.push_group(groups, risks, block, choice.strategy)?;
                start += choice.unit;
            } else {
                self.close_short(groups, risks, &order[start..end], choice)?;
                start = end;
            }
        }
        Ok(())
    }

    /// Builds a plan for `cohort` with pooled groups from `family`.
    pub fn partition(&mut self, cohort: &Cohort, family: PlanFamily) -> Result<PoolingPlan, CohortError> {
        let order = if self.policy.sort_by_risk {
            cohort.sorted_order()
        } else {
            (0..cohort.len()).collect()
        };
        let risks = cohort.risks();
        let mut groups = Vec::new();
        self.walk(&mut groups, &risks, &order, family)?;
        Ok(PoolingPlan { family, groups, cohort_size: cohort.len() })
    }
}

/// One-shot [`Planner::partition`].
pub fn partition(cohort: &Cohort, family: PlanFamily, policy: PlanPolicy) -> Result<PoolingPlan, CohortError> {
    Planner::new(policy).partition(cohort, family)
}

/// Samples one status per patient from its own risk, in cohort order.
fn sample_statuses(cohort_risks: &[f64], rng: &mut ChaCha8Rng) -> InfectionVector {
    InfectionVector::sample_heterogeneous(cohort_risks, rng)
}

/// Runs every group of `plan` on one infection draw. Returns tests, rounds,
/// worst participation and duplicated samples.
fn execute_plan(
    plan: &PoolingPlan,
    statuses: &InfectionVector,
    rng: &mut ChaCha8Rng,
    trial: u64,
) -> Result<Tally, SimulationError> {
    let (mut tests, mut rounds, mut max_part, mut duplicated) = (0, 0, 0, 0);
    for group in &plan.groups {
        let vector = statuses.select(&group.members);
        let outcome = group.strategy.run(&vector, rng.next_u64())?;
        if !outcome.is_exact_for(&vector) {
            return Err(SimulationError::Misclassified { trial });
        }
        tests += outcome.tests;
        rounds = rounds.max(outcome.rounds);
        max_part = max_part.max(outcome.max_participation);
        duplicated += outcome.duplicated_samples;
    }
    Ok(Tally::record(tests, rounds, max_part, duplicated))
}

/// Monte Carlo cost of a plan, with each patient positive at their own risk.
pub fn evaluate_plan(cohort: &Cohort, plan: &PoolingPlan, trials: usize, seed: u64) -> Result<SimulationSummary, SimulationError> {
    if trials == 0 {
        return Err(SimulationError::NoTrials);
    }
    let risks = cohort.risks();
    let tally = fold_trials(
        trials,
        |t| {
            let mut rng = stream_rng(seed, t);
            let statuses = sample_statuses(&risks, &mut rng);
            execute_plan(plan, &statuses, &mut rng, t)
        },
        Tally::merge,
    )?;
    Ok(tally.summary(cohort.len()))
}

/// Paired difference in tests between two plans over the same cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    pub trials: usize,
    pub mean_tpp_a: f64,
    pub mean_tpp_b: f64,
    /// Mean of `tests(a) - tests(b)`.
    pub mean_diff: f64,
    pub stderr_diff: f64,
}

impl PairedComparison {
    /// Whether plan `a` needs fewer tests than plan `b` at the one-sided
    /// confidence level given by `z` (1.645 for 95%).
    pub fn a_cheaper(&self, z: f64) -> bool {
        self.mean_diff + z * self.stderr_diff < 0.0
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct PairTally {
    trials: u64,
    a: u64,
    b: u64,
    diff: i128,
    diff_sq: u128,
}

/// Runs both plans on identical infection draws (statuses are sampled per
/// cohort index, so the plans see the same patients positive).
pub fn compare_plans(
    cohort: &Cohort,
    a: &PoolingPlan,
    b: &PoolingPlan,
    trials: usize,
    seed: u64,
) -> Result<PairedComparison, SimulationError> {
    if trials == 0 {
        return Err(SimulationError::NoTrials);
    }
    let risks = cohort.risks();
    let tally = fold_trials(
        trials,
        |t| {
            let mut rng = stream_rng(seed, t);
            let statuses = sample_statuses(&risks, &mut rng);
            let mut design_rng = rng.clone();
            let ta = execute_plan(a, &statuses, &mut rng, t)?.tests();
            let tb = execute_plan(b, &statuses, &mut design_rng, t)?.tests();
            let d = ta as i128 - tb as i128;
            Ok(PairTally { trials: 1, a: ta, b: tb, diff: d, diff_sq: (d * d) as u128 })
        },
        |x, y| PairTally {
            trials: x.trials + y.trials,
            a: x.a + y.a,
            b: x.b + y.b,
            diff: x.diff + y.diff,
            diff_sq: x.diff_sq + y.diff_sq,
        },
    )?;
    let n = tally.trials as f64;
    let m = cohort.len() as f64;
    Ok(PairedComparison {
        trials: tally.trials as usize,
        mean_tpp_a: tally.a as f64 / n / m,
        mean_tpp_b: tally.b as f64 / n / m,
        mean_diff: tally.diff as f64 / n,
        stderr_diff: integer_stderr(tally.trials, tally.diff, tally.diff_sq),
    })
}
