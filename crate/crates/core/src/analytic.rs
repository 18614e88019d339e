//! Closed-form expected test counts, validity bounds, integer pool-size
//! optimizers and an exhaustive expectation oracle.
//!
//! Expected-test formulas scale a per-pool cost by `m / n` with no remainder
//! correction; the executable strategies handle remainders exactly.

use alloc::vec::Vec;

use crate::math::{powi, sqrt};
use crate::model::{PoolSize, PopulationSize, Probability};
use crate::strategies::{Strategy, StrategyError};

/// Largest sample count [`brute_force_expected_tests`] enumerates.
pub const MAX_ENUMERATED: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("{side}x{side} grid needs {need} samples but the population is {population}")]
    GridExceedsPopulation { side: usize, need: usize, population: usize },
    #[error("prevalence {p} exceeds 1/{side}; the worst-case grid formula does not apply")]
    PrevalenceTooHigh { p: f64, side: usize },
    #[error("grid side must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("grid optimization needs a population of at least 4, got {0}")]
    PopulationTooSmall(usize),
    #[error("exhaustive enumeration is limited to {MAX_ENUMERATED} samples, got {0}")]
    TooManySamples(usize),
    #[error("strategy misclassified infection pattern {mask:#b}")]
    Misclassified { mask: u64 },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

/// Best size found by an integer grid search, plus the full profile.
///
/// `best_size == 1` means pooling does not pay off; `best_tpp` is then 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_size: PoolSize,
    pub best_tpp: f64,
    pub profile: Vec<(PoolSize, f64)>,
}

impl OptimizationResult {
    /// Minimum of the profile, smallest size on ties.
    fn from_profile(profile: Vec<(PoolSize, f64)>) -> Self {
        let (best_size, best_tpp) = profile
            .iter()
            .copied()
            .fold(None::<(PoolSize, f64)>, |best, (n, tpp)| match best {
                Some((_, b)) if b <= tpp => best,
                _ => Some((n, tpp)),
            })
            .expect("profile is never empty");
        OptimizationResult { best_size, best_tpp, profile }
    }

    pub fn pools(&self) -> bool {
        self.best_size.get() > 1
    }
}

/// Expected tests for `m` samples in Dorfman pools of `n`:
/// `{(1-(1-p)^n)(n+1) + (1-p)^n} * m/n`.
pub fn dorfman_expected_tests(p: Probability, n: PoolSize, m: PopulationSize) -> f64 {
    let n = n.get() as f64;
    let clean = powi(p.complement(), n as usize);
    ((1.0 - clean) * (n + 1.0) + clean) * m.get() as f64 / n
}

/// Dorfman tests per patient, `1 + 1/n - (1-p)^n`.
pub fn dorfman_tpp(p: Probability, n: PoolSize) -> f64 {
    1.0 + 1.0 / n.get() as f64 - powi(p.complement(), n.get())
}

/// Scans `n` in `1..=max`. Size 1 stands for individual testing at 1.0
/// tests per patient.
pub fn dorfman_optimal_size(p: Probability, max: PoolSize) -> OptimizationResult {
    OptimizationResult::from_profile(
        max.up_to()
            .map(|n| (n, if n.get() == 1 { 1.0 } else { dorfman_tpp(p, n) }))
            .collect(),
    )
}

/// Worst-case grid tests per patient, `2/n + (p n^2)^2 / n^2`, with no
/// precondition checks.
pub fn grid2d_worstcase_tpp(p: Probability, n: PoolSize) -> f64 {
    let n = n.get() as f64;
    let k = p.value() * n * n;
    (2.0 * n + k * k) / (n * n)
}

/// Worst-case grid tests, `(2n + (p n^2)^2) * m / n^2`, where every positive
/// sits alone on its row and column.
pub fn grid2d_worstcase_tests(p: Probability, n: PoolSize, m: PopulationSize) -> Result<f64, AnalyticError> {
    let side = n.get();
    if side < 2 {
        return Err(AnalyticError::GridTooSmall(side));
    }
    if side * side > m.get() {
        return Err(AnalyticError::GridExceedsPopulation {
            side,
            need: side * side,
            population: m.get(),
        });
    }
    if p.value() * side as f64 > 1.0 {
        return Err(AnalyticError::PrevalenceTooHigh { p: p.value(), side });
    }
    Ok(grid2d_worstcase_tpp(p, n) * m.get() as f64)
}

/// `sqrt((n-2)/n^3)`: worst-case grid pooling beats individual testing
/// exactly when `p` is below this.
pub fn grid2d_validity_bound(n: PoolSize) -> Result<Probability, AnalyticError> {
    let side = n.get();
    if side < 2 {
        return Err(AnalyticError::GridTooSmall(side));
    }
    let n = side as f64;
    Ok(Probability::new(sqrt((n - 2.0) / (n * n * n))).expect("bound lies in [0, 1]"))
}

/// Scans grid sides with `n^2 <= m`, `n <= max` and `p` under the validity
/// bound. The profile also holds size 1 (individual testing, 1.0), which is
/// the result when no side qualifies.
pub fn grid2d_optimal_size(p: Probability, m: PopulationSize, max: PoolSize) -> Result<OptimizationResult, AnalyticError> {
    if m.get() < 4 {
        return Err(AnalyticError::PopulationTooSmall(m.get()));
    }
    let mut profile = alloc::vec![(PoolSize::ONE, 1.0)];
    for n in max.up_to().skip(1) {
        if n.get() * n.get() > m.get() {
            break;
        }
        let bound = grid2d_validity_bound(n)?;
        if p.value() < bound.value() {
            profile.push((n, grid2d_worstcase_tpp(p, n)));
        }
    }
    Ok(OptimizationResult::from_profile(profile))
}

/// Double-pooling tests per patient with pools of `s`:
/// `2/s + p + (1-p)(1-(1-p)^(s-1))^2`. A negative patient is retested when
/// each of its two pools holds some other positive.
pub fn double_pooling_tpp(p: Probability, s: PoolSize) -> f64 {
    let q = p.complement();
    let others_positive = 1.0 - powi(q, s.get() - 1);
    2.0 / s.get() as f64 + p.value() + q * others_positive * others_positive
}

/// Scans `s` in `1..=max`; size 1 stands for individual testing.
pub fn double_pooling_optimal_size(p: Probability, max: PoolSize) -> OptimizationResult {
    OptimizationResult::from_profile(
        max.up_to()
            .map(|s| (s, if s.get() == 1 { 1.0 } else { double_pooling_tpp(p, s) }))
            .collect(),
    )
}

/// Exact expected tests of `strategy` on `samples` i.i.d. Bernoulli(p)
/// samples, by running it on all `2^samples` infection patterns. Fails if
/// the strategy misclassifies any pattern.
pub fn brute_force_expected_tests(
    strategy: &Strategy,
    p: Probability,
    samples: usize,
    partition_seed: u64,
) -> Result<f64, AnalyticError> {
    if samples > MAX_ENUMERATED {
        return Err(AnalyticError::TooManySamples(samples));
    }
    let (pos, neg) = (p.value(), p.complement());
    let mut expected = 0.0;
    for mask in 0..1u64 << samples {
        let vector = crate::model::InfectionVector::from_mask(mask, samples);
        let outcome = strategy.run(&vector, partition_seed)?;
        if !outcome.is_exact_for(&vector) {
            return Err(AnalyticError::Misclassified { mask });
        }
        let k = mask.count_ones() as usize;
        let weight = powi(pos, k) * powi(neg, samples - k);
        expected += weight * outcome.tests as f64;
    }
    Ok(expected)
}
