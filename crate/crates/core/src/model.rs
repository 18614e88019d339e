//! Domain types, the perfect pooled-test oracle, and seeded sampling of
//! infection vectors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Hard upper bound on the number of samples a single pooled assay accepts.
pub const MAX_POOL: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("pool size {size} is outside [1, {max}]")]
    PoolSizeOutOfRange { size: usize, max: usize },
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("pooled test over an empty subset")]
    EmptyPool,
    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("pool of {size} samples exceeds the cap of {cap}")]
    PoolTooLarge { size: usize, cap: usize },
}

/// Prevalence or per-patient risk, always in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self, ModelError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(ModelError::ProbabilityOutOfRange(value))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 - p`.
    #[inline]
    pub fn complement(self) -> f64 {
        1.0 - self.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Number of samples combined in one pool (or rows/columns of a grid).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoolSize(u8);

impl PoolSize {
    pub const ONE: PoolSize = PoolSize(1);
    pub const MAX: PoolSize = PoolSize(MAX_POOL as u8);

    pub fn new(size: usize) -> Result<Self, ModelError> {
        Self::with_cap(size, Self::MAX)
    }

    /// Like [`PoolSize::new`] but against a cap lower than [`MAX_POOL`].
    pub fn with_cap(size: usize, cap: PoolSize) -> Result<Self, ModelError> {
        if size == 0 || size > cap.get() {
            Err(ModelError::PoolSizeOutOfRange { size, max: cap.get() })
        } else {
            Ok(PoolSize(size as u8))
        }
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// All sizes `1..=self`.
    pub fn up_to(self) -> impl Iterator<Item = PoolSize> {
        (1..=self.0).map(PoolSize)
    }
}

impl fmt::Display for PoolSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PopulationSize(usize);

impl PopulationSize {
    pub fn new(size: usize) -> Result<Self, ModelError> {
        if size == 0 {
            Err(ModelError::EmptyPopulation)
        } else {
            Ok(PopulationSize(size))
        }
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

/// Ground-truth status of an ordered set of samples. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InfectionVector {
    statuses: Vec<bool>,
}

impl InfectionVector {
    pub fn from_statuses(statuses: Vec<bool>) -> Self {
        InfectionVector { statuses }
    }

    /// Vector of `len` samples with the bits of `mask` as statuses
    /// (bit `i` is sample `i`).
    pub fn from_mask(mask: u64, len: usize) -> Self {
        debug_assert!(len <= 64);
        InfectionVector {
            statuses: (0..len).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    /// Independent Bernoulli(p) statuses drawn from `rng`.
    pub fn sample_with<R: Rng + ?Sized>(p: Probability, len: usize, rng: &mut R) -> Self {
        let p = p.value();
        InfectionVector {
            statuses: (0..len).map(|_| rng.random::<f64>() < p).collect(),
        }
    }

    /// Each sample positive independently with its own risk.
    pub fn sample_heterogeneous<R: Rng + ?Sized>(risks: &[f64], rng: &mut R) -> Self {
        InfectionVector {
            statuses: risks.iter().map(|&r| rng.random::<f64>() < r).collect(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.statuses.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.statuses.is_empty()
    }

    #[inline]
    pub fn is_positive(&self, index: usize) -> bool {
        self.statuses[index]
    }

    #[inline]
    pub fn statuses(&self) -> &[bool] {
        &self.statuses
    }

    pub fn positives(&self) -> usize {
        self.statuses.iter().filter(|&&s| s).count()
    }

    /// New vector made of the listed samples, in the listed order.
    pub fn select(&self, indices: &[usize]) -> InfectionVector {
        InfectionVector {
            statuses: indices.iter().map(|&i| self.statuses[i]).collect(),
        }
    }
}

/// Seeded sampler of `m` independent Bernoulli(p) statuses.
pub fn sample_infection_vector(p: Probability, m: PopulationSize, seed: u64) -> InfectionVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    InfectionVector::sample_with(p, m.get(), &mut rng)
}

/// Generator for trial `stream` under `master_seed`. Each stream is an
/// independent ChaCha sequence, so trial results do not depend on the order
/// in which trials are scheduled.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Probability that a pool of `n` independent samples tests negative, `(1-p)^n`.
pub fn pool_negative_probability(p: Probability, n: PoolSize) -> Probability {
    Probability(math::powi(p.complement(), n.get()))
}

/// Perfect pooled assay over an [`InfectionVector`], with accounting.
///
/// A strategy opens a new round with [`TestOracle::next_round`] whenever the
/// tests it is about to issue depend on results of earlier tests. Rounds in
/// which no test is issued are not counted.
#[derive(Debug)]
pub struct TestOracle<'a> {
    vector: &'a InfectionVector,
    cap: usize,
    tests: usize,
    rounds: usize,
    round_open: bool,
    pooled_samples: usize,
    participation: Vec<u32>,
}

impl<'a> TestOracle<'a> {
    pub fn new(vector: &'a InfectionVector) -> Self {
        Self::with_cap(vector, PoolSize::MAX)
    }

    pub fn with_cap(vector: &'a InfectionVector, cap: PoolSize) -> Self {
        TestOracle {
            vector,
            cap: cap.get(),
            tests: 0,
            rounds: 0,
            round_open: false,
            pooled_samples: 0,
            participation: vec![0; vector.len()],
        }
    }

    /// Close the current batch; later tests belong to a new round.
    pub fn next_round(&mut self) {
        self.round_open = false;
    }

    fn record(&mut self, size: usize) {
        if !self.round_open {
            self.rounds += 1;
            self.round_open = true;
        }
        self.tests += 1;
        self.pooled_samples += size;
    }

    fn check_size(&self, size: usize) -> Result<(), ModelError> {
        if size == 0 {
            return Err(ModelError::EmptyPool);
        }
        if size > self.cap {
            return Err(ModelError::PoolTooLarge { size, cap: self.cap });
        }
        Ok(())
    }

    /// Pooled test over an arbitrary index set.
    pub fn test(&mut self, subset: &[usize]) -> Result<bool, ModelError> {
        self.check_size(subset.len())?;
        let len = self.vector.len();
        if let Some(&index) = subset.iter().find(|&&i| i >= len) {
            return Err(ModelError::IndexOutOfRange { index, len });
        }
        self.record(subset.len());
        let mut positive = false;
        for &i in subset {
            self.participation[i] += 1;
            positive |= self.vector.statuses[i];
        }
        Ok(positive)
    }

    /// Pooled test over a contiguous block of samples.
    pub fn test_range(&mut self, range: Range<usize>) -> Result<bool, ModelError> {
        self.check_size(range.len())?;
        if range.end > self.vector.len() {
            return Err(ModelError::IndexOutOfRange {
                index: range.end - 1,
                len: self.vector.len(),
            });
        }
        self.record(range.len());
        for p in &mut self.participation[range.clone()] {
            *p += 1;
        }
        Ok(self.vector.statuses[range].iter().any(|&s| s))
    }

    #[inline]
    pub fn test_one(&mut self, index: usize) -> Result<bool, ModelError> {
        self.test_range(index..index + 1)
    }

    pub fn tests_issued(&self) -> usize {
        self.tests
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn participation(&self) -> &[u32] {
        &self.participation
    }

    /// Sum of the sizes of every pool tested so far.
    pub fn pooled_samples(&self) -> usize {
        self.pooled_samples
    }

    pub fn sample_count(&self) -> usize {
        self.vector.len()
    }

    pub fn finish(self, classifications: Vec<bool>) -> StrategyOutcome {
        let max_participation = self.participation.iter().copied().max().unwrap_or(0);
        let duplicated_samples = self.participation.iter().filter(|&&c| c >= 2).count();
        StrategyOutcome {
            tests: self.tests,
            rounds: self.rounds,
            max_participation,
            duplicated_samples,
            pooled_samples: self.pooled_samples,
            participation: self.participation,
            classifications,
        }
    }
}

/// Result of running a strategy against one infection vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyOutcome {
    pub tests: usize,
    /// Sequential test batches.
    pub rounds: usize,
    /// Largest number of tests any one sample took part in.
    pub max_participation: u32,
    /// Samples that took part in two or more tests, i.e. needed an aliquot.
    pub duplicated_samples: usize,
    /// Sum of pool sizes over all tests issued.
    pub pooled_samples: usize,
    /// Per-sample count of tests taken part in.
    pub participation: Vec<u32>,
    pub classifications: Vec<bool>,
}

impl StrategyOutcome {
    pub fn is_exact_for(&self, vector: &InfectionVector) -> bool {
        self.classifications == vector.statuses
    }
}
