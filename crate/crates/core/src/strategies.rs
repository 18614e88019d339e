//! Exact pooling strategies. Every strategy classifies every sample of an
//! [`InfectionVector`] correctly, using only pooled tests through a
//! [`TestOracle`].

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytic;
use crate::math::ceil_log2;
use crate::model::{InfectionVector, ModelError, PoolSize, Probability, StrategyOutcome, TestOracle};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error(transparent)]
    Oracle(#[from] ModelError),
    #[error("grid side must be at least 2, got {0}")]
    GridTooSmall(usize),
    #[error("{side}x{side} grid needs {need} samples but only {have} are available")]
    GridExceedsPopulation { side: usize, need: usize, have: usize },
    #[error("second partition does not cover every sample exactly once")]
    InvalidPartition,
}

/// Side length of a square pooling matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridShape(PoolSize);

impl GridShape {
    pub fn new(side: PoolSize) -> Result<Self, StrategyError> {
        if side.get() < 2 {
            Err(StrategyError::GridTooSmall(side.get()))
        } else {
            Ok(GridShape(side))
        }
    }

    pub fn side(self) -> usize {
        self.0.get()
    }

    pub fn pool_size(self) -> PoolSize {
        self.0
    }

    pub fn cells(self) -> usize {
        self.side() * self.side()
    }
}

/// Executable strategy descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Individual,
    SinglePooling { pool: PoolSize },
    BinaryTree { pool: PoolSize, optimize: bool },
    /// Square matrices; samples left over after the last full matrix go
    /// through single pooling with `leftover_pool`.
    Grid2d { shape: GridShape, optimize: bool, leftover_pool: PoolSize },
    DoublePooling { pool: PoolSize },
}

impl Strategy {
    /// Grid strategy whose leftover pools use the Dorfman-optimal size at `p`.
    pub fn grid2d_for(p: Probability, shape: GridShape, optimize: bool) -> Strategy {
        let leftover_pool = analytic::dorfman_optimal_size(p, PoolSize::MAX).best_size;
        Strategy::Grid2d { shape, optimize, leftover_pool }
    }

    /// Runs the strategy. `partition_seed` only matters for double pooling.
    pub fn run(&self, vector: &InfectionVector, partition_seed: u64) -> Result<StrategyOutcome, StrategyError> {
        match *self {
            Strategy::Individual => Ok(run_individual(vector)),
            Strategy::SinglePooling { pool } => run_single_pooling(vector, pool),
            Strategy::BinaryTree { pool, optimize } => run_binary_tree(vector, pool, optimize),
            Strategy::Grid2d { shape, optimize, leftover_pool } => {
                run_grid2d(vector, shape, optimize, leftover_pool)
            }
            Strategy::DoublePooling { pool } => run_double_pooling(vector, pool, partition_seed),
        }
    }

    /// Upper bound on the number of sequential rounds.
    pub fn max_rounds(&self) -> usize {
        match *self {
            Strategy::Individual => 1,
            Strategy::SinglePooling { pool } => {
                if pool.get() == 1 {
                    1
                } else {
                    2
                }
            }
            Strategy::BinaryTree { pool, optimize } => {
                let depth = ceil_log2(pool.get());
                if optimize {
                    1 + 2 * depth
                } else {
                    1 + depth
                }
            }
            Strategy::Grid2d { optimize, .. } => {
                if optimize {
                    3
                } else {
                    2
                }
            }
            Strategy::DoublePooling { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Individual => "individual",
            Strategy::SinglePooling { .. } => "dorfman",
            Strategy::BinaryTree { .. } => "tree",
            Strategy::Grid2d { .. } => "grid2d",
            Strategy::DoublePooling { .. } => "double",
        }
    }

    /// Pool size, grid side, or 1 for individual testing.
    pub fn size(&self) -> PoolSize {
        match *self {
            Strategy::Individual => PoolSize::ONE,
            Strategy::SinglePooling { pool }
            | Strategy::BinaryTree { pool, .. }
            | Strategy::DoublePooling { pool } => pool,
            Strategy::Grid2d { shape, .. } => shape.pool_size(),
        }
    }
}

/// Every sample tested on its own in a single round.
pub fn run_individual(vector: &InfectionVector) -> StrategyOutcome {
    let mut oracle = TestOracle::new(vector);
    let classes = (0..vector.len())
        .map(|i| oracle.test_one(i).expect("singleton test is always valid"))
        .collect();
    oracle.finish(classes)
}

fn chunks(range: Range<usize>, size: usize) -> impl Iterator<Item = Range<usize>> {
    let end = range.end;
    range.step_by(size).map(move |start| start..(start + size).min(end))
}

/// First round of single pooling over `range`. Positive singleton pools are
/// classified directly; positive multi-sample pools are returned.
fn screen_pools(
    oracle: &mut TestOracle<'_>,
    range: Range<usize>,
    pool: PoolSize,
    classes: &mut [bool],
) -> Result<Vec<Range<usize>>, StrategyError> {
    let mut positive = Vec::new();
    for block in chunks(range, pool.get()) {
        if oracle.test_range(block.clone())? {
            if block.len() == 1 {
                classes[block.start] = true;
            } else {
                positive.push(block);
            }
        }
    }
    Ok(positive)
}

fn retest_members(
    oracle: &mut TestOracle<'_>,
    pools: &[Range<usize>],
    classes: &mut [bool],
) -> Result<(), StrategyError> {
    for pool in pools {
        for i in pool.clone() {
            classes[i] = oracle.test_one(i)?;
        }
    }
    Ok(())
}

/// Dorfman pooling over consecutive pools of `pool` samples (the last pool
/// takes the remainder). Members of positive pools are retested one by one.
pub fn run_single_pooling(vector: &InfectionVector, pool: PoolSize) -> Result<StrategyOutcome, StrategyError> {
    let mut oracle = TestOracle::new(vector);
    let mut classes = vec![false; vector.len()];
    let positive = screen_pools(&mut oracle, 0..vector.len(), pool, &mut classes)?;
    oracle.next_round();
    retest_members(&mut oracle, &positive, &mut classes)?;
    Ok(oracle.finish(classes))
}

#[derive(Debug, Clone)]
enum TreeTask {
    /// Test this node; descend if positive.
    Test(Range<usize>),
    /// Node is known positive: test its left half, infer or test the right.
    LeftFirst(Range<usize>),
}

fn halves(node: &Range<usize>) -> (Range<usize>, Range<usize>) {
    let mid = node.start + node.len().div_ceil(2);
    (node.start..mid, mid..node.end)
}

/// Adaptive halving within consecutive blocks of `pool` samples.
///
/// Without `optimize` both halves of a positive node are tested in the same
/// round. With `optimize` the left half is tested first; when it is negative
/// the right half must be positive and is not tested.
pub fn run_binary_tree(
    vector: &InfectionVector,
    pool: PoolSize,
    optimize: bool,
) -> Result<StrategyOutcome, StrategyError> {
    let mut oracle = TestOracle::new(vector);
    let mut classes = vec![false; vector.len()];
    let mut frontier: Vec<TreeTask> = chunks(0..vector.len(), pool.get()).map(TreeTask::Test).collect();
    let mut next = Vec::new();

    // a positive node of more than one sample: schedule its children
    let expand = |node: Range<usize>, next: &mut Vec<TreeTask>, classes: &mut [bool]| {
        if node.len() == 1 {
            classes[node.start] = true;
        } else if optimize {
            next.push(TreeTask::LeftFirst(node));
        } else {
            let (left, right) = halves(&node);
            next.push(TreeTask::Test(left));
            next.push(TreeTask::Test(right));
        }
    };

    while !frontier.is_empty() {
        for task in frontier.drain(..) {
            match task {
                TreeTask::Test(node) => {
                    if oracle.test_range(node.clone())? {
                        expand(node, &mut next, &mut classes);
                    }
                }
                TreeTask::LeftFirst(parent) => {
                    let (left, right) = halves(&parent);
                    if oracle.test_range(left.clone())? {
                        expand(left, &mut next, &mut classes);
                        next.push(TreeTask::Test(right));
                    } else {
                        expand(right, &mut next, &mut classes);
                    }
                }
            }
        }
        oracle.next_round();
        core::mem::swap(&mut frontier, &mut next);
    }
    Ok(oracle.finish(classes))
}

/// One `n x n` matrix laid out row-major starting at `base`.
struct Matrix {
    base: usize,
    side: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Candidate states, indexed `[row_pos * cols.len() + col_pos]`.
    cand: Vec<Option<bool>>,
}

impl Matrix {
    fn cell(&self, row: usize, col: usize) -> usize {
        self.base + row * self.side + col
    }

    fn screen(&mut self, oracle: &mut TestOracle<'_>, scratch: &mut Vec<usize>) -> Result<(), StrategyError> {
        let n = self.side;
        for i in 0..n {
            let start = self.cell(i, 0);
            if oracle.test_range(start..start + n)? {
                self.rows.push(i);
            }
        }
        for j in 0..n {
            scratch.clear();
            scratch.extend((0..n).map(|i| self.cell(i, j)));
            if oracle.test(scratch)? {
                self.cols.push(j);
            }
        }
        let (r, c) = (self.rows.len(), self.cols.len());
        // a lone positive row (or column) pins every candidate
        let resolved = if r == 1 || c == 1 { Some(true) } else { None };
        self.cand = vec![resolved; r * c];
        Ok(())
    }

    fn retest_all(&mut self, oracle: &mut TestOracle<'_>) -> Result<(), StrategyError> {
        let c = self.cols.len();
        for (ri, &row) in self.rows.iter().enumerate() {
            for (ci, &col) in self.cols.iter().enumerate() {
                if self.cand[ri * c + ci].is_none() {
                    self.cand[ri * c + ci] = Some(oracle.test_one(self.base + row * self.side + col)?);
                }
            }
        }
        Ok(())
    }

    /// Tests all but the last candidate of each positive column; the last
    /// one is positive when every other candidate in the column is negative.
    fn column_pass(&mut self, oracle: &mut TestOracle<'_>) -> Result<(), StrategyError> {
        let (r, c) = (self.rows.len(), self.cols.len());
        if r == 0 || self.cand.iter().all(Option::is_some) {
            return Ok(());
        }
        for ci in 0..c {
            let mut any_positive = false;
            for ri in 0..r - 1 {
                let status = oracle.test_one(self.cell(self.rows[ri], self.cols[ci]))?;
                self.cand[ri * c + ci] = Some(status);
                any_positive |= status;
            }
            if !any_positive {
                self.cand[(r - 1) * c + ci] = Some(true);
            }
        }
        Ok(())
    }

    /// Same inference along rows, over candidates still unknown.
    fn row_pass(&mut self) {
        let c = self.cols.len();
        for ri in 0..self.rows.len() {
            let row = &self.cand[ri * c..(ri + 1) * c];
            let mut unknown = row.iter().enumerate().filter(|(_, s)| s.is_none());
            if let (Some((ci, _)), None) = (unknown.next(), unknown.next()) {
                if row.iter().all(|s| *s != Some(true)) {
                    self.cand[ri * c + ci] = Some(true);
                }
            }
        }
    }

    fn write_classes(&self, classes: &mut [bool]) {
        let c = self.cols.len();
        for (ri, &row) in self.rows.iter().enumerate() {
            for (ci, &col) in self.cols.iter().enumerate() {
                classes[self.cell(row, col)] = self.cand[ri * c + ci].expect("candidate resolved");
            }
        }
    }
}

/// Matrix pooling: row and column pools first, then candidates at the
/// intersections of positive rows and columns are retested.
///
/// Samples are consumed in consecutive blocks of `side²`, laid out row-major.
/// Leftover samples are pooled Dorfman-style with `leftover_pool`, sharing
/// the same rounds. With `optimize` the last candidate of each positive
/// column is held back one round and inferred when possible.
pub fn run_grid2d(
    vector: &InfectionVector,
    shape: GridShape,
    optimize: bool,
    leftover_pool: PoolSize,
) -> Result<StrategyOutcome, StrategyError> {
    let (side, cells, m) = (shape.side(), shape.cells(), vector.len());
    if cells > m {
        return Err(StrategyError::GridExceedsPopulation { side, need: cells, have: m });
    }
    let mut oracle = TestOracle::new(vector);
    let mut classes = vec![false; m];
    let full = m / cells;
    let mut matrices: Vec<Matrix> = (0..full)
        .map(|b| Matrix {
            base: b * cells,
            side,
            rows: Vec::new(),
            cols: Vec::new(),
            cand: Vec::new(),
        })
        .collect();

    let mut scratch = Vec::with_capacity(side);
    for matrix in &mut matrices {
        matrix.screen(&mut oracle, &mut scratch)?;
    }
    let leftover = screen_pools(&mut oracle, full * cells..m, leftover_pool, &mut classes)?;
    oracle.next_round();

    retest_members(&mut oracle, &leftover, &mut classes)?;
    for matrix in &mut matrices {
        if optimize {
            matrix.column_pass(&mut oracle)?;
        } else {
            matrix.retest_all(&mut oracle)?;
        }
    }
    if optimize {
        oracle.next_round();
        for matrix in &mut matrices {
            matrix.row_pass();
            matrix.retest_all(&mut oracle)?;
        }
    }
    for matrix in &matrices {
        matrix.write_classes(&mut classes);
    }
    Ok(oracle.finish(classes))
}

/// Two partitions of the same samples into pools.
///
/// The first partition is consecutive blocks of the pool size. The second
/// comes from [`DoublePoolingDesign::random`] or is supplied explicitly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoublePoolingDesign {
    len: usize,
    pool: usize,
    second: Vec<Vec<usize>>,
}

impl DoublePoolingDesign {
    /// Random second partition. First-partition blocks are visited in a
    /// shuffled order, members in shuffled positions, and samples are dealt
    /// position by position across blocks, then cut into pools. When there
    /// are at least `pool` full blocks, every second pool draws from distinct
    /// first-partition blocks, so a sample's two pools share only that sample.
    pub fn random(len: usize, pool: PoolSize, seed: u64) -> Self {
        let s = pool.get();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks: Vec<Vec<usize>> = chunks(0..len, s).map(|r| r.collect()).collect();
        for block in &mut blocks {
            block.shuffle(&mut rng);
        }
        blocks.shuffle(&mut rng);
        let mut dealt = Vec::with_capacity(len);
        for pos in 0..s {
            dealt.extend(blocks.iter().filter_map(|b| b.get(pos)));
        }
        DoublePoolingDesign {
            len,
            pool: s,
            second: dealt.chunks(s).map(|c| c.to_vec()).collect(),
        }
    }

    /// Explicit second partition; it must cover `0..len` exactly once and
    /// respect the pool cap.
    pub fn from_second_partition(
        len: usize,
        pool: PoolSize,
        second: Vec<Vec<usize>>,
    ) -> Result<Self, StrategyError> {
        let mut seen = vec![false; len];
        for group in &second {
            if group.is_empty() || group.len() > PoolSize::MAX.get() {
                return Err(StrategyError::InvalidPartition);
            }
            for &i in group {
                if i >= len || core::mem::replace(&mut seen[i], true) {
                    return Err(StrategyError::InvalidPartition);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(StrategyError::InvalidPartition);
        }
        Ok(DoublePoolingDesign { len, pool: pool.get(), second })
    }

    pub fn first_pools(&self) -> impl Iterator<Item = Range<usize>> {
        chunks(0..self.len, self.pool)
    }

    pub fn second_pools(&self) -> &[Vec<usize>] {
        &self.second
    }
}

/// Double pooling with a random second partition derived from `partition_seed`.
pub fn run_double_pooling(
    vector: &InfectionVector,
    pool: PoolSize,
    partition_seed: u64,
) -> Result<StrategyOutcome, StrategyError> {
    let design = DoublePoolingDesign::random(vector.len(), pool, partition_seed);
    run_double_pooling_design(vector, &design)
}

/// Both partitions are tested in one round; a sample is retested only when
/// both of its pools are positive. Singleton pools settle their sample.
pub fn run_double_pooling_design(
    vector: &InfectionVector,
    design: &DoublePoolingDesign,
) -> Result<StrategyOutcome, StrategyError> {
    let m = vector.len();
    if design.len != m {
        return Err(StrategyError::InvalidPartition);
    }
    let mut oracle = TestOracle::new(vector);
    // per sample: (first pool result, first pool size, second pool result, second pool size)
    let mut first = vec![(false, 0usize); m];
    let mut second = vec![(false, 0usize); m];
    for pool in design.first_pools() {
        let result = oracle.test_range(pool.clone())?;
        let size = pool.len();
        for i in pool {
            first[i] = (result, size);
        }
    }
    for pool in &design.second {
        let result = oracle.test(pool)?;
        for &i in pool {
            second[i] = (result, pool.len());
        }
    }
    oracle.next_round();
    let mut classes = vec![false; m];
    for i in 0..m {
        classes[i] = match (first[i], second[i]) {
            ((result, 1), _) | (_, (result, 1)) => result,
            ((true, _), (true, _)) => oracle.test_one(i)?,
            _ => false,
        };
    }
    Ok(oracle.finish(classes))
}
