//! User-selection algorithms: exhaustive search, greedy zero-forcing
//! selection (ZFS), and the multi-candidate enhanced greedy, for a single
//! transmitter (cell-free) and for a set of coupled cells (multicell).
//!
//! Every scheduler threads a [`FlopCounter`] so runs can be compared by
//! computational cost under one fixed accounting convention.

use itertools::Itertools;
use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::rates;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("cannot schedule {target} users out of {users}")]
    InvalidTarget { target: usize, users: usize },
    #[error("schedule target {target} exceeds the {antennas} available antennas")]
    TargetExceedsAntennas { target: usize, antennas: usize },
    #[error("exhaustive search over {subsets} subsets exceeds the cap of {cap}")]
    CapacityExceeded { subsets: u128, cap: u64 },
    #[error("channel is degenerate; no user subset is schedulable")]
    DegenerateChannel,
    #[error("inconsistent per-cell inputs: {0}")]
    MismatchedCells(String),
}

/// Scoring rule used to pick among enhanced-greedy candidate sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionCriterion {
    SumRate,
    Correlation,
}

/// Scores a candidate user set (row indices, ascending). Implementations
/// should charge their own cost to the counter and return negative infinity
/// for sets they cannot evaluate.
pub type RateEvaluator<'a> = &'a mut dyn FnMut(&[usize], &mut FlopCounter) -> f64;

/// Scores one per-cell selection jointly across all cells.
pub type JointRateEvaluator<'a> = &'a mut dyn FnMut(&[Vec<usize>], &mut FlopCounter) -> f64;

/// Criterion plus the evaluator it needs. Channel correlation is computed
/// internally from the channel rows, so it carries no evaluator.
pub enum Criterion<'a> {
    SumRate(RateEvaluator<'a>),
    Correlation,
}

pub enum JointCriterion<'a> {
    SumRate(JointRateEvaluator<'a>),
    Correlation,
}

impl Criterion<'_> {
    fn tag(&self) -> SelectionCriterion {
        match self {
            Criterion::SumRate(_) => SelectionCriterion::SumRate,
            Criterion::Correlation => SelectionCriterion::Correlation,
        }
    }
}

impl JointCriterion<'_> {
    fn tag(&self) -> SelectionCriterion {
        match self {
            JointCriterion::SumRate(_) => SelectionCriterion::SumRate,
            JointCriterion::Correlation => SelectionCriterion::Correlation,
        }
    }
}

/// One candidate user set together with its criterion score.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub users: Vec<usize>,
    pub criterion_value: f64,
}

/// Result of one scheduling call.
#[derive(Debug, Clone)]
pub struct ScheduleResult {
    /// Chosen user indices (rows of the channel handed to the scheduler).
    /// ZFS keeps selection order; the other schedulers return ascending sets.
    pub selected: Vec<usize>,
    /// Candidate trace (enhanced greedy only).
    pub candidates: Vec<CandidateSet>,
    /// (excluded, new) user swaps in stage order (enhanced greedy only).
    pub swaps: Vec<(usize, usize)>,
    /// Flops charged by this call under the accounting convention.
    pub flops: u64,
    pub criterion: SelectionCriterion,
    /// Score of the selected set under `criterion`.
    pub criterion_value: f64,
}

/// Joint multicell scheduling result; user indices are rows of each cell's
/// serving channel.
#[derive(Debug, Clone)]
pub struct JointScheduleResult {
    pub per_cell: Vec<Vec<usize>>,
    pub candidates: Vec<JointCandidate>,
    /// `swaps[stage][cell]` = (excluded, new) for that cell at that stage.
    pub swaps: Vec<Vec<(usize, usize)>>,
    pub flops: u64,
    pub criterion: SelectionCriterion,
    pub criterion_value: f64,
}

#[derive(Debug, Clone)]
pub struct JointCandidate {
    pub per_cell: Vec<Vec<usize>>,
    pub criterion_value: f64,
}

// ---------------------------------------------------------------------------
// Flop accounting
// ---------------------------------------------------------------------------

/// Multiply-accumulate-level operation counter.
///
/// Convention: a complex (m x n)(n x p) product costs 2mnp, an n x n
/// Hermitian inverse or log-determinant costs n^3, a row norm over n entries
/// costs 2n, and one water-filling solve over n gains is charged a flat
/// 400n (200-iteration bisection budget). Charges depend only on operand
/// dimensions, never on data, so counts are deterministic per configuration.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounter {
    total: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        FlopCounter::default()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add(&mut self, flops: u64) {
        self.total += flops;
    }

    /// (m x n)(n x p) matrix product.
    pub fn matmul(&mut self, m: usize, n: usize, p: usize) {
        self.add(2 * (m * n * p) as u64);
    }

    /// Gram matrix H H^H of a rows x cols channel.
    pub fn gram(&mut self, rows: usize, cols: usize) {
        self.matmul(rows, cols, rows);
    }

    /// n x n inversion.
    pub fn inverse(&mut self, n: usize) {
        self.add((n * n * n) as u64);
    }

    /// n x n log-determinant.
    pub fn log_det(&mut self, n: usize) {
        self.add((n * n * n) as u64);
    }

    /// Squared norms of `rows` rows of length `cols`.
    pub fn row_norms(&mut self, rows: usize, cols: usize) {
        self.add(2 * (rows * cols) as u64);
    }

    /// One water-filling solve over n gains.
    pub fn waterfill(&mut self, n: usize) {
        self.add(400 * n as u64);
    }
}

/// Cost of one ZF-throughput evaluation of an n-user subset.
pub fn charge_zf_throughput(fc: &mut FlopCounter, users: usize, antennas: usize) {
    fc.gram(users, antennas);
    fc.inverse(users);
    fc.add(users as u64); // diagonal gain extraction
    fc.waterfill(users);
    fc.add(3 * users as u64); // log terms and clamped sum
}

/// Cost of one sum-channel-correlation evaluation of an n-user subset.
pub fn charge_correlation(fc: &mut FlopCounter, users: usize, antennas: usize) {
    fc.row_norms(users, antennas);
    let pairs = (users * users.saturating_sub(1) / 2) as u64;
    fc.add(pairs * (2 * antennas as u64 + 3));
}

/// Cost of building a linear precoder (ZF or regularized) for an
/// n-user subset plus its power normalization.
pub fn charge_precoder_build(fc: &mut FlopCounter, users: usize, antennas: usize) {
    fc.gram(users, antennas);
    fc.inverse(users);
    fc.matmul(antennas, users, users); // H^H times inverse
    fc.add(2 * (antennas * users) as u64 + 2); // Frobenius norm and scaling
}

/// Cost of one cell-free sum-rate evaluation (precoder included).
pub fn charge_cellfree_rate(fc: &mut FlopCounter, users: usize, antennas: usize) {
    charge_precoder_build(fc, users, antennas);
    fc.matmul(users, antennas, users); // effective channel G^T P
    fc.matmul(users, users, users); // its Gram
    fc.log_det(users);
}

/// Cost of one multicell sum-rate evaluation over all cells
/// (per-cell precoders included).
pub fn charge_multicell_rate(fc: &mut FlopCounter, scheduled: &[usize], antennas: usize) {
    for &n in scheduled {
        charge_precoder_build(fc, n, antennas);
    }
    for (s, &n_s) in scheduled.iter().enumerate() {
        if n_s == 0 {
            continue;
        }
        fc.matmul(n_s, antennas, n_s); // serving product
        fc.matmul(n_s, n_s, n_s);
        for (l, &n_l) in scheduled.iter().enumerate() {
            if l == s || n_l == 0 {
                continue;
            }
            fc.matmul(n_s, antennas, n_l); // cross product
            fc.matmul(n_s, n_l, n_s);
        }
        fc.log_det(n_s);
        fc.log_det(n_s);
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

/// Binomial coefficient without overflow for the sizes this crate meets.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 1..=k {
        result = result * (n - k + i) as u128 / i as u128;
    }
    result
}

fn select_rows(h: &DMatrix<Complex64>, rows: &[usize]) -> DMatrix<Complex64> {
    h.select_rows(rows.iter())
}

fn row_powers(h: &DMatrix<Complex64>, fc: &mut FlopCounter) -> Vec<f64> {
    fc.row_norms(h.nrows(), h.ncols());
    (0..h.nrows()).map(|i| h.row(i).norm_squared()).collect()
}

fn argmax_by_power(indices: &[usize], powers: &[f64]) -> usize {
    let mut best = indices[0];
    for &i in &indices[1..] {
        if powers[i] > powers[best] {
            best = i;
        }
    }
    best
}

fn argmin_by_power(indices: &[usize], powers: &[f64]) -> usize {
    let mut best = indices[0];
    for &i in &indices[1..] {
        if powers[i] < powers[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// ZFS
// ---------------------------------------------------------------------------

/// Greedy zero-forcing user selection.
///
/// Seeds with the strongest-channel user, then repeatedly adds the user
/// whose inclusion maximizes the water-filled ZF throughput, stopping early
/// (and keeping the previous set) once the best augmented throughput no
/// longer improves. Ties break toward the lowest user index. Subsets whose
/// Gram matrix is singular are skipped.
pub fn zfs_schedule(
    h: &DMatrix<Complex64>,
    target: usize,
    total_power: f64,
    fc: &mut FlopCounter,
) -> Result<ScheduleResult, ScheduleError> {
    let (users, antennas) = h.shape();
    if target == 0 || target > users {
        return Err(ScheduleError::InvalidTarget { target, users });
    }
    if target > antennas {
        return Err(ScheduleError::TargetExceedsAntennas { target, antennas });
    }
    let start_flops = fc.total();
    let powers = row_powers(h, fc);

    let seed = argmax_by_power(&(0..users).collect::<Vec<_>>(), &powers);
    let mut selected = vec![seed];
    charge_zf_throughput(fc, 1, antennas);
    let mut best_rate = rates::zf_throughput(&select_rows(h, &selected), total_power)
        .map_err(|_| ScheduleError::DegenerateChannel)?;

    while selected.len() < target {
        let mut best_candidate: Option<(usize, f64)> = None;
        for k in 0..users {
            if selected.contains(&k) {
                continue;
            }
            let mut augmented = selected.clone();
            augmented.push(k);
            charge_zf_throughput(fc, augmented.len(), antennas);
            let rate = match rates::zf_throughput(&select_rows(h, &augmented), total_power) {
                Ok(r) => r,
                Err(_) => continue, // singular subset: never a candidate
            };
            if best_candidate.map_or(true, |(_, r)| rate > r) {
                best_candidate = Some((k, rate));
            }
        }
        match best_candidate {
            Some((k, rate)) if rate > best_rate => {
                selected.push(k);
                best_rate = rate;
            }
            _ => break, // no improvement: roll back to the previous set
        }
    }

    Ok(ScheduleResult {
        selected,
        candidates: Vec::new(),
        swaps: Vec::new(),
        flops: fc.total() - start_flops,
        criterion: SelectionCriterion::SumRate,
        criterion_value: best_rate,
    })
}

// ---------------------------------------------------------------------------
// Enhanced greedy
// ---------------------------------------------------------------------------

fn correlation_score(
    h: &DMatrix<Complex64>,
    set: &[usize],
    fc: &mut FlopCounter,
) -> f64 {
    charge_correlation(fc, set.len(), h.ncols());
    rates::sum_channel_correlation(&select_rows(h, set)).unwrap_or(f64::INFINITY)
}

/// Multi-candidate extension of ZFS.
///
/// Starting from the ZFS set, each stage swaps the weakest in-set user for
/// the strongest unselected user, producing floor((K - target) / 2) extra
/// candidate sets; the swapped-in user leaves the remaining pool and
/// excluded users do not re-enter it. The final set maximizes the sum rate
/// or minimizes the sum channel correlation over all candidates, earliest
/// stage winning ties; candidates that cannot be evaluated are discarded.
pub fn enhanced_greedy_schedule(
    h: &DMatrix<Complex64>,
    target: usize,
    total_power: f64,
    mut criterion: Criterion<'_>,
    fc: &mut FlopCounter,
) -> Result<ScheduleResult, ScheduleError> {
    let users = h.nrows();
    let tag = criterion.tag();
    let start_flops = fc.total();
    let seed = zfs_schedule(h, target, total_power, fc)?;

    let mut current: Vec<usize> = seed.selected.clone();
    current.sort_unstable();
    let mut remaining: Vec<usize> = (0..users).filter(|u| !current.contains(u)).collect();
    let extra_stages = (users - target) / 2;

    let powers = row_powers(h, fc);
    let mut score = |set: &[usize], fc: &mut FlopCounter| -> f64 {
        match &mut criterion {
            Criterion::SumRate(eval) => eval(set, fc),
            Criterion::Correlation => correlation_score(h, set, fc),
        }
    };

    let mut candidates = vec![CandidateSet {
        users: current.clone(),
        criterion_value: score(&current, fc),
    }];
    let mut swaps = Vec::with_capacity(extra_stages);

    for _ in 0..extra_stages {
        if current.is_empty() || remaining.is_empty() {
            break;
        }
        let k_ex = argmin_by_power(&current, &powers);
        let k_new = argmax_by_power(&remaining, &powers);
        current.retain(|&u| u != k_ex);
        current.push(k_new);
        current.sort_unstable();
        remaining.retain(|&u| u != k_new);
        swaps.push((k_ex, k_new));
        candidates.push(CandidateSet {
            users: current.clone(),
            criterion_value: score(&current, fc),
        });
    }

    let better = |a: f64, b: f64| match tag {
        SelectionCriterion::SumRate => a > b,
        SelectionCriterion::Correlation => a < b,
    };
    let mut winner = 0;
    let mut have_finite = candidates[0].criterion_value.is_finite();
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if !c.criterion_value.is_finite() {
            continue;
        }
        if !have_finite || better(c.criterion_value, candidates[winner].criterion_value) {
            winner = i;
            have_finite = true;
        }
    }

    Ok(ScheduleResult {
        selected: candidates[winner].users.clone(),
        criterion_value: candidates[winner].criterion_value,
        candidates,
        swaps,
        flops: fc.total() - start_flops,
        criterion: tag,
    })
}

// ---------------------------------------------------------------------------
// Exhaustive search
// ---------------------------------------------------------------------------

/// Evaluates every size-`target` subset of `0..users` and returns the
/// maximizer, ties broken by the lexicographically smallest index set.
pub fn exhaustive_schedule(
    users: usize,
    target: usize,
    evaluate: RateEvaluator<'_>,
    cap: u64,
    fc: &mut FlopCounter,
) -> Result<ScheduleResult, ScheduleError> {
    if target == 0 || target > users {
        return Err(ScheduleError::InvalidTarget { target, users });
    }
    let subsets = binomial(users, target);
    if subsets > cap as u128 {
        return Err(ScheduleError::CapacityExceeded { subsets, cap });
    }
    let start_flops = fc.total();

    let mut best: Option<(Vec<usize>, f64)> = None;
    for combo in (0..users).combinations(target) {
        let value = evaluate(&combo, fc);
        match &best {
            Some((_, v)) if !(value > *v) => {}
            _ => best = Some((combo, value)),
        }
    }
    let (selected, value) = best.expect("at least one subset exists");

    Ok(ScheduleResult {
        selected,
        candidates: Vec::new(),
        swaps: Vec::new(),
        flops: fc.total() - start_flops,
        criterion: SelectionCriterion::SumRate,
        criterion_value: value,
    })
}

// ---------------------------------------------------------------------------
// Multicell variants
// ---------------------------------------------------------------------------

fn check_uniform_cells(cells: &[DMatrix<Complex64>]) -> Result<usize, ScheduleError> {
    if cells.is_empty() {
        return Err(ScheduleError::MismatchedCells("no cells supplied".into()));
    }
    let k_c = cells[0].nrows();
    if cells.iter().any(|c| c.nrows() != k_c) {
        return Err(ScheduleError::MismatchedCells(
            "cells must serve equally many users".into(),
        ));
    }
    Ok(k_c)
}

/// Runs ZFS independently in each cell with a per-cell power budget.
pub fn zfs_multicell(
    cells: &[DMatrix<Complex64>],
    target: usize,
    per_cell_power: f64,
    fc: &mut FlopCounter,
) -> Result<Vec<ScheduleResult>, ScheduleError> {
    check_uniform_cells(cells)?;
    cells
        .iter()
        .map(|h| zfs_schedule(h, target, per_cell_power, fc))
        .collect()
}

/// Enhanced greedy across cells: every cell runs its own swap sequence and
/// the synchronized per-stage configurations are scored jointly (network
/// sum rate, or summed channel correlation over cells).
pub fn enhanced_greedy_multicell(
    cells: &[DMatrix<Complex64>],
    target: usize,
    per_cell_power: f64,
    mut criterion: JointCriterion<'_>,
    fc: &mut FlopCounter,
) -> Result<JointScheduleResult, ScheduleError> {
    let k_c = check_uniform_cells(cells)?;
    let tag = criterion.tag();
    let start_flops = fc.total();

    let seeds = zfs_multicell(cells, target, per_cell_power, fc)?;
    let mut current: Vec<Vec<usize>> = seeds
        .iter()
        .map(|r| {
            let mut s = r.selected.clone();
            s.sort_unstable();
            s
        })
        .collect();
    let mut remaining: Vec<Vec<usize>> = current
        .iter()
        .map(|sel| (0..k_c).filter(|u| !sel.contains(u)).collect())
        .collect();
    let powers: Vec<Vec<f64>> = cells.iter().map(|h| row_powers(h, fc)).collect();
    let extra_stages = (k_c - target) / 2;

    let mut score = |sets: &[Vec<usize>], fc: &mut FlopCounter| -> f64 {
        match &mut criterion {
            JointCriterion::SumRate(eval) => eval(sets, fc),
            JointCriterion::Correlation => sets
                .iter()
                .zip(cells.iter())
                .map(|(set, h)| correlation_score(h, set, fc))
                .sum(),
        }
    };

    let mut candidates = vec![JointCandidate {
        per_cell: current.clone(),
        criterion_value: score(&current, fc),
    }];
    let mut swaps: Vec<Vec<(usize, usize)>> = Vec::with_capacity(extra_stages);

    for _ in 0..extra_stages {
        let mut stage_swaps = Vec::with_capacity(cells.len());
        for s in 0..cells.len() {
            if current[s].is_empty() || remaining[s].is_empty() {
                continue;
            }
            let k_ex = argmin_by_power(&current[s], &powers[s]);
            let k_new = argmax_by_power(&remaining[s], &powers[s]);
            current[s].retain(|&u| u != k_ex);
            current[s].push(k_new);
            current[s].sort_unstable();
            remaining[s].retain(|&u| u != k_new);
            stage_swaps.push((k_ex, k_new));
        }
        swaps.push(stage_swaps);
        candidates.push(JointCandidate {
            per_cell: current.clone(),
            criterion_value: score(&current, fc),
        });
    }

    let better = |a: f64, b: f64| match tag {
        SelectionCriterion::SumRate => a > b,
        SelectionCriterion::Correlation => a < b,
    };
    let mut winner = 0;
    let mut have_finite = candidates[0].criterion_value.is_finite();
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if !c.criterion_value.is_finite() {
            continue;
        }
        if !have_finite || better(c.criterion_value, candidates[winner].criterion_value) {
            winner = i;
            have_finite = true;
        }
    }

    Ok(JointScheduleResult {
        per_cell: candidates[winner].per_cell.clone(),
        criterion_value: candidates[winner].criterion_value,
        candidates,
        swaps,
        flops: fc.total() - start_flops,
        criterion: tag,
    })
}

/// Joint exhaustive search over the product of per-cell subsets, ties broken
/// by the lexicographically smallest configuration (cell 0 most significant).
pub fn exhaustive_multicell(
    cells: &[DMatrix<Complex64>],
    target: usize,
    evaluate: JointRateEvaluator<'_>,
    cap: u64,
    fc: &mut FlopCounter,
) -> Result<JointScheduleResult, ScheduleError> {
    let k_c = check_uniform_cells(cells)?;
    if target == 0 || target > k_c {
        return Err(ScheduleError::InvalidTarget { target, users: k_c });
    }
    let per_cell = binomial(k_c, target);
    let total = per_cell.checked_pow(cells.len() as u32).unwrap_or(u128::MAX);
    if total > cap as u128 {
        return Err(ScheduleError::CapacityExceeded { subsets: total, cap });
    }
    let start_flops = fc.total();

    let combos: Vec<Vec<usize>> = (0..k_c).combinations(target).collect();
    let mut indices = vec![0usize; cells.len()];
    let mut best: Option<(Vec<Vec<usize>>, f64)> = None;
    loop {
        let config: Vec<Vec<usize>> = indices.iter().map(|&i| combos[i].clone()).collect();
        let value = evaluate(&config, fc);
        match &best {
            Some((_, v)) if !(value > *v) => {}
            _ => best = Some((config, value)),
        }
        // advance odometer, last cell fastest
        let mut pos = cells.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < combos.len() {
                break;
            }
            indices[pos] = 0;
            if pos == 0 {
                pos = usize::MAX;
                break;
            }
        }
        if pos == usize::MAX {
            break;
        }
    }
    let (selection, value) = best.expect("at least one configuration exists");

    Ok(JointScheduleResult {
        per_cell: selection,
        candidates: Vec::new(),
        swaps: Vec::new(),
        flops: fc.total() - start_flops,
        criterion: SelectionCriterion::SumRate,
        criterion_value: value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| crate::scenario::sample_cn01(&mut rng))
    }

    /// ZF-rate evaluator used as the stand-in for a network rate in tests.
    fn zf_eval(h: &DMatrix<Complex64>, power: f64) -> impl FnMut(&[usize], &mut FlopCounter) -> f64 + '_ {
        move |set: &[usize], fc: &mut FlopCounter| {
            charge_zf_throughput(fc, set.len(), h.ncols());
            rates::zf_throughput(&h.select_rows(set.iter()), power).unwrap_or(f64::NEG_INFINITY)
        }
    }

    #[test]
    fn flop_convention_matmul() {
        let mut fc = FlopCounter::new();
        fc.matmul(3, 4, 5);
        assert_eq!(fc.total(), 120);
    }

    #[test]
    fn flop_counter_zero_without_work() {
        assert_eq!(FlopCounter::new().total(), 0);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(16, 8), 12870);
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 7), 0);
    }

    #[test]
    fn zfs_seeds_with_strongest_user() {
        // Row norms 1, 3, 2 -> user 1 wins the seed step.
        let mut h = DMatrix::<Complex64>::zeros(3, 4);
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 1)] = Complex64::new(3.0, 0.0);
        h[(2, 2)] = Complex64::new(2.0, 0.0);
        let mut fc = FlopCounter::new();
        let r = zfs_schedule(&h, 1, 4.0, &mut fc).unwrap();
        assert_eq!(r.selected, vec![1]);
        assert!(fc.total() > 0);
    }

    #[test]
    fn zfs_keeps_orthogonal_pair() {
        let mut h = DMatrix::<Complex64>::zeros(2, 4);
        h[(0, 0)] = Complex64::new(1.5, 0.0);
        h[(1, 1)] = Complex64::new(1.0, 0.0);
        let mut fc = FlopCounter::new();
        let r = zfs_schedule(&h, 2, 4.0, &mut fc).unwrap();
        let mut sel = r.selected.clone();
        sel.sort_unstable();
        assert_eq!(sel, vec![0, 1]);
        // oracle: the pair beats the singleton
        let single = rates::zf_throughput(&h.select_rows([0usize].iter()), 4.0).unwrap();
        let pair = rates::zf_throughput(&h, 4.0).unwrap();
        assert!(pair > single);
        assert!((r.criterion_value - pair).abs() < 1e-12);
    }

    #[test]
    fn zfs_never_pairs_duplicate_rows() {
        let mut h = DMatrix::<Complex64>::zeros(3, 4);
        h[(0, 0)] = Complex64::new(2.0, 0.0);
        h[(1, 0)] = Complex64::new(2.0, 0.0); // duplicate of user 0
        h[(2, 1)] = Complex64::new(1.0, 0.0);
        let mut fc = FlopCounter::new();
        let r = zfs_schedule(&h, 2, 4.0, &mut fc).unwrap();
        let mut sel = r.selected.clone();
        sel.sort_unstable();
        assert_eq!(sel, vec![0, 2], "duplicate rows must never be co-scheduled");
    }

    #[test]
    fn zfs_early_stop_keeps_smaller_set() {
        // Nearly parallel rows: water-filled rate of the pair is worse than
        // the best singleton, so the greedy must roll back.
        let mut h = DMatrix::<Complex64>::zeros(2, 4);
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 1)] = Complex64::new(1e-6, 0.0);
        let mut fc = FlopCounter::new();
        let r = zfs_schedule(&h, 2, 1.0, &mut fc).unwrap();
        assert_eq!(r.selected.len(), 1);
    }

    #[test]
    fn zfs_input_validation() {
        let h = random_matrix(4, 2, 1);
        let mut fc = FlopCounter::new();
        assert!(matches!(
            zfs_schedule(&h, 3, 1.0, &mut fc),
            Err(ScheduleError::TargetExceedsAntennas { .. })
        ));
        assert!(matches!(
            zfs_schedule(&h, 0, 1.0, &mut fc),
            Err(ScheduleError::InvalidTarget { .. })
        ));
        assert!(matches!(
            zfs_schedule(&h, 5, 1.0, &mut fc),
            Err(ScheduleError::InvalidTarget { .. })
        ));
    }

    #[test]
    fn enhanced_all_users_single_candidate() {
        // Orthogonal rows with a generous budget: ZFS keeps every user, and
        // with no remaining users the seed is the only candidate.
        let mut h = DMatrix::<Complex64>::zeros(4, 8);
        for i in 0..4 {
            h[(i, i)] = Complex64::new(1.0 + i as f64 * 0.25, 0.0);
        }
        let mut fc = FlopCounter::new();
        let mut eval = zf_eval(&h, 8.0);
        let r = enhanced_greedy_schedule(&h, 4, 8.0, Criterion::SumRate(&mut eval), &mut fc)
            .unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.selected, vec![0, 1, 2, 3]);
        assert!(r.swaps.is_empty());
    }

    #[test]
    fn enhanced_single_candidate_on_early_stopped_seed() {
        let h = random_matrix(4, 8, 2);
        let mut fc = FlopCounter::new();
        let seed = zfs_schedule(&h, 4, 8.0, &mut fc).unwrap();
        let mut expected = seed.selected.clone();
        expected.sort_unstable();

        let mut eval = zf_eval(&h, 8.0);
        let r = enhanced_greedy_schedule(&h, 4, 8.0, Criterion::SumRate(&mut eval), &mut fc)
            .unwrap();
        assert_eq!(r.candidates.len(), 1, "no remaining users means only the seed");
        assert_eq!(r.selected, expected);
    }

    #[test]
    fn enhanced_candidate_count_default_shape() {
        // K = 16, target 8: (16 - 8) / 2 = 4 extra candidates plus the seed.
        let h = random_matrix(16, 64, 3);
        let mut fc = FlopCounter::new();
        let mut eval = zf_eval(&h, 64.0);
        let r = enhanced_greedy_schedule(&h, 8, 64.0, Criterion::SumRate(&mut eval), &mut fc)
            .unwrap();
        assert_eq!(r.candidates.len(), 5);
        assert_eq!(r.swaps.len(), 4);
    }

    #[test]
    fn enhanced_never_below_zfs_with_same_evaluator() {
        for seed in 0..25 {
            let h = random_matrix(10, 16, seed);
            let mut fc = FlopCounter::new();
            let zfs = zfs_schedule(&h, 5, 16.0, &mut fc).unwrap();
            let mut zfs_set = zfs.selected.clone();
            zfs_set.sort_unstable();
            let mut eval = zf_eval(&h, 16.0);
            let zfs_rate = eval(&zfs_set, &mut fc);
            let r = enhanced_greedy_schedule(&h, 5, 16.0, Criterion::SumRate(&mut eval), &mut fc)
                .unwrap();
            assert!(
                r.criterion_value >= zfs_rate,
                "seed {seed}: enhanced {} below ZFS {zfs_rate}",
                r.criterion_value
            );
        }
    }

    #[test]
    fn enhanced_candidate_invariants() {
        let h = random_matrix(12, 16, 9);
        let mut fc = FlopCounter::new();
        let r = enhanced_greedy_schedule(&h, 4, 16.0, Criterion::Correlation, &mut fc).unwrap();

        let seed: Vec<usize> = r.candidates[0].users.clone();
        let original_remaining: Vec<usize> = (0..12).filter(|u| !seed.contains(u)).collect();

        // equal cardinality and pairwise distinct
        for c in &r.candidates {
            assert_eq!(c.users.len(), seed.len());
        }
        for i in 0..r.candidates.len() {
            for j in (i + 1)..r.candidates.len() {
                assert_ne!(r.candidates[i].users, r.candidates[j].users);
            }
        }
        // swapped-in users are distinct, drawn from the original remaining set
        let new_users: Vec<usize> = r.swaps.iter().map(|&(_, n)| n).collect();
        for (i, &n) in new_users.iter().enumerate() {
            assert!(original_remaining.contains(&n));
            assert!(!new_users[..i].contains(&n));
        }
        // an excluded user never reappears in any later candidate
        for (stage, &(k_ex, _)) in r.swaps.iter().enumerate() {
            for c in &r.candidates[stage + 1..] {
                assert!(!c.users.contains(&k_ex), "excluded user {k_ex} returned");
            }
        }
    }

    #[test]
    fn enhanced_correlation_prefers_least_correlated() {
        let h = random_matrix(8, 12, 11);
        let mut fc = FlopCounter::new();
        let r = enhanced_greedy_schedule(&h, 3, 12.0, Criterion::Correlation, &mut fc).unwrap();
        let winner = rates::sum_channel_correlation(&h.select_rows(r.selected.iter())).unwrap();
        for c in &r.candidates {
            assert!(winner <= c.criterion_value + 1e-12);
        }
        assert_eq!(r.criterion, SelectionCriterion::Correlation);
    }

    #[test]
    fn exhaustive_full_set_when_target_is_all() {
        let mut fc = FlopCounter::new();
        let mut eval = |set: &[usize], _: &mut FlopCounter| set.len() as f64;
        let r = exhaustive_schedule(3, 3, &mut eval, 10, &mut fc).unwrap();
        assert_eq!(r.selected, vec![0, 1, 2]);
    }

    #[test]
    fn exhaustive_matches_independent_enumerator() {
        // Independent recursive enumerator over size-k subsets.
        fn brute(
            users: usize,
            k: usize,
            eval: &mut dyn FnMut(&[usize]) -> f64,
        ) -> (Vec<usize>, f64) {
            fn recurse(
                start: usize,
                users: usize,
                k: usize,
                current: &mut Vec<usize>,
                best: &mut Option<(Vec<usize>, f64)>,
                eval: &mut dyn FnMut(&[usize]) -> f64,
            ) {
                if current.len() == k {
                    let v = eval(current);
                    if best.as_ref().map_or(true, |(_, bv)| v > *bv) {
                        *best = Some((current.clone(), v));
                    }
                    return;
                }
                for u in start..users {
                    current.push(u);
                    recurse(u + 1, users, k, current, best, eval);
                    current.pop();
                }
            }
            let mut best = None;
            recurse(0, users, k, &mut Vec::new(), &mut best, eval);
            best.unwrap()
        }

        let h = random_matrix(4, 6, 12);
        let mut calls = 0usize;
        {
            let mut count_eval = |_: &[usize], _: &mut FlopCounter| {
                calls += 1;
                0.0
            };
            let mut fc = FlopCounter::new();
            exhaustive_schedule(4, 2, &mut count_eval, 100, &mut fc).unwrap();
        }
        assert_eq!(calls, 6, "C(4,2) subsets must be enumerated");

        let mut fc = FlopCounter::new();
        let mut eval = zf_eval(&h, 6.0);
        let r = exhaustive_schedule(4, 2, &mut eval, 100, &mut fc).unwrap();
        let (oracle_set, oracle_val) = brute(4, 2, &mut |set| {
            rates::zf_throughput(&h.select_rows(set.iter()), 6.0).unwrap_or(f64::NEG_INFINITY)
        });
        assert_eq!(r.selected, oracle_set);
        assert!((r.criterion_value - oracle_val).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_capacity_error() {
        let mut eval = |_: &[usize], _: &mut FlopCounter| 0.0;
        let mut fc = FlopCounter::new();
        let err = exhaustive_schedule(30, 15, &mut eval, 1_000_000, &mut fc).unwrap_err();
        assert!(matches!(err, ScheduleError::CapacityExceeded { .. }));
    }

    #[test]
    fn dominance_chain_on_random_instances() {
        for seed in 0..20 {
            let h = random_matrix(8, 12, 100 + seed);
            let power = 12.0;
            let mut fc = FlopCounter::new();

            let zfs = zfs_schedule(&h, 4, power, &mut fc).unwrap();
            if zfs.selected.len() != 4 {
                continue; // early-stopped seeds are excluded from the comparison
            }
            let mut zfs_set = zfs.selected.clone();
            zfs_set.sort_unstable();
            let mut eval = zf_eval(&h, power);
            let zfs_rate = eval(&zfs_set, &mut fc);
            let enhanced =
                enhanced_greedy_schedule(&h, 4, power, Criterion::SumRate(&mut eval), &mut fc)
                    .unwrap();
            let mut eval2 = zf_eval(&h, power);
            let exhaustive = exhaustive_schedule(8, 4, &mut eval2, 1000, &mut fc).unwrap();

            assert!(exhaustive.criterion_value >= enhanced.criterion_value);
            assert!(enhanced.criterion_value >= zfs_rate);
        }
    }

    #[test]
    fn flops_ordering_zfs_below_enhanced() {
        let h = random_matrix(16, 64, 77);
        let power = 64.0;

        let mut fc_zfs = FlopCounter::new();
        zfs_schedule(&h, 8, power, &mut fc_zfs).unwrap();

        let mut fc_corr = FlopCounter::new();
        enhanced_greedy_schedule(&h, 8, power, Criterion::Correlation, &mut fc_corr).unwrap();

        let mut fc_rate = FlopCounter::new();
        let mut eval = |set: &[usize], fc: &mut FlopCounter| {
            charge_cellfree_rate(fc, set.len(), h.ncols());
            rates::zf_throughput(&h.select_rows(set.iter()), power).unwrap_or(f64::NEG_INFINITY)
        };
        enhanced_greedy_schedule(&h, 8, power, Criterion::SumRate(&mut eval), &mut fc_rate)
            .unwrap();

        assert!(
            fc_zfs.total() < fc_corr.total() && fc_corr.total() < fc_rate.total(),
            "expected zfs < corr < rate, got {} / {} / {}",
            fc_zfs.total(),
            fc_corr.total(),
            fc_rate.total()
        );
    }

    #[test]
    fn multicell_enhanced_counts_and_dominance() {
        let cells: Vec<DMatrix<Complex64>> =
            (0..4).map(|s| random_matrix(4, 16, 200 + s)).collect();
        let mut fc = FlopCounter::new();
        let seeds = zfs_multicell(&cells, 2, 16.0, &mut fc).unwrap();
        assert_eq!(seeds.len(), 4);

        // joint evaluator: sum of per-cell ZF throughputs
        let cells_ref = &cells;
        let mut eval = move |sets: &[Vec<usize>], fc: &mut FlopCounter| {
            sets.iter()
                .zip(cells_ref.iter())
                .map(|(set, h)| {
                    charge_zf_throughput(fc, set.len(), h.ncols());
                    rates::zf_throughput(&h.select_rows(set.iter()), 16.0)
                        .unwrap_or(f64::NEG_INFINITY)
                })
                .sum()
        };
        let r = enhanced_greedy_multicell(
            &cells,
            2,
            16.0,
            JointCriterion::SumRate(&mut eval),
            &mut fc,
        )
        .unwrap();
        // K_c = 4, target 2: one extra stage plus the seed
        assert_eq!(r.candidates.len(), 2);
        assert!(r.criterion_value >= r.candidates[0].criterion_value);

        let mut eval2 = move |sets: &[Vec<usize>], fc: &mut FlopCounter| {
            sets.iter()
                .zip(cells_ref.iter())
                .map(|(set, h)| {
                    charge_zf_throughput(fc, set.len(), h.ncols());
                    rates::zf_throughput(&h.select_rows(set.iter()), 16.0)
                        .unwrap_or(f64::NEG_INFINITY)
                })
                .sum()
        };
        let ex = exhaustive_multicell(&cells, 2, &mut eval2, 10_000, &mut fc).unwrap();
        assert!(ex.criterion_value >= r.criterion_value);
        // joint enumeration size: C(4,2)^4 = 1296 configurations
        assert_eq!(binomial(4, 2).pow(4), 1296);
    }

    #[test]
    fn schedulers_deterministic() {
        let h = random_matrix(10, 16, 55);
        let run = || {
            let mut fc = FlopCounter::new();
            let r = enhanced_greedy_schedule(&h, 4, 16.0, Criterion::Correlation, &mut fc)
                .unwrap();
            (r.selected, r.criterion_value.to_bits(), fc.total())
        };
        assert_eq!(run(), run());
    }
}
