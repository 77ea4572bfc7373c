//! Feature-subset search maximizing the transport-distance criterion.
//!
//! The criterion J of a coordinate subset is the W1 distance between the two
//! class-conditional sample measures after projecting every point onto those
//! coordinates. Because projections of an L1 product metric only shrink
//! distances, J is monotone under set inclusion, which licenses an exact
//! Branch & Bound over the canonical subset-removal tree. Greedy forward and
//! backward passes and a plain exhaustive enumeration are provided as
//! baselines and oracles.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::kr_closed::{w1_auto, ClosedFormError};
use crate::measures::{
    empirical_from_sample, pushforward, union_support, AtomicMeasure, MeasureError, PointSet,
};
use crate::metrics::{Combine, MetricDescriptor, MetricError};

/// Largest number of coordinates a problem may have; subsets are cached by
/// bitmask, so one machine word must cover every coordinate.
pub const MAX_COORDINATES: usize = 64;

/// Largest subset count [`Selector::exhaustive`] agrees to enumerate.
pub const MAX_EXHAUSTIVE: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("criterion subsets must be non-empty")]
    EmptySubset,
    #[error("coordinate index {index} appears twice in the subset")]
    DuplicateIndex { index: usize },
    #[error("coordinate index {index} out of range for {r} coordinates")]
    IndexOutOfRange { index: usize, r: usize },
    #[error("need at least one coordinate metric")]
    NoCoordinates,
    #[error("{r} coordinates exceed the supported maximum of {max}", max = MAX_COORDINATES)]
    TooManyCoordinates { r: usize },
    #[error("target size {k} must lie in 1..={r}")]
    BadTargetSize { k: usize, r: usize },
    #[error("{combinations} subsets exceed the exhaustive-search cap")]
    TooLarge { combinations: u64 },
    #[error("sample contains only one class")]
    SingleClass,
    #[error("label {label} at index {index} is not -1 or +1")]
    InvalidLabel { index: usize, label: i8 },
    #[error("expected {expected} labels, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("points have {found} coordinates but {expected} metrics were given")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
}

/// How the criterion evaluates a projected instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionMode {
    /// Solve the transport problem on the joint projected support.
    EmpiricalJoint,
    /// Sum per-coordinate distances; exact when the class measures are
    /// product measures under the L1 combine rule.
    ProductAdditive,
}

/// Which search produced a [`SelectionResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    BranchAndBound,
    Forward,
    Backward,
    Exhaustive,
}

impl SearchStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SearchStrategy::BranchAndBound => "bb",
            SearchStrategy::Forward => "forward",
            SearchStrategy::Backward => "backward",
            SearchStrategy::Exhaustive => "exhaustive",
        }
    }
}

/// Rounds a criterion value to twelve significant digits. Projections taken
/// through different supersets can place one mathematical value a few ulps
/// apart, which would let tied subsets compare unequal and make the search
/// outcome depend on traversal order. Snapping to a fixed decimal precision
/// collapses those ties; rounding is monotone, so the inclusion
/// monotonicity of the criterion survives.
fn canonical_value(value: f64) -> f64 {
    format!("{value:.11e}")
        .parse()
        .expect("scientific notation round-trips")
}

/// A labeled sample in an r-coordinate product space together with the
/// search configuration: per-coordinate metrics combined with the L1 rule,
/// the target subset size, and the criterion mode.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    m_plus: AtomicMeasure,
    m_minus: AtomicMeasure,
    metric: MetricDescriptor,
    r: usize,
    k_target: usize,
    mode: CriterionMode,
    /// Per-coordinate criterion values, precomputed in additive mode so every
    /// subset sums the same doubles in the same ascending order. That keeps
    /// floating-point sums monotone under inclusion, which the search bound
    /// relies on.
    singles: Option<Vec<f64>>,
}

impl SelectionProblem {
    /// Builds the problem: splits the sample by label, forms the two
    /// class-conditional empirical measures with mass 1/2 each on a shared
    /// support, and wraps the coordinate metrics into an L1 product.
    pub fn new(
        points: &[Vec<f64>],
        labels: &[i8],
        coords: Vec<MetricDescriptor>,
        k_target: usize,
        mode: CriterionMode,
    ) -> Result<Self, SelectError> {
        let r = coords.len();
        if r == 0 {
            return Err(SelectError::NoCoordinates);
        }
        if r > MAX_COORDINATES {
            return Err(SelectError::TooManyCoordinates { r });
        }
        if points.len() != labels.len() {
            return Err(SelectError::LengthMismatch {
                expected: points.len(),
                found: labels.len(),
            });
        }
        if !(1..=r).contains(&k_target) {
            return Err(SelectError::BadTargetSize { k: k_target, r });
        }
        for p in points {
            if p.len() != r {
                return Err(SelectError::DimensionMismatch {
                    expected: r,
                    found: p.len(),
                });
            }
        }
        let mut plus: Vec<Vec<f64>> = Vec::new();
        let mut minus: Vec<Vec<f64>> = Vec::new();
        for (index, (p, &label)) in points.iter().zip(labels).enumerate() {
            match label {
                1 => plus.push(p.clone()),
                -1 => minus.push(p.clone()),
                _ => return Err(SelectError::InvalidLabel { index, label }),
            }
        }
        if plus.is_empty() || minus.is_empty() {
            return Err(SelectError::SingleClass);
        }
        let (_, m_plus) = empirical_from_sample(&plus, 0.5)?;
        let (_, m_minus) = empirical_from_sample(&minus, 0.5)?;
        let (m_plus, m_minus) = union_support(&m_plus, &m_minus)?;
        let metric = MetricDescriptor::product(coords, Combine::L1)?;
        let mut problem = SelectionProblem {
            m_plus,
            m_minus,
            metric,
            r,
            k_target,
            mode,
            singles: None,
        };
        if mode == CriterionMode::ProductAdditive {
            let mut singles = Vec::with_capacity(r);
            for c in 0..r {
                singles.push(problem.eval_joint(&[c])?);
            }
            problem.singles = Some(singles);
        }
        Ok(problem)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn k_target(&self) -> usize {
        self.k_target
    }

    pub fn mode(&self) -> CriterionMode {
        self.mode
    }

    pub fn metric(&self) -> &MetricDescriptor {
        &self.metric
    }

    /// The two class-conditional measures (positive label first), each of
    /// mass 1/2, on their shared full-dimensional support.
    pub fn class_measures(&self) -> (&AtomicMeasure, &AtomicMeasure) {
        (&self.m_plus, &self.m_minus)
    }

    fn check_subset(&self, subset: &[usize]) -> Result<Vec<usize>, SelectError> {
        if subset.is_empty() {
            return Err(SelectError::EmptySubset);
        }
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Err(SelectError::DuplicateIndex { index: pair[0] });
            }
        }
        if let Some(&max) = sorted.last() {
            if max >= self.r {
                return Err(SelectError::IndexOutOfRange {
                    index: max,
                    r: self.r,
                });
            }
        }
        Ok(sorted)
    }

    /// Evaluates J on a sorted, validated subset.
    fn eval_sorted(&self, sorted: &[usize]) -> Result<f64, SelectError> {
        if let Some(singles) = &self.singles {
            let mut total = 0.0;
            for &c in sorted {
                total += singles[c];
            }
            return Ok(canonical_value(total));
        }
        self.eval_joint(sorted)
    }

    /// Projects both class measures onto the subset and evaluates W1 there.
    fn eval_joint(&self, sorted: &[usize]) -> Result<f64, SelectError> {
        let support = self.m_plus.support();
        let mut projected: Vec<Vec<f64>> = Vec::new();
        let mut index_of: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut map = Vec::with_capacity(support.len());
        for p in support.points() {
            let q: Vec<f64> = sorted.iter().map(|&c| p[c]).collect();
            let key: Vec<u64> = q
                .iter()
                .map(|&c| if c == 0.0 { 0.0f64 } else { c }.to_bits())
                .collect();
            let next = projected.len();
            let i = *index_of.entry(key).or_insert_with(|| {
                projected.push(q);
                next
            });
            map.push(i);
        }
        let target = Arc::new(PointSet::new(projected)?);
        let p_plus = pushforward(&self.m_plus, &map, Arc::clone(&target))?;
        let p_minus = pushforward(&self.m_minus, &map, target)?;
        let metric = self.metric.project(sorted)?;
        let assume_product = self.mode == CriterionMode::ProductAdditive;
        Ok(canonical_value(
            w1_auto(&p_plus, &p_minus, &metric, assume_product)?.value,
        ))
    }
}

/// The separation criterion J of a coordinate subset: the W1 distance
/// between the class measures projected onto those coordinates, under the
/// projected L1 product metric.
pub fn criterion_j(problem: &SelectionProblem, subset: &[usize]) -> Result<f64, SelectError> {
    let sorted = problem.check_subset(subset)?;
    problem.eval_sorted(&sorted)
}

/// Outcome of one search run.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Selected coordinate indices, ascending, of size `k_target`.
    pub subset: Vec<usize>,
    /// Criterion value of the subset.
    pub j_value: f64,
    /// Number of criterion queries the run issued (cache hits included).
    pub nodes_evaluated: u64,
    /// Number of subtrees discarded by the bound test.
    pub nodes_pruned: u64,
    /// Search that produced the result.
    pub strategy: SearchStrategy,
}

/// Search engine over one problem with a memoized criterion.
///
/// The cache is keyed by subset bitmask and shared across every search run
/// on this selector, so repeated queries for a subset return bit-identical
/// values regardless of which strategy asked first. With `threads > 1`,
/// batches of sibling evaluations run on scoped worker threads; results and
/// counters do not depend on the schedule.
pub struct Selector<'a> {
    problem: &'a SelectionProblem,
    cache: HashMap<u64, f64>,
    threads: usize,
    queries: u64,
}

impl<'a> Selector<'a> {
    pub fn new(problem: &'a SelectionProblem) -> Selector<'a> {
        Selector {
            problem,
            cache: HashMap::new(),
            threads: 1,
            queries: 0,
        }
    }

    /// Sets the worker-thread count for batched criterion evaluations;
    /// 0 and 1 both mean serial.
    pub fn with_threads(mut self, threads: usize) -> Selector<'a> {
        self.threads = threads.max(1);
        self
    }

    fn full_mask(&self) -> u64 {
        if self.problem.r == 64 {
            u64::MAX
        } else {
            (1u64 << self.problem.r) - 1
        }
    }

    fn mask_to_subset(&self, mask: u64) -> Vec<usize> {
        (0..self.problem.r)
            .filter(|&i| mask & (1u64 << i) != 0)
            .collect()
    }

    /// Evaluates one subset, consulting the cache. Counts one query.
    fn query(&mut self, mask: u64) -> Result<f64, SelectError> {
        self.queries += 1;
        if let Some(&v) = self.cache.get(&mask) {
            return Ok(v);
        }
        let subset = self.mask_to_subset(mask);
        let value = self.problem.eval_sorted(&subset)?;
        self.cache.insert(mask, value);
        Ok(value)
    }

    /// Evaluates a batch of subsets, in parallel when configured. Counts one
    /// query per requested mask.
    fn query_batch(&mut self, masks: &[u64]) -> Result<Vec<f64>, SelectError> {
        self.queries += masks.len() as u64;
        let mut misses: Vec<u64> = Vec::new();
        for &mask in masks {
            if !self.cache.contains_key(&mask) && !misses.contains(&mask) {
                misses.push(mask);
            }
        }
        if self.threads <= 1 || misses.len() <= 1 {
            for &mask in &misses {
                let subset = self.mask_to_subset(mask);
                let value = self.problem.eval_sorted(&subset)?;
                self.cache.insert(mask, value);
            }
        } else {
            let problem = self.problem;
            let workers = self.threads.min(misses.len());
            let mut results: Vec<Result<(u64, f64), SelectError>> = Vec::new();
            std::thread::scope(|scope| {
                let mut handles = Vec::with_capacity(workers);
                for chunk in misses.chunks(misses.len().div_ceil(workers)) {
                    handles.push(scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|&mask| {
                                let subset: Vec<usize> = (0..problem.r)
                                    .filter(|&i| mask & (1u64 << i) != 0)
                                    .collect();
                                problem.eval_sorted(&subset).map(|v| (mask, v))
                            })
                            .collect::<Vec<_>>()
                    }));
                }
                for handle in handles {
                    results.extend(handle.join().expect("criterion worker panicked"));
                }
            });
            for entry in results {
                let (mask, value) = entry?;
                self.cache.insert(mask, value);
            }
        }
        Ok(masks.iter().map(|mask| self.cache[mask]).collect())
    }

    /// Exact search over the canonical removal tree.
    ///
    /// The root carries the full coordinate set; a node's children each
    /// remove one more index, strictly greater than the last removed one, so
    /// every size-`k_target` subset appears exactly once as a leaf. Children
    /// are expanded most-promising-first (descending J, ties by ascending
    /// removed index) and a child whose J cannot exceed the incumbent is
    /// pruned together with its whole subtree; single-child chains are
    /// collapsed down to their leaf without evaluating the chain nodes.
    pub fn branch_and_bound(&mut self) -> Result<SelectionResult, SelectError> {
        let start = self.queries;
        let mut pruned: u64 = 0;
        let full = self.full_mask();
        let j_full = self.query(full)?;
        let mut best = f64::NEG_INFINITY;
        let mut best_mask = 0u64;
        self.expand(full, None, Some(j_full), &mut best, &mut best_mask, &mut pruned)?;
        Ok(SelectionResult {
            subset: self.mask_to_subset(best_mask),
            j_value: best,
            nodes_evaluated: self.queries - start,
            nodes_pruned: pruned,
            strategy: SearchStrategy::BranchAndBound,
        })
    }

    fn expand(
        &mut self,
        mask: u64,
        last_removed: Option<usize>,
        value: Option<f64>,
        best: &mut f64,
        best_mask: &mut u64,
        pruned: &mut u64,
    ) -> Result<(), SelectError> {
        let r = self.problem.r;
        let k = self.problem.k_target;
        let size = mask.count_ones() as usize;
        if size == k {
            let j = match value {
                Some(v) => v,
                None => self.query(mask)?,
            };
            if j >= *best {
                *best = j;
                *best_mask = mask;
            }
            return Ok(());
        }
        let depth = r - size;
        let from = last_removed.map_or(0, |l| l + 1);
        let to = k + depth;
        let children: Vec<usize> = (from..=to).collect();
        if children.len() == 1 {
            let j = children[0];
            return self.expand(mask & !(1u64 << j), Some(j), None, best, best_mask, pruned);
        }
        let masks: Vec<u64> = children.iter().map(|&j| mask & !(1u64 << j)).collect();
        let values = self.query_batch(&masks)?;
        let mut order: Vec<usize> = (0..children.len()).collect();
        order.sort_by(|&a, &b| {
            values[b]
                .total_cmp(&values[a])
                .then(children[a].cmp(&children[b]))
        });
        for idx in order {
            if values[idx] <= *best {
                *pruned += 1;
                continue;
            }
            self.expand(
                masks[idx],
                Some(children[idx]),
                Some(values[idx]),
                best,
                best_mask,
                pruned,
            )?;
        }
        Ok(())
    }

    /// Greedy search growing from the empty set: each step adds the
    /// coordinate with the largest criterion gain, ties resolved toward the
    /// smallest index.
    pub fn forward(&mut self) -> Result<SelectionResult, SelectError> {
        let r = self.problem.r;
        let k = self.problem.k_target;
        let start = self.queries;
        let mut mask: u64 = 0;
        while (mask.count_ones() as usize) < k {
            let candidates: Vec<usize> = (0..r).filter(|&i| mask & (1u64 << i) == 0).collect();
            let masks: Vec<u64> = candidates.iter().map(|&i| mask | (1u64 << i)).collect();
            let values = self.query_batch(&masks)?;
            let mut pick = 0;
            for i in 1..candidates.len() {
                if values[i] > values[pick] {
                    pick = i;
                }
            }
            mask |= 1u64 << candidates[pick];
        }
        self.finish_greedy(mask, start, SearchStrategy::Forward)
    }

    /// Greedy search shrinking from the full set: each step removes the
    /// coordinate whose removal decreases the criterion least, ties resolved
    /// toward the smallest index.
    pub fn backward(&mut self) -> Result<SelectionResult, SelectError> {
        let r = self.problem.r;
        let k = self.problem.k_target;
        let start = self.queries;
        let mut mask = self.full_mask();
        while (mask.count_ones() as usize) > k {
            let members: Vec<usize> = (0..r).filter(|&i| mask & (1u64 << i) != 0).collect();
            let masks: Vec<u64> = members.iter().map(|&i| mask & !(1u64 << i)).collect();
            let values = self.query_batch(&masks)?;
            let mut pick = 0;
            for i in 1..members.len() {
                if values[i] > values[pick] {
                    pick = i;
                }
            }
            mask &= !(1u64 << members[pick]);
        }
        self.finish_greedy(mask, start, SearchStrategy::Backward)
    }

    fn finish_greedy(
        &mut self,
        mask: u64,
        start: u64,
        strategy: SearchStrategy,
    ) -> Result<SelectionResult, SelectError> {
        let j_value = self.query(mask)?;
        Ok(SelectionResult {
            subset: self.mask_to_subset(mask),
            j_value,
            nodes_evaluated: self.queries - start,
            nodes_pruned: 0,
            strategy,
        })
    }

    /// Evaluates every size-`k_target` subset in lexicographic order and
    /// returns the first strict maximum.
    pub fn exhaustive(&mut self) -> Result<SelectionResult, SelectError> {
        let r = self.problem.r;
        let k = self.problem.k_target;
        let combinations = binomial(r as u64, k as u64);
        if combinations > MAX_EXHAUSTIVE {
            return Err(SelectError::TooLarge { combinations });
        }
        let start = self.queries;
        let mut current: Vec<usize> = (0..k).collect();
        let mut best = f64::NEG_INFINITY;
        let mut best_subset: Vec<usize> = Vec::new();
        loop {
            let mask = current.iter().fold(0u64, |m, &i| m | (1u64 << i));
            let value = self.query(mask)?;
            if value > best {
                best = value;
                best_subset = current.clone();
            }
            if !next_combination(&mut current, r) {
                break;
            }
        }
        Ok(SelectionResult {
            subset: best_subset,
            j_value: best,
            nodes_evaluated: self.queries - start,
            nodes_pruned: 0,
            strategy: SearchStrategy::Exhaustive,
        })
    }
}

/// Advances `current` to the next k-combination of `0..r` in lexicographic
/// order; returns false when `current` was the last one.
fn next_combination(current: &mut [usize], r: usize) -> bool {
    let k = current.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if current[i] < r - k + i {
            current[i] += 1;
            for j in (i + 1)..k {
                current[j] = current[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Binomial coefficient, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u64 = 1;
    for i in 0..k {
        let num = n - i;
        let den = i + 1;
        match result.checked_mul(num) {
            Some(v) => result = v / den,
            None => return u64::MAX,
        }
    }
    result
}
