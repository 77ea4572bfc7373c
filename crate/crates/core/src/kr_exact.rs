//! Exact transportation solver for the first Wasserstein distance between
//! equal-mass atomic measures on a finite metric space. Returns the optimal
//! coupling, its cost, and a 1-Lipschitz dual potential, plus a certificate
//! checker for the optimality criterion (every arc carrying flow realizes
//! the full potential drop f_i - f_j = c_ij).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::measures::{union_support, AtomicMeasure, MeasureError, PointSet, MASS_TOL};
use crate::metrics::{MetricDescriptor, MetricError};

/// Tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-9;
/// Slack allowed on the 1-Lipschitz property of the potential.
pub const LIPSCHITZ_TOL: f64 = 1e-9;
/// Tolerance on the potential drop across arcs that carry flow.
pub const ARC_TOL: f64 = 1e-7;
/// Relative tolerance on the duality gap.
pub const GAP_TOL: f64 = 1e-7;
/// Plan entries at or below this flow are ignored by the certificate.
pub const FLOW_EPS: f64 = 1e-12;
/// Largest shared support the dense solver accepts.
pub const MAX_SUPPORT: usize = 4096;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("total masses {0} and {1} differ beyond tolerance")]
    MassMismatch(f64, f64),
    #[error("cost matrix entry ({0}, {1}) is negative or not finite")]
    NonFiniteCost(usize, usize),
    #[error("cost matrix diagonal entry {0} is nonzero")]
    NonzeroDiagonal(usize),
    #[error("cost matrix must be {expected}x{expected}, row {row} has {found} entries")]
    ShapeMismatch {
        expected: usize,
        row: usize,
        found: usize,
    },
    #[error("both measures have zero mass")]
    Degenerate,
    #[error("measures must share one support")]
    SupportMismatch,
    #[error("support has {0} points, the dense solver accepts at most {MAX_SUPPORT}")]
    TooLarge(usize),
    #[error("augmentation limit reached after {0} iterations")]
    NoConvergence(u64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// An optimal coupling with its cost and dual potential.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Optimal transport cost.
    pub cost: f64,
    /// Sparse coupling: (source index, target index, flow), sorted by
    /// (source, target).
    pub plan: Vec<(usize, usize, f64)>,
    /// 1-Lipschitz dual potential on the shared support, translated so its
    /// minimum is 0.
    pub potential: Vec<f64>,
    /// Number of augmenting-path iterations performed.
    pub iterations: u64,
}

/// Outcome of checking a solution against the optimality criterion.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub ok: bool,
    /// Largest deviation of a plan row/column sum from its marginal.
    pub max_marginal_violation: f64,
    /// Largest excess of |f_i - f_j| over c_ij.
    pub max_lipschitz_violation: f64,
    /// Largest deviation of f_i - f_j from c_ij on arcs with flow.
    pub max_arc_violation: f64,
    /// |cost - sum f_i (w1_i - w2_i)|.
    pub duality_gap: f64,
}

/// Entry for the label-setting shortest-path queue (min-heap on distance).
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

fn validate_cost(cost: &[Vec<f64>], n: usize) -> Result<(), TransportError> {
    if cost.len() != n {
        return Err(TransportError::ShapeMismatch {
            expected: n,
            row: usize::MAX,
            found: cost.len(),
        });
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(TransportError::ShapeMismatch {
                expected: n,
                row: i,
                found: row.len(),
            });
        }
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(TransportError::NonFiniteCost(i, j));
            }
        }
        if cost[i][i] != 0.0 {
            return Err(TransportError::NonzeroDiagonal(i));
        }
    }
    Ok(())
}

/// Solves the transportation problem between two equal-mass measures on one
/// support with the given metric cost matrix (symmetric, zero diagonal,
/// triangle inequality: the caller's obligation, normally discharged by
/// building the matrix from a validated metric descriptor).
///
/// Successive shortest augmenting paths with node potentials keep every
/// residual reduced cost nonnegative, so each path search is a label-setting
/// pass with a priority queue. Mass shared by both measures is matched in
/// place first; residual supply below 1e-12 of the total is treated as zero.
pub fn solve_transport(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    cost: &[Vec<f64>],
) -> Result<TransportSolution, TransportError> {
    if !std::sync::Arc::ptr_eq(m1.support(), m2.support()) && m1.support() != m2.support() {
        return Err(TransportError::SupportMismatch);
    }
    let n = m1.len();
    if n > MAX_SUPPORT {
        return Err(TransportError::TooLarge(n));
    }
    validate_cost(cost, n)?;
    let (t1, t2) = (m1.total_mass(), m2.total_mass());
    if t1 <= 0.0 && t2 <= 0.0 {
        return Err(TransportError::Degenerate);
    }
    if (t1 - t2).abs() > MASS_TOL {
        return Err(TransportError::MassMismatch(t1, t2));
    }
    let total = t1.max(t2);
    let zero_eps = FLOW_EPS * total;

    // Match common mass in place: for a metric cost the distance is
    // invariant under subtracting the shared part, and keeping it on the
    // (zero-cost) diagonal is optimal.
    let mut supply: Vec<f64> = m1.weights().to_vec();
    let mut demand: Vec<f64> = m2.weights().to_vec();
    // incoming[j] maps source i to the flow currently on arc (i, j).
    let mut incoming: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];
    for i in 0..n {
        let shared = supply[i].min(demand[i]);
        if shared > 0.0 {
            incoming[i].insert(i, shared);
            supply[i] -= shared;
            demand[i] -= shared;
        }
    }

    // Node layout: 0..n are sources, n..2n are sinks.
    let mut pi = vec![0.0f64; 2 * n];
    let mut iterations: u64 = 0;
    let max_iterations = 20 * (n as u64) * (n as u64) + 64;

    loop {
        let mut s = usize::MAX;
        for i in 0..n {
            if supply[i] > zero_eps && (s == usize::MAX || supply[i] > supply[s]) {
                s = i;
            }
        }
        if s == usize::MAX {
            break;
        }
        if iterations >= max_iterations {
            return Err(TransportError::NoConvergence(iterations));
        }

        // Label-setting pass over the residual graph from source s.
        let mut dist = vec![f64::INFINITY; 2 * n];
        let mut parent = vec![usize::MAX; 2 * n];
        let mut done = vec![false; 2 * n];
        dist[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { dist: 0.0, node: s });
        let mut target = usize::MAX;
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if done[node] || d > dist[node] {
                continue;
            }
            done[node] = true;
            if node >= n && demand[node - n] > zero_eps {
                target = node - n;
                break;
            }
            if node < n {
                // Forward arcs to every sink; reduced costs are clamped at
                // zero to absorb rounding dust.
                let i = node;
                for (j, &c) in cost[i].iter().enumerate() {
                    let sink = n + j;
                    if done[sink] {
                        continue;
                    }
                    let rc = (c + pi[i] - pi[sink]).max(0.0);
                    if d + rc < dist[sink] {
                        dist[sink] = d + rc;
                        parent[sink] = i;
                        heap.push(HeapEntry {
                            dist: dist[sink],
                            node: sink,
                        });
                    }
                }
            } else {
                // Residual (backward) arcs to sources that ship into this
                // sink.
                let j = node - n;
                for (&i, &flow) in &incoming[j] {
                    if flow <= 0.0 || done[i] {
                        continue;
                    }
                    let rc = (-cost[i][j] + pi[node] - pi[i]).max(0.0);
                    if d + rc < dist[i] {
                        dist[i] = d + rc;
                        parent[i] = node;
                        heap.push(HeapEntry {
                            dist: dist[i],
                            node: i,
                        });
                    }
                }
            }
        }
        let Some(t) = (target != usize::MAX).then_some(target) else {
            // All残 demand is below the zero threshold: remaining supply is
            // rounding dust of the same size, accepted by the mass check.
            break;
        };

        // Walk the path sink <- ... <- s to find the bottleneck.
        let d_t = dist[n + t];
        let mut bottleneck = supply[s].min(demand[t]);
        let mut node = n + t;
        while node != s {
            let p = parent[node];
            if node >= n {
                // forward arc p (source) -> node (sink): unbounded
            } else {
                // backward arc p (sink) -> node (source), capacity = flow
                bottleneck = bottleneck.min(incoming[p - n][&node]);
            }
            node = p;
        }

        // Apply the augmentation.
        let mut node = n + t;
        while node != s {
            let p = parent[node];
            if node >= n {
                let j = node - n;
                *incoming[j].entry(p).or_insert(0.0) += bottleneck;
            } else {
                let j = p - n;
                let f = incoming[j].get_mut(&node).expect("backward arc has flow");
                *f -= bottleneck;
                if *f <= 0.0 {
                    incoming[j].remove(&node);
                }
            }
            node = p;
        }
        supply[s] -= bottleneck;
        demand[t] -= bottleneck;

        // Standard potential update keeps all residual reduced costs
        // nonnegative: add min(dist, dist(t)) to every node label.
        for x in 0..2 * n {
            pi[x] += dist[x].min(d_t);
        }
        iterations += 1;
    }

    // Dual potential on the support: v_j are the sink labels, and
    // f_i = min_j (c_ij - v_j) is 1-Lipschitz with f matching the full
    // potential drop on every arc that carries flow.
    let mut potential = Vec::with_capacity(n);
    for row in cost.iter().take(n) {
        let mut f = f64::INFINITY;
        for (j, &c) in row.iter().enumerate() {
            f = f.min(c - pi[n + j]);
        }
        potential.push(f);
    }
    let f_min = potential.iter().cloned().fold(f64::INFINITY, f64::min);
    for f in &mut potential {
        *f -= f_min;
    }

    let mut plan = Vec::new();
    for (j, arcs) in incoming.iter().enumerate() {
        for (&i, &flow) in arcs {
            if flow > 0.0 {
                plan.push((i, j, flow));
            }
        }
    }
    plan.sort_by_key(|arc| (arc.0, arc.1));
    let cost_total: f64 = plan.iter().map(|&(i, j, f)| f * cost[i][j]).sum();

    Ok(TransportSolution {
        cost: cost_total,
        plan,
        potential,
        iterations,
    })
}

/// Checks a solution against the optimality criterion. Reports violations,
/// never errors: marginals within [`MARGINAL_TOL`], potential 1-Lipschitz
/// within [`LIPSCHITZ_TOL`], the full potential drop on every arc with flow
/// above [`FLOW_EPS`] within [`ARC_TOL`], and a duality gap within
/// [`GAP_TOL`] relative to max(1, cost).
pub fn verify_optimality(
    sol: &TransportSolution,
    cost: &[Vec<f64>],
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> CertificateReport {
    let n = m1.len();
    let mut row = vec![0.0f64; n];
    let mut col = vec![0.0f64; n];
    for &(i, j, f) in &sol.plan {
        row[i] += f;
        col[j] += f;
    }
    let mut max_marginal = 0.0f64;
    for i in 0..n {
        max_marginal = max_marginal.max((row[i] - m1.weight(i)).abs());
        max_marginal = max_marginal.max((col[i] - m2.weight(i)).abs());
    }

    let f = &sol.potential;
    let mut max_lipschitz = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            max_lipschitz = max_lipschitz.max((f[i] - f[j]).abs() - cost[i][j]);
        }
    }

    let mut max_arc = 0.0f64;
    for &(i, j, flow) in &sol.plan {
        if flow > FLOW_EPS {
            max_arc = max_arc.max((f[i] - f[j] - cost[i][j]).abs());
        }
    }

    let dual: f64 = (0..n).map(|i| f[i] * (m1.weight(i) - m2.weight(i))).sum();
    let duality_gap = (sol.cost - dual).abs();

    let ok = max_marginal <= MARGINAL_TOL
        && max_lipschitz <= LIPSCHITZ_TOL
        && max_arc <= ARC_TOL
        && duality_gap <= GAP_TOL * sol.cost.abs().max(1.0);
    CertificateReport {
        ok,
        max_marginal_violation: max_marginal,
        max_lipschitz_violation: max_lipschitz,
        max_arc_violation: max_arc,
        duality_gap,
    }
}

/// Two measures reindexed onto one shared support together with the
/// materialized cost matrix of a metric descriptor.
#[derive(Debug, Clone)]
pub struct SharedInstance {
    pub m1: AtomicMeasure,
    pub m2: AtomicMeasure,
    pub cost: Vec<Vec<f64>>,
}

impl SharedInstance {
    pub fn support(&self) -> &Arc<PointSet> {
        self.m1.support()
    }
}

/// Pads two measures onto the union of their supports and materializes the
/// cost matrix of `metric` on it.
pub fn shared_instance(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    metric: &MetricDescriptor,
) -> Result<SharedInstance, TransportError> {
    let (m1, m2) = union_support(m1, m2)?;
    let support = m1.support();
    let cost = metric.cost_matrix(support, support)?;
    Ok(SharedInstance { m1, m2, cost })
}

/// W1 between two measures under a metric descriptor via the exact solver,
/// padding supports as needed. The returned plan and potential index the
/// union support (first measure's points first, then the second's new ones).
pub fn w1_lp(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    metric: &MetricDescriptor,
) -> Result<TransportSolution, TransportError> {
    let inst = shared_instance(m1, m2, metric)?;
    solve_transport(&inst.m1, &inst.m2, &inst.cost)
}
