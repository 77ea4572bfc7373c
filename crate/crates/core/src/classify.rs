//! Classifier-error functionals for pairs of atomic measures and the error
//! bounds that connect binary classification to the transport distance.
//!
//! A classification function assigns one real value per shared support
//! point; thresholding it yields a binary classifier. This module evaluates
//! the misclassification functionals of such classifiers exactly (all
//! pushforward distribution functions are finite step functions), extracts a
//! near-optimal threshold classifier from a dual potential, bounds the
//! achievable error in terms of the transport distance, and exposes the
//! separability descriptor used to rate labeled samples.

use std::sync::Arc;

use thiserror::Error;

use crate::kr_exact::{shared_instance, solve_transport, TransportError, TransportSolution};
use crate::measures::{
    empirical_from_sample, shares_support, AtomicMeasure, MeasureError, PointSet,
};
use crate::metrics::{MetricDescriptor, MetricError};

/// Slack allowed when certifying the 1-Lipschitz property of a
/// classification function against a metric.
pub const LIPSCHITZ_CERT_TOL: f64 = 1e-9;

/// Slack allowed on range checks of `[0, delta]`-valued functions, so dual
/// potentials that overshoot the diameter by rounding dust are accepted.
pub const RANGE_TOL: f64 = 1e-9;

/// Slack allowed when checking `W <= gamma * delta` in [`delta_bound`].
pub const W_BOUND_TOL: f64 = 1e-9;

/// Slack used by [`w1_lower_bound_check`] when comparing the exact distance
/// against the margin bound.
pub const LOWER_BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("classification function and measures must live on one support")]
    SupportMismatch,
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("value {value} at index {index} is not finite")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("parameter {name} must be finite, found {value}")]
    NonFiniteParameter { name: &'static str, value: f64 },
    #[error(
        "values at indices {i} and {j} differ by more than the distance \
         between their points (excess {excess:.3e})"
    )]
    NotLipschitz { i: usize, j: usize, excess: f64 },
    #[error("margin width must be nonnegative, found {eps}")]
    NegativeEps { eps: f64 },
    #[error("margin width must lie in [0, 1], found {eps}")]
    InvalidEps { eps: f64 },
    #[error("value {value} at index {index} lies outside [0, {delta}]")]
    RangeViolation { index: usize, value: f64, delta: f64 },
    #[error("threshold {t} lies outside [0, {delta}]")]
    InvalidThreshold { t: f64, delta: f64 },
    #[error("diameter must be positive and finite, found {delta}")]
    InvalidDelta { delta: f64 },
    #[error("rho must lie in [0, 1), found {rho}")]
    InvalidRho { rho: f64 },
    #[error("transport cost must be nonnegative, found {w}")]
    NegativeW { w: f64 },
    #[error("transport cost {w} exceeds the feasible maximum {limit}")]
    WExceedsMass { w: f64, limit: f64 },
    #[error("solution potential has {found} entries but the support has {expected}")]
    SolutionMismatch { expected: usize, found: usize },
    #[error("label {label} at index {index} is not -1 or +1")]
    InvalidLabel { index: usize, label: i8 },
    #[error("sample contains only one class")]
    SingleClass,
    #[error("all sample points coincide, the diameter is zero")]
    ZeroDiameter,
    #[error("operation requires probability measures")]
    NotProbability,
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A real-valued function on the points of a shared support.
///
/// Thresholding the function at `t` classifies a point as positive when its
/// value exceeds `t`. The `lipschitz_certified` flag records that the values
/// have been checked to be 1-Lipschitz with respect to a metric descriptor
/// (within [`LIPSCHITZ_CERT_TOL`]).
#[derive(Debug, Clone)]
pub struct ClassificationFunction {
    support: Arc<PointSet>,
    values: Vec<f64>,
    lipschitz_certified: bool,
}

impl ClassificationFunction {
    /// Wraps finite per-point values without any Lipschitz claim.
    pub fn new(support: Arc<PointSet>, values: Vec<f64>) -> Result<Self, ClassifyError> {
        if values.len() != support.len() {
            return Err(ClassifyError::LengthMismatch {
                expected: support.len(),
                found: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(ClassifyError::NonFiniteValue { index, value });
            }
        }
        Ok(ClassificationFunction {
            support,
            values,
            lipschitz_certified: false,
        })
    }

    /// Wraps per-point values after checking |f_i - f_j| <= d(x_i, x_j) +
    /// [`LIPSCHITZ_CERT_TOL`] for every pair of support points.
    pub fn certified(
        support: Arc<PointSet>,
        values: Vec<f64>,
        metric: &MetricDescriptor,
    ) -> Result<Self, ClassifyError> {
        let mut f = ClassificationFunction::new(support, values)?;
        f.check_lipschitz(metric)?;
        f.lipschitz_certified = true;
        Ok(f)
    }

    fn check_lipschitz(&self, metric: &MetricDescriptor) -> Result<(), ClassifyError> {
        for i in 0..self.values.len() {
            for j in (i + 1)..self.values.len() {
                let d = metric.distance(self.support.point(i), self.support.point(j))?;
                let excess = (self.values[i] - self.values[j]).abs() - d;
                if excess > LIPSCHITZ_CERT_TOL {
                    return Err(ClassifyError::NotLipschitz { i, j, excess });
                }
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &Arc<PointSet> {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_lipschitz_certified(&self) -> bool {
        self.lipschitz_certified
    }

    /// Adds `shift` to every value. Translation preserves the Lipschitz
    /// property, so the certification flag carries over.
    pub fn translate(&self, shift: f64) -> ClassificationFunction {
        ClassificationFunction {
            support: Arc::clone(&self.support),
            values: self.values.iter().map(|v| v + shift).collect(),
            lipschitz_certified: self.lipschitz_certified,
        }
    }
}

fn check_attached(f: &ClassificationFunction, m: &AtomicMeasure) -> Result<(), ClassifyError> {
    let same = Arc::ptr_eq(&f.support, m.support()) || *f.support == **m.support();
    if !same || f.values.len() != m.len() {
        return Err(ClassifyError::SupportMismatch);
    }
    Ok(())
}

fn check_pair(
    f: &ClassificationFunction,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> Result<(), ClassifyError> {
    if !shares_support(m1, m2) {
        return Err(ClassifyError::SupportMismatch);
    }
    check_attached(f, m1)?;
    check_attached(f, m2)
}

fn require_finite(name: &'static str, value: f64) -> Result<(), ClassifyError> {
    if !value.is_finite() {
        return Err(ClassifyError::NonFiniteParameter { name, value });
    }
    Ok(())
}

/// Misclassification mass of the threshold classifier `sign(f - gamma)`:
/// the first measure's mass at or below the threshold plus the second
/// measure's mass above it.
pub fn epsilon_quantity(
    f: &ClassificationFunction,
    gamma: f64,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> Result<f64, ClassifyError> {
    check_pair(f, m1, m2)?;
    require_finite("gamma", gamma)?;
    let mut total = 0.0;
    for (i, &v) in f.values.iter().enumerate() {
        total += if v <= gamma { m1.weight(i) } else { m2.weight(i) };
    }
    Ok(total)
}

/// Which argument ordering attains the minimum in an [`ErrorReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrSide {
    /// `(m1, m2)` as passed.
    Forward,
    /// Roles of the measures swapped.
    Swapped,
}

/// Margin error of a classification function, evaluated in both argument
/// orderings.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Error with the measures in the order passed: mass of the first
    /// measure with values at most `eps/2` plus mass of the second above
    /// `-eps/2`.
    pub eps12: f64,
    /// Error with the roles of the measures swapped.
    pub eps21: f64,
    /// `min(eps12, eps21)`.
    pub err: f64,
    /// Half margin `eps / 2` used for the sublevel cuts.
    pub threshold: f64,
    /// Ordering that attained the minimum (`Forward` on ties).
    pub side: ErrSide,
}

/// Margin error of `f` with margin width `eps >= 0`: each ordering charges
/// one measure below `eps/2` and the other above `-eps/2`, and the minimum
/// over the two orderings is the reported error.
pub fn err(
    f: &ClassificationFunction,
    eps: f64,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> Result<ErrorReport, ClassifyError> {
    check_pair(f, m1, m2)?;
    require_finite("eps", eps)?;
    if eps < 0.0 {
        return Err(ClassifyError::NegativeEps { eps });
    }
    let half = eps / 2.0;
    let mut eps12 = 0.0;
    let mut eps21 = 0.0;
    for (i, &v) in f.values.iter().enumerate() {
        if v <= half {
            eps12 += m1.weight(i);
            eps21 += m2.weight(i);
        }
        if v > -half {
            eps12 += m2.weight(i);
            eps21 += m1.weight(i);
        }
    }
    let (err, side) = if eps12 <= eps21 {
        (eps12, ErrSide::Forward)
    } else {
        (eps21, ErrSide::Swapped)
    };
    Ok(ErrorReport {
        eps12,
        eps21,
        err,
        threshold: half,
        side,
    })
}

/// Value-weighted misclassification of `f` at threshold `t`, for
/// `[0, delta]`-valued functions.
///
/// One ordering charges the first measure by `f` on the sublevel set
/// `{f <= t}` and by `delta - f` there as well, and the second measure by
/// both weights on the complement; the other ordering swaps the measures.
/// The minimum of the two is returned. For probability measures it equals
/// `delta * (1 - |m2({f <= t}) - m1({f <= t})|)`.
pub fn general_err(
    f: &ClassificationFunction,
    t: f64,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    delta: f64,
) -> Result<f64, ClassifyError> {
    check_pair(f, m1, m2)?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(ClassifyError::InvalidDelta { delta });
    }
    require_finite("t", t)?;
    if t < -RANGE_TOL || t > delta + RANGE_TOL {
        return Err(ClassifyError::InvalidThreshold { t, delta });
    }
    check_range(f, delta)?;
    let mut side12 = 0.0;
    let mut side21 = 0.0;
    for (i, &v) in f.values.iter().enumerate() {
        let (low, high) = (m1.weight(i), m2.weight(i));
        if v <= t {
            side12 += v * low + (delta - v) * low;
            side21 += v * high + (delta - v) * high;
        } else {
            side12 += v * high + (delta - v) * high;
            side21 += v * low + (delta - v) * low;
        }
    }
    Ok(side12.min(side21))
}

fn check_range(f: &ClassificationFunction, delta: f64) -> Result<(), ClassifyError> {
    for (index, &value) in f.values.iter().enumerate() {
        if value < -RANGE_TOL || value > delta + RANGE_TOL {
            return Err(ClassifyError::RangeViolation {
                index,
                value,
                delta,
            });
        }
    }
    Ok(())
}

/// The optimal measurable classifier for two equal-mass measures on a shared
/// support: keeps the indices where the first measure dominates, and returns
/// its misclassification mass. For probability measures the error equals
/// one minus the total variation distance.
pub fn bayes_classifier(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> Result<(Vec<usize>, f64), ClassifyError> {
    if !shares_support(m1, m2) {
        return Err(ClassifyError::SupportMismatch);
    }
    crate::measures::check_equal_mass(m1, m2)?;
    let mut keep = Vec::new();
    let mut error = 0.0;
    for i in 0..m1.len() {
        if m1.weight(i) >= m2.weight(i) {
            keep.push(i);
            error += m2.weight(i);
        } else {
            error += m1.weight(i);
        }
    }
    Ok((keep, error))
}

/// Error bound together with a record of whether clamping occurred.
#[derive(Debug, Clone, Copy)]
pub struct DeltaBound {
    /// `max(0, (2 / (1 - rho)) * (gamma - w / delta))`.
    pub value: f64,
    /// True when the raw expression was negative, meaning the requested
    /// margin is infeasible at this transport cost.
    pub clamped: bool,
}

/// Achievable-error bound for margin classifiers: measures of common mass
/// `gamma` separated by transport cost `w` on a space of diameter `delta`
/// admit a margin-`rho * delta` classifier with error at most
/// `(2 / (1 - rho)) * (gamma - w / delta)`.
pub fn delta_bound(
    w: f64,
    delta: f64,
    rho: f64,
    gamma: f64,
) -> Result<DeltaBound, ClassifyError> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(ClassifyError::InvalidDelta { delta });
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(ClassifyError::InvalidRho { rho });
    }
    require_finite("gamma", gamma)?;
    require_finite("w", w)?;
    if w < 0.0 {
        return Err(ClassifyError::NegativeW { w });
    }
    let limit = gamma * delta;
    if w > limit + W_BOUND_TOL {
        return Err(ClassifyError::WExceedsMass { w, limit });
    }
    let raw = 2.0 / (1.0 - rho) * (gamma - w / delta);
    Ok(DeltaBound {
        value: raw.max(0.0),
        clamped: raw < 0.0,
    })
}

/// Both sides of the margin lower bound on the transport distance.
#[derive(Debug, Clone)]
pub struct LowerBoundReport {
    /// Exact transport distance between the measures.
    pub w1: f64,
    /// Margin error of the function.
    pub delta: f64,
    /// `eps * (1 - delta)`.
    pub bound: f64,
    /// Whether `w1 >= bound - `[`LOWER_BOUND_TOL`] held.
    pub holds: bool,
}

/// Checks the margin lower bound: a 1-Lipschitz function with margin `eps`
/// and margin error `delta` forces the transport distance of two probability
/// measures to be at least `eps * (1 - delta)`.
pub fn w1_lower_bound_check(
    f: &ClassificationFunction,
    eps: f64,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    metric: &MetricDescriptor,
) -> Result<LowerBoundReport, ClassifyError> {
    check_pair(f, m1, m2)?;
    if !m1.is_probability() || !m2.is_probability() {
        return Err(ClassifyError::NotProbability);
    }
    require_finite("eps", eps)?;
    if eps < 0.0 {
        return Err(ClassifyError::NegativeEps { eps });
    }
    if eps > 1.0 {
        return Err(ClassifyError::InvalidEps { eps });
    }
    if !f.lipschitz_certified {
        f.check_lipschitz(metric)?;
    }
    let report = err(f, eps, m1, m2)?;
    let sol = crate::kr_exact::w1_lp(m1, m2, metric)?;
    let bound = eps * (1.0 - report.err);
    Ok(LowerBoundReport {
        w1: sol.cost,
        delta: report.err,
        bound,
        holds: sol.cost >= bound - LOWER_BOUND_TOL,
    })
}

/// Extracts the threshold classifier encoded by a dual potential.
///
/// The potential is read as a classification function on the shared support
/// of `m1` and `m2`. Among the candidate thresholds (the potential values
/// themselves), the one maximizing the gap between the two sublevel-mass
/// functions is selected, ties resolved toward the smallest threshold.
/// Returns the function, the selected threshold, and `err0`, one minus the
/// maximal gap; for probability measures `err0` is the smallest achievable
/// threshold-classifier error of this function.
pub fn threshold_from_potential(
    sol: &TransportSolution,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> Result<(ClassificationFunction, f64, f64), ClassifyError> {
    if !shares_support(m1, m2) {
        return Err(ClassifyError::SupportMismatch);
    }
    if sol.potential.len() != m1.len() {
        return Err(ClassifyError::SolutionMismatch {
            expected: m1.len(),
            found: sol.potential.len(),
        });
    }
    let f = ClassificationFunction::new(Arc::clone(m1.support()), sol.potential.clone())?;
    let mut order: Vec<usize> = (0..f.values.len()).collect();
    order.sort_by(|&a, &b| f.values[a].total_cmp(&f.values[b]));
    let mut best_gap = f64::NEG_INFINITY;
    let mut t_star = f64::NAN;
    let mut cum1 = 0.0;
    let mut cum2 = 0.0;
    let mut pos = 0;
    while pos < order.len() {
        let value = f.values[order[pos]];
        while pos < order.len() && f.values[order[pos]] == value {
            cum1 += m1.weight(order[pos]);
            cum2 += m2.weight(order[pos]);
            pos += 1;
        }
        let gap = (cum1 - cum2).abs();
        if gap > best_gap {
            best_gap = gap;
            t_star = value;
        }
    }
    Ok((f, t_star, 1.0 - best_gap))
}

/// Separability descriptor of a labeled sample.
#[derive(Debug, Clone)]
pub struct ComplexityReport {
    /// Transport distance between the half-mass class measures.
    pub w1: f64,
    /// Diameter of the sample support under the metric.
    pub delta: f64,
    /// `w1 / delta`; close to 1/2 means the classes are well separated by
    /// 1-Lipschitz functions.
    pub ratio: f64,
    /// [`delta_bound`] evaluated at common mass 1/2 and margin `rho * delta`.
    pub risk_bound: f64,
    /// Clamp flag of the bound.
    pub risk_clamped: bool,
}

/// Rates how separable a labeled sample is: builds the two class-conditional
/// empirical measures with mass 1/2 each, computes their exact transport
/// distance under `metric`, and converts it into a margin-error bound.
pub fn complexity_descriptor(
    points: &[Vec<f64>],
    labels: &[i8],
    metric: &MetricDescriptor,
    rho: f64,
) -> Result<ComplexityReport, ClassifyError> {
    if points.len() != labels.len() {
        return Err(ClassifyError::LengthMismatch {
            expected: points.len(),
            found: labels.len(),
        });
    }
    let mut plus: Vec<Vec<f64>> = Vec::new();
    let mut minus: Vec<Vec<f64>> = Vec::new();
    for (index, (p, &label)) in points.iter().zip(labels).enumerate() {
        match label {
            1 => plus.push(p.clone()),
            -1 => minus.push(p.clone()),
            _ => return Err(ClassifyError::InvalidLabel { index, label }),
        }
    }
    if plus.is_empty() || minus.is_empty() {
        return Err(ClassifyError::SingleClass);
    }
    let (_, m_plus) = empirical_from_sample(&plus, 0.5)?;
    let (_, m_minus) = empirical_from_sample(&minus, 0.5)?;
    let inst = shared_instance(&m_plus, &m_minus, metric)?;
    let delta = metric.diameter(inst.support())?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(ClassifyError::ZeroDiameter);
    }
    let sol = solve_transport(&inst.m1, &inst.m2, &inst.cost)?;
    let bound = delta_bound(sol.cost, delta, rho, 0.5)?;
    Ok(ComplexityReport {
        w1: sol.cost,
        delta,
        ratio: sol.cost / delta,
        risk_bound: bound.value,
        risk_clamped: bound.clamped,
    })
}

/// Exact integral of the sublevel-mass step function of `(values, weights)`
/// over `[a, b]`: each atom contributes its weight times the length of the
/// part of `[a, b]` at or above its value.
fn cdf_integral(values: &[f64], weights: &[f64], a: f64, b: f64) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * (b - v.max(a)).max(0.0))
        .sum()
}

fn sublevel_mass(values: &[f64], weights: &[f64], t: f64) -> f64 {
    values
        .iter()
        .zip(weights)
        .filter(|(&v, _)| v <= t)
        .map(|(_, &w)| w)
        .sum()
}

/// Evaluates the duality pairing `sum f_i (m1_i - m2_i)` three ways for a
/// `[0, delta]`-valued function on probability measures and a cut level
/// `gamma`:
///
/// * `form1` splits each integral of `f` at the superlevel set `{f > gamma}`
///   into a rectangle above the sublevel-mass curve, the area above that
///   curve right of `gamma`, and the area between the curve and its value at
///   `gamma` left of it;
/// * `form2` uses the complementary split into areas below the curve;
/// * `direct` is the plain weighted sum.
///
/// All three agree up to rounding for any `gamma` in `[0, delta]`.
pub fn area_decomposition(
    f: &ClassificationFunction,
    gamma: f64,
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    delta: f64,
) -> Result<(f64, f64, f64), ClassifyError> {
    check_pair(f, m1, m2)?;
    if !delta.is_finite() || delta <= 0.0 {
        return Err(ClassifyError::InvalidDelta { delta });
    }
    require_finite("gamma", gamma)?;
    if gamma < -RANGE_TOL || gamma > delta + RANGE_TOL {
        return Err(ClassifyError::InvalidThreshold { t: gamma, delta });
    }
    check_range(f, delta)?;
    if !m1.is_probability() || !m2.is_probability() {
        return Err(ClassifyError::NotProbability);
    }

    let values = f.values();
    let upper_split = |weights: &[f64]| {
        let at_gamma = sublevel_mass(values, weights, gamma);
        let rectangle = gamma * (1.0 - at_gamma);
        let right = (delta - gamma) - cdf_integral(values, weights, gamma, delta);
        let left = gamma * at_gamma - cdf_integral(values, weights, 0.0, gamma);
        rectangle + right + left
    };
    let lower_split = |weights: &[f64]| {
        let at_gamma = sublevel_mass(values, weights, gamma);
        let right = cdf_integral(values, weights, gamma, delta) - (delta - gamma) * at_gamma;
        let left = cdf_integral(values, weights, 0.0, gamma);
        right + left + (delta - gamma) * at_gamma
    };

    let form1 = upper_split(m1.weights()) - upper_split(m2.weights());
    let form2 = lower_split(m2.weights()) - lower_split(m1.weights());
    let direct = values
        .iter()
        .enumerate()
        .map(|(i, &v)| v * (m1.weight(i) - m2.weight(i)))
        .sum();
    Ok((form1, form2, direct))
}
