//! Closed-form W1 evaluators for special metric structures: k-discrete
//! spaces (k times total variation), ordered points on the line (weighted
//! CDF gaps), points on a circle (best cut constant), and additive sums
//! over product coordinates. Each form is validated against the exact
//! transportation solver in `kr_exact`.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::kr_exact::{w1_lp, TransportError};
use crate::measures::{
    check_equal_mass, shares_support, tv_distance, AtomicMeasure, MeasureError, PointSet, MASS_TOL,
};
use crate::metrics::{Combine, MetricDescriptor, MetricError};

#[derive(Debug, Error)]
pub enum ClosedFormError {
    #[error("discrete metric needs k > 0, got {0}")]
    NonpositiveK(f64),
    #[error("circle metric needs circumference > 0, got {0}")]
    NonpositiveCircumference(f64),
    #[error("closed form needs a 1-dimensional support, found dimension {0}")]
    NotOneDimensional(usize),
    #[error("additive product evaluation requires the l1 combine rule")]
    AdditiveNeedsL1,
    #[error("coordinate {index} out of range for dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// The cut data of two equal-mass measures on a circle: merged canonical
/// positions in increasing order, cumulative weight differences, and the
/// forward arc length from each position to the next (wrapping around).
#[derive(Debug, Clone)]
pub struct CutProfile {
    /// Ordered positions s_1 < ... < s_n in [0, circumference).
    pub positions: Vec<f64>,
    /// alpha_j = sum over k <= j of (w1_k - w2_k); alpha_n is 0 for
    /// equal-mass inputs (up to rounding).
    pub alphas: Vec<f64>,
    /// Forward segment lengths; entry j covers [s_j, s_{j+1}) and the last
    /// wraps, so the lengths sum to the circumference.
    pub seg_lengths: Vec<f64>,
    pub circumference: f64,
}

/// W1 under the k-discrete metric: k times the total-variation distance.
pub fn w1_discrete(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    k: f64,
) -> Result<f64, ClosedFormError> {
    if !k.is_finite() || k <= 0.0 {
        return Err(ClosedFormError::NonpositiveK(k));
    }
    Ok(k * tv_distance(m1, m2)?)
}

fn scalar_positions(m: &AtomicMeasure) -> Result<Vec<f64>, ClosedFormError> {
    let support = m.support();
    if support.dim() != 1 {
        return Err(ClosedFormError::NotOneDimensional(support.dim()));
    }
    Ok(support.points().iter().map(|p| p[0]).collect())
}

/// W1 on the line: sort the shared support ascending and accumulate
/// |F_i| (x_{i+1} - x_i), where F_i is the cumulative weight difference.
pub fn w1_line(m1: &AtomicMeasure, m2: &AtomicMeasure) -> Result<f64, ClosedFormError> {
    if !shares_support(m1, m2) {
        return Err(ClosedFormError::Measure(MeasureError::SupportMismatch));
    }
    check_equal_mass(m1, m2)?;
    let positions = scalar_positions(m1)?;
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| positions[a].total_cmp(&positions[b]));
    let mut w = 0.0;
    let mut cumulative = 0.0;
    for pair in order.windows(2) {
        let (i, next) = (pair[0], pair[1]);
        cumulative += m1.weight(i) - m2.weight(i);
        w += cumulative.abs() * (positions[next] - positions[i]);
    }
    Ok(w)
}

/// Builds the cut profile of two equal-mass measures on a circle of the
/// given circumference. Positions are reduced into [0, C); points whose
/// canonical positions coincide are merged.
pub fn cut_profile(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    circumference: f64,
) -> Result<CutProfile, ClosedFormError> {
    if !circumference.is_finite() || circumference <= 0.0 {
        return Err(ClosedFormError::NonpositiveCircumference(circumference));
    }
    if !shares_support(m1, m2) {
        return Err(ClosedFormError::Measure(MeasureError::SupportMismatch));
    }
    check_equal_mass(m1, m2)?;
    let raw = scalar_positions(m1)?;

    let mut merged: Vec<(f64, f64)> = Vec::new(); // (position, weight diff)
    let mut index_of: HashMap<u64, usize> = HashMap::new();
    for (i, &x) in raw.iter().enumerate() {
        let mut pos = x.rem_euclid(circumference);
        if pos >= circumference {
            pos = 0.0; // rounding can land exactly on C
        }
        let key = if pos == 0.0 { 0.0f64 } else { pos }.to_bits();
        let diff = m1.weight(i) - m2.weight(i);
        match index_of.get(&key) {
            Some(&slot) => merged[slot].1 += diff,
            None => {
                index_of.insert(key, merged.len());
                merged.push((pos, diff));
            }
        }
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = merged.len();
    let positions: Vec<f64> = merged.iter().map(|&(x, _)| x).collect();
    let mut alphas = Vec::with_capacity(n);
    let mut cumulative = 0.0;
    for &(_, diff) in &merged {
        cumulative += diff;
        alphas.push(cumulative);
    }
    let mut seg_lengths = Vec::with_capacity(n);
    for j in 0..n {
        if j + 1 < n {
            seg_lengths.push(positions[j + 1] - positions[j]);
        } else {
            seg_lengths.push(circumference - (positions[n - 1] - positions[0]));
        }
    }
    Ok(CutProfile {
        positions,
        alphas,
        seg_lengths,
        circumference,
    })
}

/// Length-weighted deviation of the cumulative differences from a constant:
/// sum over segments of l_j |alpha_j - a|.
pub fn profile_deviation(profile: &CutProfile, a: f64) -> f64 {
    profile
        .alphas
        .iter()
        .zip(&profile.seg_lengths)
        .map(|(&alpha, &len)| len * (alpha - a).abs())
        .sum()
}

/// The level-1/2 constant of the profile: the largest t among the attained
/// cumulative differences whose superlevel set {alpha >= t} carries more
/// than half the circumference, ties resolved toward the larger value.
pub fn circle_cut_constant(profile: &CutProfile) -> f64 {
    let mut candidates = profile.alphas.clone();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let half = profile.circumference / 2.0;
    for &t in &candidates {
        let measure: f64 = profile
            .alphas
            .iter()
            .zip(&profile.seg_lengths)
            .filter(|&(&alpha, _)| alpha >= t)
            .map(|(_, &len)| len)
            .sum();
        if measure > half {
            return t;
        }
    }
    // The smallest attained value always qualifies (its superlevel set is
    // the whole circle); this line is unreachable for valid profiles.
    *candidates.last().expect("profile has at least one segment")
}

/// W1 on a circle: minimum over candidate constants a in {alpha_j} of the
/// length-weighted deviation. The minimizer set always meets the attained
/// values because the objective is piecewise linear in a with breakpoints
/// exactly there.
pub fn w1_circle(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    circumference: f64,
) -> Result<f64, ClosedFormError> {
    let profile = cut_profile(m1, m2, circumference)?;
    let mut best = f64::INFINITY;
    for &a in &profile.alphas {
        best = best.min(profile_deviation(&profile, a));
    }
    Ok(best)
}

/// Additive W1 over independent coordinates: the sum of per-coordinate
/// distances, each dispatched to its own closed form or the exact solver.
/// Only valid when the joint measures actually factor over the coordinates.
pub fn w1_product_additive(
    pairs: &[(AtomicMeasure, AtomicMeasure, MetricDescriptor)],
) -> Result<f64, ClosedFormError> {
    let mut total = 0.0;
    for (m1, m2, metric) in pairs {
        total += w1_auto(m1, m2, metric, false)?.value;
    }
    Ok(total)
}

/// Pushforward of a measure onto a single coordinate: 1-dimensional support
/// of distinct coordinate values in first-occurrence order.
pub fn coordinate_marginal(
    m: &AtomicMeasure,
    coord: usize,
) -> Result<AtomicMeasure, ClosedFormError> {
    let support = m.support();
    if coord >= support.dim() {
        return Err(ClosedFormError::CoordinateOutOfRange {
            index: coord,
            dim: support.dim(),
        });
    }
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut index_of: HashMap<u64, usize> = HashMap::new();
    for (i, p) in support.points().iter().enumerate() {
        let x = p[coord];
        let key = if x == 0.0 { 0.0f64 } else { x }.to_bits();
        match index_of.get(&key) {
            Some(&slot) => weights[slot] += m.weight(i),
            None => {
                index_of.insert(key, values.len());
                values.push(vec![x]);
                weights.push(m.weight(i));
            }
        }
    }
    let target = Arc::new(PointSet::new(values)?);
    Ok(AtomicMeasure::new(target, weights)?)
}

/// Which evaluation route `w1_auto` took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W1Method {
    DiscreteTv,
    Line,
    Circle,
    ProductAdditive,
    Lp,
}

impl W1Method {
    pub fn name(self) -> &'static str {
        match self {
            W1Method::DiscreteTv => "tv",
            W1Method::Line => "line",
            W1Method::Circle => "circle",
            W1Method::ProductAdditive => "product",
            W1Method::Lp => "lp",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct W1Result {
    pub value: f64,
    pub method: W1Method,
}

/// Dispatches to the cheapest valid evaluation: discrete metrics via total
/// variation, a single line or circle coordinate via its closed form, the
/// additive form when the caller explicitly vouches that the measures are
/// product measures over the coordinates (l1 combine only), and the exact
/// solver otherwise. Supports are merged onto their union as needed.
pub fn w1_auto(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
    metric: &MetricDescriptor,
    assume_product: bool,
) -> Result<W1Result, ClosedFormError> {
    match metric {
        MetricDescriptor::Discrete { k } => {
            let (a, b) = crate::measures::union_support(m1, m2)?;
            Ok(W1Result {
                value: w1_discrete(&a, &b, *k)?,
                method: W1Method::DiscreteTv,
            })
        }
        MetricDescriptor::Line => {
            let (a, b) = crate::measures::union_support(m1, m2)?;
            Ok(W1Result {
                value: w1_line(&a, &b)?,
                method: W1Method::Line,
            })
        }
        MetricDescriptor::Circle { circumference } => {
            let (a, b) = crate::measures::union_support(m1, m2)?;
            Ok(W1Result {
                value: w1_circle(&a, &b, *circumference)?,
                method: W1Method::Circle,
            })
        }
        MetricDescriptor::Explicit { .. } => Ok(W1Result {
            value: w1_lp(m1, m2, metric)?.cost,
            method: W1Method::Lp,
        }),
        MetricDescriptor::Product { coords, combine } => {
            if coords.len() == 1 {
                return w1_auto(m1, m2, &coords[0], assume_product);
            }
            if assume_product {
                if *combine != Combine::L1 {
                    return Err(ClosedFormError::AdditiveNeedsL1);
                }
                let mut pairs = Vec::with_capacity(coords.len());
                for (i, d) in coords.iter().enumerate() {
                    pairs.push((
                        coordinate_marginal(m1, i)?,
                        coordinate_marginal(m2, i)?,
                        d.clone(),
                    ));
                }
                return Ok(W1Result {
                    value: w1_product_additive(&pairs)?,
                    method: W1Method::ProductAdditive,
                });
            }
            Ok(W1Result {
                value: w1_lp(m1, m2, metric)?.cost,
                method: W1Method::Lp,
            })
        }
    }
}

/// Equal-mass guard shared by the closed forms, re-exported for callers
/// that want the same tolerance ([`MASS_TOL`]).
pub fn masses_match(m1: &AtomicMeasure, m2: &AtomicMeasure) -> bool {
    (m1.total_mass() - m2.total_mass()).abs() <= MASS_TOL
        || (m1.is_probability() && m2.is_probability())
}
