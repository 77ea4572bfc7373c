//! Finitely supported (atomic) measures on an indexed point set:
//! normalization, pushforward, empirical construction from samples, and
//! total-variation distance with the 1/2 convention.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

/// Tolerance for probability-mass and equal-mass comparisons.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("point set must contain at least one point")]
    EmptySupport,
    #[error("point {0} repeats point {1}; support points must be distinct")]
    DuplicatePoint(usize, usize),
    #[error("point {index} has {found} coordinates, expected {expected}")]
    DimensionMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("coordinate {coord} of point {index} is not finite")]
    NonFiniteCoordinate { index: usize, coord: usize },
    #[error("weight {index} is {value}, weights must be finite and nonnegative")]
    InvalidWeight { index: usize, value: f64 },
    #[error("expected {expected} weights for the support, found {found}")]
    WeightLengthMismatch { expected: usize, found: usize },
    #[error("measure has zero total mass")]
    ZeroMass,
    #[error("measures live on different point sets")]
    SupportMismatch,
    #[error("total masses {0} and {1} differ beyond tolerance")]
    MassMismatch(f64, f64),
    #[error("pushforward map sends index {from} to {target}, outside the target support of size {size}")]
    InvalidTargetIndex {
        from: usize,
        target: usize,
        size: usize,
    },
    #[error("pushforward map covers {found} indices, support has {expected}")]
    MapLengthMismatch { expected: usize, found: usize },
    #[error("empirical sample is empty")]
    EmptySample,
    #[error("empirical mass must be positive, got {0}")]
    NonpositiveMass(f64),
    #[error("malformed measure CSV header: {0}")]
    MalformedHeader(String),
    #[error("measure CSV row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Bitwise key of a coordinate vector, used for exact duplicate detection.
/// Negative zero is folded onto positive zero so numerically equal points
/// cannot sneak in as distinct support atoms.
fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter()
        .map(|&c| if c == 0.0 { 0.0f64 } else { c }.to_bits())
        .collect()
}

/// An ordered list of distinct points in an r-dimensional coordinate space.
/// Coordinate interpretation (line position, circle position, category
/// index, ...) is delegated to the metric descriptor paired with the set.
#[derive(Debug, Clone)]
pub struct PointSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl PartialEq for PointSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| point_key(a) == point_key(b))
    }
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, MeasureError> {
        let dim = match points.first() {
            Some(p) => p.len(),
            None => return Err(MeasureError::EmptySupport),
        };
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(points.len());
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(MeasureError::DimensionMismatch {
                    index,
                    found: p.len(),
                    expected: dim,
                });
            }
            for (coord, &c) in p.iter().enumerate() {
                if !c.is_finite() {
                    return Err(MeasureError::NonFiniteCoordinate { index, coord });
                }
            }
            if let Some(&first) = seen.get(&point_key(p)) {
                return Err(MeasureError::DuplicatePoint(index, first));
            }
            seen.insert(point_key(p), index);
        }
        Ok(Self { points, dim })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// A measure `Σ w_i δ_{x_i}` with nonnegative weights on a shared point set.
#[derive(Debug, Clone)]
pub struct AtomicMeasure {
    support: Arc<PointSet>,
    weights: Vec<f64>,
    total_mass: f64,
}

impl AtomicMeasure {
    pub fn new(support: Arc<PointSet>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if weights.len() != support.len() {
            return Err(MeasureError::WeightLengthMismatch {
                expected: support.len(),
                found: weights.len(),
            });
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(MeasureError::InvalidWeight { index, value: w });
            }
        }
        let total_mass = weights.iter().sum();
        Ok(Self {
            support,
            weights,
            total_mass,
        })
    }

    pub fn support(&self) -> &Arc<PointSet> {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass - 1.0).abs() <= MASS_TOL
    }

    /// Rescales to total mass 1.
    pub fn normalize(&self) -> Result<AtomicMeasure, MeasureError> {
        if self.total_mass <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        let weights = self.weights.iter().map(|w| w / self.total_mass).collect();
        AtomicMeasure::new(Arc::clone(&self.support), weights)
    }
}

/// Whether two measures are indexed by the same point set (pointer or
/// structural equality).
pub fn shares_support(m1: &AtomicMeasure, m2: &AtomicMeasure) -> bool {
    Arc::ptr_eq(&m1.support, &m2.support) || m1.support == m2.support
}

/// Both probability measures, or equal total mass within [`MASS_TOL`].
pub(crate) fn check_equal_mass(m1: &AtomicMeasure, m2: &AtomicMeasure) -> Result<(), MeasureError> {
    let both_probability = m1.is_probability() && m2.is_probability();
    if !both_probability && (m1.total_mass - m2.total_mass).abs() > MASS_TOL {
        return Err(MeasureError::MassMismatch(m1.total_mass, m2.total_mass));
    }
    Ok(())
}

/// Total-variation distance `(1/2) Σ |w1_i - w2_i|` between two measures on
/// one point set. Both must be probability measures or carry equal mass.
pub fn tv_distance(m1: &AtomicMeasure, m2: &AtomicMeasure) -> Result<f64, MeasureError> {
    if !shares_support(m1, m2) {
        return Err(MeasureError::SupportMismatch);
    }
    check_equal_mass(m1, m2)?;
    let sum: f64 = m1
        .weights
        .iter()
        .zip(&m2.weights)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(0.5 * sum)
}

/// Transports each atom `i` to `target[map[i]]`, accumulating weights of
/// coinciding images. Summation runs left to right over source indices, so
/// total mass is preserved exactly.
pub fn pushforward(
    m: &AtomicMeasure,
    map: &[usize],
    target: Arc<PointSet>,
) -> Result<AtomicMeasure, MeasureError> {
    if map.len() != m.len() {
        return Err(MeasureError::MapLengthMismatch {
            expected: m.len(),
            found: map.len(),
        });
    }
    let mut weights = vec![0.0; target.len()];
    for (from, (&image, &w)) in map.iter().zip(&m.weights).enumerate() {
        if image >= target.len() {
            return Err(MeasureError::InvalidTargetIndex {
                from,
                target: image,
                size: target.len(),
            });
        }
        weights[image] += w;
    }
    AtomicMeasure::new(target, weights)
}

/// Builds the empirical measure of a sample: every sample point contributes
/// `mass / sample_size`, and bitwise-identical coordinate vectors are merged
/// (first-occurrence order is kept).
pub fn empirical_from_sample(
    sample: &[Vec<f64>],
    mass: f64,
) -> Result<(Arc<PointSet>, AtomicMeasure), MeasureError> {
    if sample.is_empty() {
        return Err(MeasureError::EmptySample);
    }
    if !mass.is_finite() || mass <= 0.0 {
        return Err(MeasureError::NonpositiveMass(mass));
    }
    let per_point = mass / sample.len() as f64;
    let mut order: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut index_of: HashMap<Vec<u64>, usize> = HashMap::new();
    for p in sample {
        match index_of.get(&point_key(p)) {
            Some(&i) => weights[i] += per_point,
            None => {
                index_of.insert(point_key(p), order.len());
                order.push(p.clone());
                weights.push(per_point);
            }
        }
    }
    let support = Arc::new(PointSet::new(order)?);
    let measure = AtomicMeasure::new(Arc::clone(&support), weights)?;
    Ok((support, measure))
}

/// Reindexes two measures onto the union of their supports (first measure's
/// points first, then the second's new points), padding missing atoms with
/// weight zero. The returned measures share one point set.
pub fn union_support(
    m1: &AtomicMeasure,
    m2: &AtomicMeasure,
) -> Result<(AtomicMeasure, AtomicMeasure), MeasureError> {
    if shares_support(m1, m2) {
        return Ok((m1.clone(), m2.clone()));
    }
    if m1.support.dim() != m2.support.dim() {
        return Err(MeasureError::DimensionMismatch {
            index: 0,
            found: m2.support.dim(),
            expected: m1.support.dim(),
        });
    }
    let mut points: Vec<Vec<f64>> = m1.support.points().to_vec();
    let mut index_of: HashMap<Vec<u64>, usize> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (point_key(p), i))
        .collect();
    let mut map2 = Vec::with_capacity(m2.len());
    for p in m2.support.points() {
        let next = points.len();
        let i = *index_of.entry(point_key(p)).or_insert_with(|| {
            points.push(p.clone());
            next
        });
        map2.push(i);
    }
    let union = Arc::new(PointSet::new(points)?);
    let mut w1 = vec![0.0; union.len()];
    w1[..m1.len()].copy_from_slice(&m1.weights);
    let mut w2 = vec![0.0; union.len()];
    for (source, &i) in map2.iter().enumerate() {
        w2[i] += m2.weights[source];
    }
    Ok((
        AtomicMeasure::new(Arc::clone(&union), w1)?,
        AtomicMeasure::new(union, w2)?,
    ))
}

/// Parses the measure CSV format: header `weight,c1,...,cr`, one row per
/// support point, `#`-prefixed comment lines ignored.
pub fn parse_measure_csv(text: &str) -> Result<(PointSet, Vec<f64>), MeasureError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let fields: Vec<&str> = headers.iter().collect();
    if fields.is_empty() || fields[0] != "weight" {
        return Err(MeasureError::MalformedHeader(format!(
            "first column must be `weight`, found `{}`",
            fields.first().unwrap_or(&"")
        )));
    }
    for (i, name) in fields.iter().enumerate().skip(1) {
        let expected = format!("c{i}");
        if *name != expected {
            return Err(MeasureError::MalformedHeader(format!(
                "column {} must be `{expected}`, found `{name}`",
                i + 1
            )));
        }
    }
    let dim = fields.len() - 1;
    if dim == 0 {
        return Err(MeasureError::MalformedHeader(
            "at least one coordinate column is required".to_string(),
        ));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_index + 2; // 1-based, after the header line
        if record.len() != dim + 1 {
            return Err(MeasureError::MalformedRow {
                row,
                message: format!("expected {} fields, found {}", dim + 1, record.len()),
            });
        }
        let mut values = Vec::with_capacity(dim + 1);
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| MeasureError::MalformedRow {
                row,
                message: format!("`{field}` is not a number"),
            })?;
            values.push(v);
        }
        weights.push(values[0]);
        points.push(values[1..].to_vec());
    }
    if points.is_empty() {
        return Err(MeasureError::EmptySupport);
    }
    let support = PointSet::new(points)?;
    Ok((support, weights))
}

/// Serializes a support and weight vector to the measure CSV format.
pub fn write_measure_csv(support: &PointSet, weights: &[f64]) -> String {
    let mut out = String::from("weight");
    for i in 1..=support.dim() {
        out.push_str(&format!(",c{i}"));
    }
    out.push('\n');
    for (p, w) in support.points().iter().zip(weights) {
        out.push_str(&format!("{w}"));
        for c in p {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    out
}
