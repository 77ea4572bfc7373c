//! Ground-metric descriptors: discrete-k, the Euclidean line, circle
//! arc-length, explicit distance matrices, and l1/l-infinity products, with
//! distance evaluation, diameter, cost-matrix materialization, coordinate
//! projection, and a JSON config format.

use serde::Deserialize;
use thiserror::Error;

use crate::measures::PointSet;

/// Slack allowed when validating the triangle inequality of explicit
/// matrices and when certifying Lipschitz constants downstream.
pub const TRIANGLE_TOL: f64 = 1e-9;

/// Largest explicit matrix accepted (triangle validation is O(n^3)).
pub const MAX_EXPLICIT_POINTS: usize = 512;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("discrete metric needs k > 0, got {0}")]
    NonpositiveK(f64),
    #[error("circle metric needs circumference > 0, got {0}")]
    NonpositiveCircumference(f64),
    #[error("explicit matrix must be square, row {row} has {found} entries for {size} rows")]
    NotSquare {
        row: usize,
        found: usize,
        size: usize,
    },
    #[error("explicit matrix entry ({0}, {1}) is negative or not finite")]
    InvalidEntry(usize, usize),
    #[error("explicit matrix diagonal entry {0} is nonzero")]
    NonzeroDiagonal(usize),
    #[error("explicit matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("explicit matrix violates the triangle inequality at ({i}, {j}, {k}) by {excess}")]
    TriangleViolation {
        i: usize,
        j: usize,
        k: usize,
        excess: f64,
    },
    #[error("explicit matrix has {0} rows, at most {MAX_EXPLICIT_POINTS} are supported")]
    ExplicitTooLarge(usize),
    #[error("product metric needs at least one coordinate")]
    EmptyProduct,
    #[error("product coordinates must be single-coordinate descriptors")]
    NestedProduct,
    #[error("point has {found} coordinates, descriptor expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("explicit metric point {0} is not an index into the {1}-row matrix")]
    ExplicitIndex(f64, usize),
    #[error("projection subset is empty")]
    EmptySubset,
    #[error("projection index {index} out of range for {coords} coordinates")]
    IndexOutOfRange { index: usize, coords: usize },
    #[error("projection subset repeats index {0}")]
    DuplicateIndex(usize),
    #[error("projection applies to product descriptors only")]
    NotProduct,
    #[error("explicit matrices are allowed only as the sole coordinate")]
    ExplicitInProduct,
    #[error("metric config: {0}")]
    Config(String),
}

/// How a product metric combines per-coordinate distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    L1,
    LInf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricDescriptor {
    /// d(p, p) = 0 and d(p, q) = k for p != q.
    Discrete { k: f64 },
    /// Absolute difference of scalar positions.
    Line,
    /// Shorter arc between scalar positions on a circle of the given
    /// circumference; positions are reduced mod the circumference.
    Circle { circumference: f64 },
    /// Distances read from a validated symmetric matrix; points are matrix
    /// row indices stored as scalar coordinates.
    Explicit { matrix: Vec<Vec<f64>> },
    /// Per-coordinate descriptors combined by l1 sum or l-infinity max.
    Product {
        coords: Vec<MetricDescriptor>,
        combine: Combine,
    },
}

impl MetricDescriptor {
    pub fn discrete(k: f64) -> Result<Self, MetricError> {
        if !k.is_finite() || k <= 0.0 {
            return Err(MetricError::NonpositiveK(k));
        }
        Ok(Self::Discrete { k })
    }

    pub fn circle(circumference: f64) -> Result<Self, MetricError> {
        if !circumference.is_finite() || circumference <= 0.0 {
            return Err(MetricError::NonpositiveCircumference(circumference));
        }
        Ok(Self::Circle { circumference })
    }

    /// Validates symmetry, zero diagonal, nonnegativity, and the triangle
    /// inequality (within [`TRIANGLE_TOL`], eagerly, O(n^3)).
    pub fn explicit(matrix: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        let n = matrix.len();
        if n > MAX_EXPLICIT_POINTS {
            return Err(MetricError::ExplicitTooLarge(n));
        }
        for (row, r) in matrix.iter().enumerate() {
            if r.len() != n {
                return Err(MetricError::NotSquare {
                    row,
                    found: r.len(),
                    size: n,
                });
            }
        }
        for (i, row) in matrix.iter().enumerate() {
            if row[i] != 0.0 {
                return Err(MetricError::NonzeroDiagonal(i));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(MetricError::InvalidEntry(i, j));
                }
                if (v - matrix[j][i]).abs() > 0.0 {
                    return Err(MetricError::NotSymmetric(i, j));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let excess = matrix[i][j] - (matrix[i][k] + matrix[k][j]);
                    if excess > TRIANGLE_TOL {
                        return Err(MetricError::TriangleViolation { i, j, k, excess });
                    }
                }
            }
        }
        Ok(Self::Explicit { matrix })
    }

    /// Builds a product of single-coordinate descriptors. Explicit matrices
    /// are only accepted as the sole coordinate.
    pub fn product(coords: Vec<MetricDescriptor>, combine: Combine) -> Result<Self, MetricError> {
        if coords.is_empty() {
            return Err(MetricError::EmptyProduct);
        }
        for c in &coords {
            match c {
                MetricDescriptor::Product { .. } => return Err(MetricError::NestedProduct),
                MetricDescriptor::Explicit { .. } if coords.len() > 1 => {
                    return Err(MetricError::ExplicitInProduct)
                }
                _ => {}
            }
        }
        Ok(Self::Product { coords, combine })
    }

    /// Number of coordinates a point must have, or `None` when any length
    /// is accepted (the bare discrete metric compares whole vectors).
    pub fn expected_dim(&self) -> Option<usize> {
        match self {
            Self::Discrete { .. } => None,
            Self::Line | Self::Circle { .. } | Self::Explicit { .. } => Some(1),
            Self::Product { coords, .. } => Some(coords.len()),
        }
    }

    fn check_dim(&self, p: &[f64], q: &[f64]) -> Result<(), MetricError> {
        if p.len() != q.len() {
            return Err(MetricError::DimensionMismatch {
                expected: p.len(),
                found: q.len(),
            });
        }
        if let Some(expected) = self.expected_dim() {
            if p.len() != expected {
                return Err(MetricError::DimensionMismatch {
                    expected,
                    found: p.len(),
                });
            }
        }
        Ok(())
    }

    pub fn distance(&self, p: &[f64], q: &[f64]) -> Result<f64, MetricError> {
        self.check_dim(p, q)?;
        match self {
            Self::Discrete { k } => Ok(if p == q { 0.0 } else { *k }),
            Self::Line => Ok((p[0] - q[0]).abs()),
            Self::Circle { circumference } => {
                let a = p[0].rem_euclid(*circumference);
                let b = q[0].rem_euclid(*circumference);
                let arc = (a - b).abs();
                Ok(arc.min(circumference - arc))
            }
            Self::Explicit { matrix } => {
                let i = explicit_index(p[0], matrix.len())?;
                let j = explicit_index(q[0], matrix.len())?;
                Ok(matrix[i][j])
            }
            Self::Product { coords, combine } => {
                let mut acc = 0.0;
                for (i, d) in coords.iter().enumerate() {
                    let v = d.distance(&p[i..=i], &q[i..=i])?;
                    match combine {
                        Combine::L1 => acc += v,
                        Combine::LInf => acc = f64::max(acc, v),
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Maximum pairwise distance over a point set; 0 for a singleton.
    pub fn diameter(&self, ps: &PointSet) -> Result<f64, MetricError> {
        let mut best = 0.0f64;
        for i in 0..ps.len() {
            for j in (i + 1)..ps.len() {
                best = best.max(self.distance(ps.point(i), ps.point(j))?);
            }
        }
        Ok(best)
    }

    /// Materializes the matrix of distances between two point sets.
    pub fn cost_matrix(&self, ps1: &PointSet, ps2: &PointSet) -> Result<Vec<Vec<f64>>, MetricError> {
        let mut rows = Vec::with_capacity(ps1.len());
        for i in 0..ps1.len() {
            let mut row = Vec::with_capacity(ps2.len());
            for j in 0..ps2.len() {
                row.push(self.distance(ps1.point(i), ps2.point(j))?);
            }
            rows.push(row);
        }
        Ok(rows)
    }

    /// Restricts a product descriptor to the coordinates in `subset`
    /// (ascending index order), keeping the combine rule.
    pub fn project(&self, subset: &[usize]) -> Result<MetricDescriptor, MetricError> {
        let Self::Product { coords, combine } = self else {
            return Err(MetricError::NotProduct);
        };
        if subset.is_empty() {
            return Err(MetricError::EmptySubset);
        }
        let mut indices = subset.to_vec();
        indices.sort_unstable();
        for pair in indices.windows(2) {
            if pair[0] == pair[1] {
                return Err(MetricError::DuplicateIndex(pair[0]));
            }
        }
        let mut chosen = Vec::with_capacity(indices.len());
        for &i in &indices {
            if i >= coords.len() {
                return Err(MetricError::IndexOutOfRange {
                    index: i,
                    coords: coords.len(),
                });
            }
            chosen.push(coords[i].clone());
        }
        MetricDescriptor::product(chosen, *combine)
    }

    /// Reduces circle coordinates into [0, circumference); other
    /// coordinates pass through unchanged.
    pub fn canonicalize(&self, p: &[f64]) -> Result<Vec<f64>, MetricError> {
        if let Some(expected) = self.expected_dim() {
            if p.len() != expected {
                return Err(MetricError::DimensionMismatch {
                    expected,
                    found: p.len(),
                });
            }
        }
        match self {
            Self::Circle { circumference } => Ok(vec![p[0].rem_euclid(*circumference)]),
            Self::Product { coords, .. } => {
                let mut out = Vec::with_capacity(p.len());
                for (i, d) in coords.iter().enumerate() {
                    out.extend(d.canonicalize(&p[i..=i])?);
                }
                Ok(out)
            }
            _ => Ok(p.to_vec()),
        }
    }
}

fn explicit_index(x: f64, size: usize) -> Result<usize, MetricError> {
    if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && (x as usize) < size {
        Ok(x as usize)
    } else {
        Err(MetricError::ExplicitIndex(x, size))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricConfig {
    coords: Vec<CoordConfig>,
    #[serde(default)]
    combine: Option<String>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum CoordConfig {
    Discrete { k: f64 },
    Line,
    Circle { circumference: f64 },
    Explicit { matrix: Vec<Vec<f64>> },
}

/// Parses the JSON metric config, e.g.
/// `{"coords":[{"type":"discrete","k":1.0},{"type":"line"}],"combine":"l1"}`.
/// Single-coordinate spaces use a one-element coords list; the result is
/// always a product descriptor. The combine rule defaults to l1.
pub fn parse_metric_json(text: &str) -> Result<MetricDescriptor, MetricError> {
    let config: MetricConfig =
        serde_json::from_str(text).map_err(|e| MetricError::Config(e.to_string()))?;
    let combine = match config.combine.as_deref() {
        None | Some("l1") => Combine::L1,
        Some("linf") => Combine::LInf,
        Some(other) => {
            return Err(MetricError::Config(format!(
                "combine must be `l1` or `linf`, found `{other}`"
            )))
        }
    };
    let mut coords = Vec::with_capacity(config.coords.len());
    for c in config.coords {
        coords.push(match c {
            CoordConfig::Discrete { k } => MetricDescriptor::discrete(k)?,
            CoordConfig::Line => MetricDescriptor::Line,
            CoordConfig::Circle { circumference } => MetricDescriptor::circle(circumference)?,
            CoordConfig::Explicit { matrix } => MetricDescriptor::explicit(matrix)?,
        });
    }
    MetricDescriptor::product(coords, combine)
}
