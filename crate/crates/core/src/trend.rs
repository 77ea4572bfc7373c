//! Case-control trend statistics: Pearson chi-square, Cochran-Armitage
//! with arbitrary scores, the variance-ratio functional T behind both, its
//! generalization to weighted class measures, and the sandwich bounds that
//! pin the Pearson statistic between L1-norm quantities tied to the
//! transport distance of the class measures.

use std::sync::Arc;

use thiserror::Error;

use crate::measures::{shares_support, AtomicMeasure, MeasureError, PointSet};

/// Variance threshold below which scores count as constant.
pub const VARIANCE_EPS: f64 = 1e-14;
/// Tolerance on probability weights summing to 1.
pub const PROFILE_MASS_TOL: f64 = 1e-12;
/// Largest exactly representable integer count.
pub const MAX_COUNT: u64 = 1 << 53;

/// Genotype score presets: heterozygote effect half, full, or none.
pub const ADDITIVE_SCORES: [f64; 3] = [0.0, 0.5, 1.0];
pub const DOMINANT_SCORES: [f64; 3] = [0.0, 1.0, 1.0];
pub const RECESSIVE_SCORES: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Debug, Error)]
pub enum TrendError {
    #[error("case fraction {0} is degenerate (all cases or all controls)")]
    DegenerateMargin(f64),
    #[error("category {0} has no observations")]
    EmptyCategory(usize),
    #[error("need at least two categories with observations, found {0}")]
    TooFewCategories(usize),
    #[error("scores are constant over the observed categories")]
    ConstantScores,
    #[error("score variance under the profile weights is at most {VARIANCE_EPS}")]
    ZeroVariance,
    #[error("extreme densities coincide, no interior score exists")]
    DegenerateAlpha,
    #[error("expected {expected} scores, found {found}")]
    ScoreLengthMismatch { expected: usize, found: usize },
    #[error("profile weights sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("profile entry {index} is invalid: {message}")]
    BadProfileEntry { index: usize, message: String },
    #[error("count exceeds 2^53 and is not exactly representable")]
    CountTooLarge,
    #[error("three categories required, found {0}")]
    NotThreeCategories(usize),
    #[error("table line {line}: {message}")]
    MalformedTable { line: usize, message: String },
    #[error("discrete metric needs k > 0, got {0}")]
    NonpositiveK(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// A 2 x c case-control table. Categories with no observations are dropped
/// at construction (the count is kept for reporting).
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    cases: Vec<f64>,
    controls: Vec<f64>,
    totals: Vec<f64>,
    n: f64,
    p: f64,
    q: f64,
    dropped: usize,
}

impl ContingencyTable {
    pub fn new(cases: &[u64], controls: &[u64]) -> Result<Self, TrendError> {
        if cases.len() != controls.len() {
            return Err(TrendError::ScoreLengthMismatch {
                expected: cases.len(),
                found: controls.len(),
            });
        }
        let mut kept_cases = Vec::new();
        let mut kept_controls = Vec::new();
        let mut totals = Vec::new();
        let mut dropped = 0usize;
        for (&r, &s) in cases.iter().zip(controls) {
            if r > MAX_COUNT || s > MAX_COUNT {
                return Err(TrendError::CountTooLarge);
            }
            if r + s == 0 {
                dropped += 1;
                continue;
            }
            kept_cases.push(r as f64);
            kept_controls.push(s as f64);
            totals.push((r + s) as f64);
        }
        if totals.len() < 2 {
            return Err(TrendError::TooFewCategories(totals.len()));
        }
        let r: f64 = kept_cases.iter().sum();
        let n: f64 = totals.iter().sum();
        let p = r / n;
        Ok(Self {
            cases: kept_cases,
            controls: kept_controls,
            totals,
            n,
            p,
            q: 1.0 - p,
            dropped,
        })
    }

    pub fn categories(&self) -> usize {
        self.totals.len()
    }

    pub fn cases(&self) -> &[f64] {
        &self.cases
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Number of all-zero categories removed at construction.
    pub fn dropped_categories(&self) -> usize {
        self.dropped
    }

    fn check_margin(&self) -> Result<(), TrendError> {
        if self.p <= 0.0 || self.p >= 1.0 {
            return Err(TrendError::DegenerateMargin(self.p));
        }
        Ok(())
    }

    fn check_scores(&self, c: &[f64]) -> Result<(), TrendError> {
        if c.len() != self.totals.len() {
            return Err(TrendError::ScoreLengthMismatch {
                expected: self.totals.len(),
                found: c.len(),
            });
        }
        Ok(())
    }
}

/// Pearson chi-square in the Brandt-Snedecor form
/// (1/(pq)) sum n_i (p_i - p)^2 with p_i = r_i / n_i.
pub fn pearson_chi2(t: &ContingencyTable) -> Result<f64, TrendError> {
    t.check_margin()?;
    let mut acc = 0.0;
    for i in 0..t.categories() {
        if t.totals[i] <= 0.0 {
            return Err(TrendError::EmptyCategory(i));
        }
        let p_i = t.cases[i] / t.totals[i];
        acc += t.totals[i] * (p_i - t.p) * (p_i - t.p);
    }
    Ok(acc / (t.p * t.q))
}

/// Count-weighted mean of the scores.
fn score_mean(t: &ContingencyTable, c: &[f64]) -> f64 {
    c.iter()
        .zip(&t.totals)
        .map(|(&ci, &ni)| ci * ni)
        .sum::<f64>()
        / t.n
}

/// Slope of the least-squares fit of p_i on c_i with weights n_i:
/// b = sum n_i (p_i - p)(c_i - mean) / sum n_i (c_i - mean)^2.
pub fn catt_slope(t: &ContingencyTable, c: &[f64]) -> Result<f64, TrendError> {
    t.check_margin()?;
    t.check_scores(c)?;
    let c_bar = score_mean(t, c);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &ci) in c.iter().enumerate() {
        let p_i = t.cases[i] / t.totals[i];
        num += t.totals[i] * (p_i - t.p) * (ci - c_bar);
        den += t.totals[i] * (ci - c_bar) * (ci - c_bar);
    }
    if den <= VARIANCE_EPS {
        return Err(TrendError::ConstantScores);
    }
    Ok(num / den)
}

/// Cochran-Armitage trend statistic in ratio form:
/// (sum c_i (q r_i - p s_i))^2 / (n p q Var_n(c)), where Var_n is the
/// count-weighted score variance.
pub fn catt(t: &ContingencyTable, c: &[f64]) -> Result<f64, TrendError> {
    t.check_margin()?;
    t.check_scores(c)?;
    let mut num = 0.0;
    for (i, &ci) in c.iter().enumerate() {
        num += ci * (t.q * t.cases[i] - t.p * t.controls[i]);
    }
    let mean_sq: f64 = c
        .iter()
        .zip(&t.totals)
        .map(|(&ci, &ni)| ci * ci * ni)
        .sum::<f64>()
        / t.n;
    let mean = score_mean(t, c);
    let variance = mean_sq - mean * mean;
    if variance <= VARIANCE_EPS {
        return Err(TrendError::ConstantScores);
    }
    Ok((num * num) / (t.n * t.p * t.q * variance))
}

/// Splits the Pearson statistic into the trend part and the lack-of-fit
/// remainder: t_fit = (1/(pq)) sum n_i (p_i - (p + b (c_i - mean)))^2, and
/// catt + t_fit recovers pearson_chi2.
pub fn cochran_decompose(t: &ContingencyTable, c: &[f64]) -> Result<(f64, f64), TrendError> {
    let t_ca = catt(t, c)?;
    let b = catt_slope(t, c)?;
    let c_bar = score_mean(t, c);
    let mut acc = 0.0;
    for (i, &ci) in c.iter().enumerate() {
        let p_i = t.cases[i] / t.totals[i];
        let fitted = t.p + b * (ci - c_bar);
        acc += t.totals[i] * (p_i - fitted) * (p_i - fitted);
    }
    Ok((t_ca, acc / (t.p * t.q)))
}

/// Probability weights with a density value per atom.
#[derive(Debug, Clone)]
pub struct WeightedProfile {
    weights: Vec<f64>,
    alphas: Vec<f64>,
    p: f64,
}

impl WeightedProfile {
    pub fn new(weights: Vec<f64>, alphas: Vec<f64>) -> Result<Self, TrendError> {
        if weights.len() != alphas.len() {
            return Err(TrendError::ScoreLengthMismatch {
                expected: weights.len(),
                found: alphas.len(),
            });
        }
        let mut sum = 0.0;
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(TrendError::BadProfileEntry {
                    index,
                    message: format!("weight {w} must be finite and nonnegative"),
                });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > PROFILE_MASS_TOL {
            return Err(TrendError::NotNormalized(sum));
        }
        for (index, &a) in alphas.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(TrendError::BadProfileEntry {
                    index,
                    message: format!("density {a} must be finite and nonnegative"),
                });
            }
        }
        let p = weights.iter().zip(&alphas).map(|(&w, &a)| w * a).sum();
        Ok(Self {
            weights,
            alphas,
            p,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Mean density p = sum alpha_i mu_i.
    pub fn p(&self) -> f64 {
        self.p
    }
}

/// The variance-ratio functional
/// T(c, alpha) = (sum c_i (alpha_i - p) mu_i)^2 / Var_mu(c).
pub fn t_functional(c: &[f64], prof: &WeightedProfile) -> Result<f64, TrendError> {
    if c.len() != prof.len() {
        return Err(TrendError::ScoreLengthMismatch {
            expected: prof.len(),
            found: c.len(),
        });
    }
    let mean: f64 = c.iter().zip(prof.weights()).map(|(&ci, &w)| ci * w).sum();
    let mean_sq: f64 = c
        .iter()
        .zip(prof.weights())
        .map(|(&ci, &w)| ci * ci * w)
        .sum();
    let variance = mean_sq - mean * mean;
    if variance <= VARIANCE_EPS {
        return Err(TrendError::ZeroVariance);
    }
    let num: f64 = c
        .iter()
        .zip(prof.weights().iter().zip(prof.alphas()))
        .map(|(&ci, (&w, &a))| ci * (a - prof.p) * w)
        .sum();
    Ok(num * num / variance)
}

/// Supremum of the T functional over all non-constant scores:
/// sum (alpha_i - p)^2 mu_i. A constant density profile yields 0.
pub fn t_sup(prof: &WeightedProfile) -> f64 {
    prof.weights()
        .iter()
        .zip(prof.alphas())
        .map(|(&w, &a)| w * (a - prof.p) * (a - prof.p))
        .sum()
}

/// For a three-atom profile with densities sorted ascending, the interior
/// score of the maximizing vector (0, x*, 1):
/// x* = (alpha_1 - alpha_0) / (alpha_2 - alpha_0).
pub fn optimal_score_3pt(prof: &WeightedProfile) -> Result<f64, TrendError> {
    if prof.len() != 3 {
        return Err(TrendError::NotThreeCategories(prof.len()));
    }
    for (index, &w) in prof.weights().iter().enumerate() {
        if w <= 0.0 {
            return Err(TrendError::BadProfileEntry {
                index,
                message: "all three weights must be positive".to_string(),
            });
        }
    }
    let mut pairs: Vec<(f64, f64)> = prof
        .alphas()
        .iter()
        .zip(prof.weights())
        .map(|(&a, &w)| (a, w))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (a0, a1, a2) = (pairs[0].0, pairs[1].0, pairs[2].0);
    if a0 == a2 {
        return Err(TrendError::DegenerateAlpha);
    }
    Ok((a1 - a0) / (a2 - a0))
}

/// Shared setup for the generalized statistics: the mixture profile of two
/// raw class measures on one support. Atoms carrying no mass in either
/// class are dropped; `kept` maps profile entries back to support indices.
struct ClassProfile {
    profile: WeightedProfile,
    kept: Vec<usize>,
    n: f64,
    p_r: f64,
}

fn class_profile(mu_r: &AtomicMeasure, mu_s: &AtomicMeasure) -> Result<ClassProfile, TrendError> {
    if !shares_support(mu_r, mu_s) {
        return Err(TrendError::Measure(MeasureError::SupportMismatch));
    }
    let n = mu_r.total_mass() + mu_s.total_mass();
    if n <= 0.0 {
        return Err(TrendError::Measure(MeasureError::ZeroMass));
    }
    let p_r = mu_r.total_mass() / n;
    if p_r <= 0.0 || p_r >= 1.0 {
        return Err(TrendError::DegenerateMargin(p_r));
    }
    let mut weights = Vec::new();
    let mut alphas = Vec::new();
    let mut kept = Vec::new();
    for i in 0..mu_r.len() {
        let mass = mu_r.weight(i) + mu_s.weight(i);
        if mass <= 0.0 {
            continue;
        }
        weights.push(mass / n);
        alphas.push(mu_r.weight(i) / mass);
        kept.push(i);
    }
    let profile = WeightedProfile::new(weights, alphas)?;
    Ok(ClassProfile {
        profile,
        kept,
        n,
        p_r,
    })
}

/// Cochran-Armitage and Pearson statistics generalized to two raw class
/// measures: scale (n / (p_r p_s)) applied to the T functional at the class
/// density alpha_r, and to its supremum.
pub fn generalized_stats(
    mu_r: &AtomicMeasure,
    mu_s: &AtomicMeasure,
    c: &[f64],
) -> Result<(f64, f64), TrendError> {
    if c.len() != mu_r.len() {
        return Err(TrendError::ScoreLengthMismatch {
            expected: mu_r.len(),
            found: c.len(),
        });
    }
    let cp = class_profile(mu_r, mu_s)?;
    let c_kept: Vec<f64> = cp.kept.iter().map(|&i| c[i]).collect();
    let scale = cp.n / (cp.p_r * (1.0 - cp.p_r));
    let t_ca = scale * t_functional(&c_kept, &cp.profile)?;
    let t_chi2 = scale * t_sup(&cp.profile);
    Ok((t_ca, t_chi2))
}

/// Sandwich bounds around the generalized Pearson statistic, all scaled by
/// n / (p_r p_s), with g = alpha_r - p_r and norms under the mixture
/// weights: lower = |g|_1^2, stat = |g|_2^2, upper = |g|_inf |g|_1.
#[derive(Debug, Clone, Copy)]
pub struct Chi2Bounds {
    pub lower: f64,
    pub stat: f64,
    pub upper: f64,
    /// Exact W1 between the normalized class measures under the k-discrete
    /// metric, reported alongside the bounds for reference.
    pub w1_classes: f64,
}

pub fn kr_chi2_bounds(
    mu_r: &AtomicMeasure,
    mu_s: &AtomicMeasure,
    k: f64,
) -> Result<Chi2Bounds, TrendError> {
    if !k.is_finite() || k <= 0.0 {
        return Err(TrendError::NonpositiveK(k));
    }
    let cp = class_profile(mu_r, mu_s)?;
    let p_r = cp.p_r;
    let mut norm1 = 0.0;
    let mut norm2_sq = 0.0;
    let mut norm_inf = 0.0f64;
    for (&w, &a) in cp.profile.weights().iter().zip(cp.profile.alphas()) {
        let g = a - p_r;
        norm1 += g.abs() * w;
        norm2_sq += g * g * w;
        norm_inf = norm_inf.max(g.abs());
    }
    let scale = cp.n / (p_r * (1.0 - p_r));
    let (t_r, t_s) = (mu_r.total_mass(), mu_s.total_mass());
    let tv_classes: f64 = 0.5
        * (0..mu_r.len())
            .map(|i| (mu_r.weight(i) / t_r - mu_s.weight(i) / t_s).abs())
            .sum::<f64>();
    Ok(Chi2Bounds {
        lower: scale * norm1 * norm1,
        stat: scale * norm2_sq,
        upper: scale * norm_inf * norm1,
        w1_classes: k * tv_classes,
    })
}

/// Builds the raw class measures of a genotype table on the 1-dimensional
/// support {0, 1, ..., c-1}.
pub fn class_measures(
    cases: &[u64],
    controls: &[u64],
) -> Result<(AtomicMeasure, AtomicMeasure), TrendError> {
    if cases.len() != controls.len() {
        return Err(TrendError::ScoreLengthMismatch {
            expected: cases.len(),
            found: controls.len(),
        });
    }
    let points: Vec<Vec<f64>> = (0..cases.len()).map(|i| vec![i as f64]).collect();
    let support = Arc::new(PointSet::new(points).map_err(TrendError::Measure)?);
    let mu_r = AtomicMeasure::new(
        Arc::clone(&support),
        cases.iter().map(|&r| r as f64).collect(),
    )?;
    let mu_s = AtomicMeasure::new(support, controls.iter().map(|&s| s as f64).collect())?;
    Ok((mu_r, mu_s))
}

/// Case and control counts of one SNP, genotype categories 0, 1, 2.
pub type SnpCounts = ([u64; 3], [u64; 3]);

/// Parses the contingency-table text format: one SNP per line,
/// whitespace-separated `r0 r1 r2 s0 s1 s2`; blank lines and `#` comments
/// are skipped. Returns the raw count pairs in input order.
pub fn parse_snp_tables(text: &str) -> Result<Vec<SnpCounts>, TrendError> {
    let mut out = Vec::new();
    for (line_index, line) in text.lines().enumerate() {
        let line_no = line_index + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(TrendError::MalformedTable {
                line: line_no,
                message: format!("expected 6 counts, found {}", fields.len()),
            });
        }
        let mut values = [0u64; 6];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| TrendError::MalformedTable {
                line: line_no,
                message: format!("`{field}` is not a nonnegative integer"),
            })?;
        }
        out.push((
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
        ));
    }
    Ok(out)
}
