//! Parsers for genotype and labeled-sample inputs.
//!
//! The one-line-per-SNP genotype format carries five metadata fields
//! followed by three genotype probabilities per individual. A triple passes
//! quality control when its sum reaches the calling threshold; the genotype
//! of a passing triple is the argmax entry, with exact ties left uncalled.
//! Parsed datasets convert into selection problems by dropping individuals
//! with missing calls on the requested SNPs and building the class measures
//! from the survivors.

use std::collections::HashSet;

use csv::{ReaderBuilder, Trim};
use thiserror::Error;

use crate::metrics::{MetricDescriptor, MetricError};
use crate::select::{CriterionMode, SelectError, SelectionProblem};

/// Calling threshold used when none is given: a triple is called when its
/// probabilities sum to at least this value.
pub const DEFAULT_CALL_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed genotype line")]
    MalformedLine { line: usize },
    #[error("line {line}: expected {expected} individuals, found {found}")]
    InconsistentWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: negative probability {value}")]
    NegativeProbability { line: usize, value: f64 },
    #[error("malformed header")]
    MalformedHeader,
    #[error("line {line}: label must be -1 or +1")]
    BadLabel { line: usize },
    #[error("line {line}: malformed row")]
    MalformedRow { line: usize },
    #[error("input contains no samples")]
    EmptySample,
    #[error("SNP subset must be non-empty")]
    EmptySubset,
    #[error("SNP index {index} out of range for {snps} SNPs")]
    IndexOutOfRange { index: usize, snps: usize },
    #[error("SNP index {index} appears twice in the subset")]
    DuplicateIndex { index: usize },
    #[error("phenotype {label} at index {index} is not -1 or +1")]
    InvalidPhenotype { index: usize, label: i8 },
    #[error("expected {expected} phenotype entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("after dropping missing calls, only one class remains")]
    SingleClass,
    #[error("every individual is missing a call on the selected SNPs")]
    AllMissing,
    #[error("calling threshold must be a finite positive value, found {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Select(#[from] SelectError),
}

/// Metadata of one SNP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnpMeta {
    pub snp_id: String,
    pub rs_id: String,
    pub position: u64,
    pub allele_a: String,
    pub allele_b: String,
}

/// A called genotype matrix: `calls[individual][snp]` is the copy count of
/// allele B (0 = AA, 1 = AB, 2 = BB), or `None` when the triple failed
/// quality control or its argmax was tied.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeDataset {
    pub snp_meta: Vec<SnpMeta>,
    pub calls: Vec<Vec<Option<u8>>>,
    /// Fraction of triples whose probabilities summed to at least the
    /// calling threshold (tied triples count here even though their call is
    /// missing).
    pub call_rate: f64,
}

impl GenotypeDataset {
    pub fn snps(&self) -> usize {
        self.snp_meta.len()
    }

    pub fn individuals(&self) -> usize {
        self.calls.len()
    }
}

/// Parses the one-line-per-SNP genotype format: five metadata fields, then
/// three probabilities per individual. Blank lines and `#` comments are
/// skipped; line numbers in errors are 1-based over the raw text.
pub fn parse_gen(text: &str, threshold: f64) -> Result<GenotypeDataset, IngestError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(IngestError::BadThreshold(threshold));
    }
    let mut snp_meta = Vec::new();
    let mut by_snp: Vec<Vec<Option<u8>>> = Vec::new();
    let mut individuals: Option<usize> = None;
    let mut passed: u64 = 0;
    let mut total: u64 = 0;
    for (number, raw) in text.lines().enumerate() {
        let line = number + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 8 || !(fields.len() - 5).is_multiple_of(3) {
            return Err(IngestError::MalformedLine { line });
        }
        let found = (fields.len() - 5) / 3;
        let expected = *individuals.get_or_insert(found);
        if found != expected {
            return Err(IngestError::InconsistentWidth {
                line,
                expected,
                found,
            });
        }
        let position: u64 = fields[2]
            .parse()
            .map_err(|_| IngestError::MalformedLine { line })?;
        snp_meta.push(SnpMeta {
            snp_id: fields[0].to_string(),
            rs_id: fields[1].to_string(),
            position,
            allele_a: fields[3].to_string(),
            allele_b: fields[4].to_string(),
        });
        let mut row = Vec::with_capacity(found);
        for triple in fields[5..].chunks(3) {
            let mut probs = [0.0f64; 3];
            for (slot, field) in probs.iter_mut().zip(triple) {
                let value: f64 = field
                    .parse()
                    .map_err(|_| IngestError::MalformedLine { line })?;
                if !value.is_finite() {
                    return Err(IngestError::MalformedLine { line });
                }
                if value < 0.0 {
                    return Err(IngestError::NegativeProbability { line, value });
                }
                *slot = value;
            }
            total += 1;
            let sum = probs[0] + probs[1] + probs[2];
            row.push(if sum >= threshold {
                passed += 1;
                call_triple(&probs)
            } else {
                None
            });
        }
        by_snp.push(row);
    }
    let individuals = individuals.ok_or(IngestError::EmptySample)?;
    let mut calls = vec![Vec::with_capacity(by_snp.len()); individuals];
    for row in &by_snp {
        for (individual, &call) in row.iter().enumerate() {
            calls[individual].push(call);
        }
    }
    Ok(GenotypeDataset {
        snp_meta,
        calls,
        call_rate: passed as f64 / total as f64,
    })
}

/// Argmax genotype of a passing triple; an exact tie for the maximum yields
/// no call.
fn call_triple(probs: &[f64; 3]) -> Option<u8> {
    let max = probs[0].max(probs[1]).max(probs[2]);
    let hits: Vec<u8> = (0..3u8).filter(|&i| probs[i as usize] == max).collect();
    match hits.as_slice() {
        [only] => Some(*only),
        _ => None,
    }
}

/// How called genotypes become coordinates of a selection problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GenotypeEncoding {
    /// Each SNP is a category coordinate: distinct genotypes sit at mutual
    /// distance `k`.
    Discrete { k: f64 },
    /// Each SNP is a line coordinate with the genotypes at positions
    /// 0, 1, 2.
    Line,
}

/// Builds a selection problem from called genotypes and a phenotype vector.
///
/// Only the SNPs in `snp_subset` (sorted ascending) become coordinates;
/// individuals missing a call on any of them are dropped, so the class
/// measures are renormalized over the survivors.
pub fn to_selection_problem(
    ds: &GenotypeDataset,
    phenotype: &[i8],
    snp_subset: &[usize],
    encoding: GenotypeEncoding,
    k_target: usize,
    mode: CriterionMode,
) -> Result<SelectionProblem, IngestError> {
    if phenotype.len() != ds.individuals() {
        return Err(IngestError::LengthMismatch {
            expected: ds.individuals(),
            found: phenotype.len(),
        });
    }
    for (index, &label) in phenotype.iter().enumerate() {
        if label != 1 && label != -1 {
            return Err(IngestError::InvalidPhenotype { index, label });
        }
    }
    if snp_subset.is_empty() {
        return Err(IngestError::EmptySubset);
    }
    let mut subset = snp_subset.to_vec();
    subset.sort_unstable();
    for pair in subset.windows(2) {
        if pair[0] == pair[1] {
            return Err(IngestError::DuplicateIndex { index: pair[0] });
        }
    }
    if let Some(&max) = subset.last() {
        if max >= ds.snps() {
            return Err(IngestError::IndexOutOfRange {
                index: max,
                snps: ds.snps(),
            });
        }
    }
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<i8> = Vec::new();
    for (row, &label) in ds.calls.iter().zip(phenotype) {
        let mut point = Vec::with_capacity(subset.len());
        let mut complete = true;
        for &snp in &subset {
            match row[snp] {
                Some(call) => point.push(call as f64),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            points.push(point);
            labels.push(label);
        }
    }
    if points.is_empty() {
        return Err(IngestError::AllMissing);
    }
    let classes: HashSet<i8> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(IngestError::SingleClass);
    }
    let coords: Vec<MetricDescriptor> = match encoding {
        GenotypeEncoding::Discrete { k } => subset
            .iter()
            .map(|_| MetricDescriptor::discrete(k))
            .collect::<Result<_, _>>()?,
        GenotypeEncoding::Line => subset.iter().map(|_| MetricDescriptor::Line).collect(),
    };
    Ok(SelectionProblem::new(
        &points,
        &labels,
        coords,
        k_target,
        mode,
    )?)
}

/// Parses a labeled sample CSV with header `label,c1,...,cr` and labels
/// -1 or +1. Returns the coordinate vectors and their labels.
pub fn parse_labeled_csv(text: &str) -> Result<(Vec<Vec<f64>>, Vec<i8>), IngestError> {
    let mut reader = ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "label" {
        return Err(IngestError::MalformedHeader);
    }
    let r = headers.len() - 1;
    if r == 0 {
        return Err(IngestError::MalformedHeader);
    }
    for (i, name) in headers.iter().skip(1).enumerate() {
        if name != format!("c{}", i + 1) {
            return Err(IngestError::MalformedHeader);
        }
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(points.len() + 2);
        if record.len() != r + 1 {
            return Err(IngestError::MalformedRow { line });
        }
        labels.push(parse_label(&record[0]).ok_or(IngestError::BadLabel { line })?);
        let mut point = Vec::with_capacity(r);
        for field in record.iter().skip(1) {
            let value: f64 = field
                .parse()
                .map_err(|_| IngestError::MalformedRow { line })?;
            if !value.is_finite() {
                return Err(IngestError::MalformedRow { line });
            }
            point.push(value);
        }
        points.push(point);
    }
    if points.is_empty() {
        return Err(IngestError::EmptySample);
    }
    Ok((points, labels))
}

fn parse_label(field: &str) -> Option<i8> {
    match field {
        "1" | "+1" => Some(1),
        "-1" => Some(-1),
        _ => None,
    }
}

/// Parses a phenotype file: one label (-1 or +1) per line, blank lines and
/// `#` comments skipped.
pub fn parse_phenotype(text: &str) -> Result<Vec<i8>, IngestError> {
    let mut labels = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        labels.push(parse_label(trimmed).ok_or(IngestError::BadLabel { line: number + 1 })?);
    }
    if labels.is_empty() {
        return Err(IngestError::EmptySample);
    }
    Ok(labels)
}

/// Serializes called genotypes as CSV: one row per SNP with its metadata
/// followed by one call column per individual (`NA` for missing). The call
/// rate is kept in a leading comment so the dataset round-trips exactly.
pub fn write_calls_csv(ds: &GenotypeDataset) -> String {
    let mut out = String::new();
    out.push_str(&format!("# call_rate={}\n", ds.call_rate));
    out.push_str("snp_id,rs_id,position,allele_a,allele_b");
    for i in 0..ds.individuals() {
        out.push_str(&format!(",ind{}", i + 1));
    }
    out.push('\n');
    for (snp, meta) in ds.snp_meta.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}",
            meta.snp_id, meta.rs_id, meta.position, meta.allele_a, meta.allele_b
        ));
        for row in &ds.calls {
            match row[snp] {
                Some(call) => out.push_str(&format!(",{call}")),
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Reads the calls-CSV format written by [`write_calls_csv`].
pub fn parse_calls_csv(text: &str) -> Result<GenotypeDataset, IngestError> {
    let mut call_rate: Option<f64> = None;
    for raw in text.lines() {
        let trimmed = raw.trim();
        if let Some(rest) = trimmed.strip_prefix("# call_rate=") {
            call_rate = rest.trim().parse().ok();
        }
    }
    let mut reader = ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let expected = ["snp_id", "rs_id", "position", "allele_a", "allele_b"];
    if headers.len() < expected.len() + 1 {
        return Err(IngestError::MalformedHeader);
    }
    for (i, name) in expected.iter().enumerate() {
        if &headers[i] != *name {
            return Err(IngestError::MalformedHeader);
        }
    }
    let individuals = headers.len() - expected.len();
    let mut snp_meta = Vec::new();
    let mut by_snp: Vec<Vec<Option<u8>>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(snp_meta.len() + 2);
        if record.len() != headers.len() {
            return Err(IngestError::MalformedRow { line });
        }
        let position: u64 = record[2]
            .parse()
            .map_err(|_| IngestError::MalformedRow { line })?;
        snp_meta.push(SnpMeta {
            snp_id: record[0].to_string(),
            rs_id: record[1].to_string(),
            position,
            allele_a: record[3].to_string(),
            allele_b: record[4].to_string(),
        });
        let mut row = Vec::with_capacity(individuals);
        for field in record.iter().skip(expected.len()) {
            row.push(match field {
                "NA" => None,
                "0" => Some(0),
                "1" => Some(1),
                "2" => Some(2),
                _ => return Err(IngestError::MalformedRow { line }),
            });
        }
        by_snp.push(row);
    }
    if snp_meta.is_empty() {
        return Err(IngestError::EmptySample);
    }
    let mut calls = vec![Vec::with_capacity(by_snp.len()); individuals];
    for row in &by_snp {
        for (individual, &call) in row.iter().enumerate() {
            calls[individual].push(call);
        }
    }
    let called: u64 = calls
        .iter()
        .flatten()
        .filter(|call| call.is_some())
        .count() as u64;
    let total = (snp_meta.len() * individuals) as u64;
    Ok(GenotypeDataset {
        snp_meta,
        calls,
        call_rate: call_rate.unwrap_or(called as f64 / total as f64),
    })
}
