//! Input loading: weighted point files, encodings, and complete-case
//! extraction from genotype datasets.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use krselect_core::ingest::GenotypeDataset;
use krselect_core::measures::{AtomicMeasure, PointSet};
use krselect_core::metrics::MetricDescriptor;

use crate::Failure;

pub fn load(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Parses a measure CSV: header `w,c1,...,cr`, then one weight and point
/// per row. Blank lines and `#` comments are skipped; rows landing on the
/// same point are merged by summing their weights.
pub fn parse_measure_csv(text: &str) -> Result<AtomicMeasure, Failure> {
    let mut rows = text.lines().enumerate().filter(|(_, raw)| {
        let trimmed = raw.trim();
        !trimmed.is_empty() && !trimmed.starts_with('#')
    });
    let (_, header) = rows
        .next()
        .ok_or_else(|| Failure::Input("measure file is empty".to_string()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let header_ok = names.len() >= 2
        && names[0] == "w"
        && names[1..]
            .iter()
            .enumerate()
            .all(|(i, name)| *name == format!("c{}", i + 1));
    if !header_ok {
        return Err(Failure::Input(
            "measure header must be `w,c1,...,cr`".to_string(),
        ));
    }
    let dim = names.len() - 1;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for (number, raw) in rows {
        let line = number + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(Failure::Input(format!(
                "line {line}: expected {} fields, found {}",
                dim + 1,
                fields.len()
            )));
        }
        let mut values = Vec::with_capacity(fields.len());
        for field in &fields {
            let value: f64 = field
                .parse()
                .map_err(|_| Failure::Input(format!("line {line}: `{field}` is not a number")))?;
            if !value.is_finite() {
                return Err(Failure::Input(format!("line {line}: `{field}` is not finite")));
            }
            values.push(value);
        }
        let w = values[0];
        if w < 0.0 {
            return Err(Failure::Input(format!("line {line}: negative weight {w}")));
        }
        let point = values[1..].to_vec();
        let key: Vec<u64> = point
            .iter()
            .map(|&c| if c == 0.0 { 0.0f64 } else { c }.to_bits())
            .collect();
        match index.get(&key) {
            Some(&i) => weights[i] += w,
            None => {
                index.insert(key, points.len());
                points.push(point);
                weights.push(w);
            }
        }
    }
    if points.is_empty() {
        return Err(Failure::Input("measure file has no rows".to_string()));
    }
    let support = PointSet::new(points).map_err(|e| Failure::Input(e.to_string()))?;
    AtomicMeasure::new(Arc::new(support), weights).map_err(|e| Failure::Input(e.to_string()))
}

/// Per-SNP coordinate geometry chosen on the command line: `line`,
/// `discrete`, or `discrete:<k>`.
pub fn parse_encoding(spec: &str) -> Result<MetricDescriptor, Failure> {
    match spec {
        "line" => Ok(MetricDescriptor::Line),
        "discrete" => MetricDescriptor::discrete(1.0).map_err(|e| Failure::Input(e.to_string())),
        other => match other.strip_prefix("discrete:") {
            Some(rest) => {
                let k: f64 = rest.parse().map_err(|_| bad_encoding(other))?;
                MetricDescriptor::discrete(k).map_err(|e| Failure::Input(e.to_string()))
            }
            None => Err(bad_encoding(other)),
        },
    }
}

fn bad_encoding(spec: &str) -> Failure {
    Failure::Input(format!(
        "--encoding must be `line`, `discrete`, or `discrete:<k>`, found `{spec}`"
    ))
}

/// Individuals called on every SNP become labeled points (allele-B copy
/// counts as coordinates); the rest are dropped.
pub fn complete_cases(
    ds: &GenotypeDataset,
    phenotype: &[i8],
) -> Result<(Vec<Vec<f64>>, Vec<i8>), Failure> {
    if phenotype.len() != ds.individuals() {
        return Err(Failure::Input(format!(
            "expected {} phenotype entries, found {}",
            ds.individuals(),
            phenotype.len()
        )));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (row, &label) in ds.calls.iter().zip(phenotype) {
        let point: Option<Vec<f64>> = row.iter().map(|c| c.map(f64::from)).collect();
        if let Some(point) = point {
            points.push(point);
            labels.push(label);
        }
    }
    if points.is_empty() {
        return Err(Failure::Input(
            "every individual is missing a call on some SNP".to_string(),
        ));
    }
    Ok((points, labels))
}
