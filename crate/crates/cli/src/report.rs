//! Deterministic run reports: sorted keys, one canonical representation per
//! number, no timestamps. Identical inputs and flags must render to
//! identical bytes.

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Rounds to twelve significant digits so every reported number has one
/// canonical printed form.
pub fn sig12(x: f64) -> f64 {
    format!("{x:.11e}")
        .parse()
        .expect("scientific notation round-trips")
}

/// JSON number carrying the canonical twelve-digit value. Non-finite values
/// degrade to strings instead of poisoning the whole report.
pub fn num(x: f64) -> Value {
    let rounded = sig12(x);
    serde_json::Number::from_f64(rounded)
        .map(Value::Number)
        .unwrap_or_else(|| Value::String(format!("{rounded}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut acc, byte| {
            acc.push_str(&format!("{byte:02x}"));
            acc
        })
}

/// One command invocation: the echoed argument vector, digests of every
/// input file, the result object, and accumulated warnings.
pub struct Report {
    command: String,
    argv: Vec<String>,
    inputs: Map<String, Value>,
    results: Value,
    warnings: Vec<String>,
}

impl Report {
    pub fn new(command: &str, argv: &[String]) -> Report {
        Report {
            command: command.to_string(),
            argv: argv.to_vec(),
            inputs: Map::new(),
            results: Value::Null,
            warnings: Vec::new(),
        }
    }

    /// Records the SHA-256 digest of one input file.
    pub fn digest(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(
            name.to_string(),
            Value::String(format!("sha256:{}", sha256_hex(bytes))),
        );
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn set_results(&mut self, results: Value) {
        self.results = results;
    }

    fn value(&self) -> Value {
        let mut root = Map::new();
        root.insert(
            "argv".to_string(),
            Value::Array(self.argv.iter().cloned().map(Value::String).collect()),
        );
        root.insert("command".to_string(), Value::String(self.command.clone()));
        root.insert("inputs".to_string(), Value::Object(self.inputs.clone()));
        root.insert("results".to_string(), self.results.clone());
        root.insert(
            "warnings".to_string(),
            Value::Array(self.warnings.iter().cloned().map(Value::String).collect()),
        );
        Value::Object(root)
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn render_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.value()).expect("report serializes");
        out.push('\n');
        out
    }

    /// Flat `path: value` lines in key order.
    pub fn render_human(&self) -> String {
        let mut out = String::new();
        flatten("", &self.value(), &mut out);
        out
    }
}

fn flatten(path: &str, value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            for (key, child) in map {
                let next = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                flatten(&next, child, out);
            }
        }
        Value::Array(items) if items.iter().any(Value::is_object) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{path}[{i}]"), child, out);
            }
        }
        Value::Array(items) => {
            let joined: Vec<String> = items.iter().map(render_scalar).collect();
            out.push_str(&format!("{path}: [{}]\n", joined.join(", ")));
        }
        other => {
            out.push_str(&format!("{path}: {}\n", render_scalar(other)));
        }
    }
}

fn render_scalar(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
