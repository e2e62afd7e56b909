use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::config::Method;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown format {s:?} (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub probe_id: String,
    pub method: Method,
    pub descriptor: String,
    pub p_class1: f64,
    pub entropy_nats: f64,
    /// Per-row diagnostics; only written to JSON.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

/// An aggregate such as a mean entropy or an accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: Method,
    pub key: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub experiment: String,
    pub seed: u64,
    pub config_digest: String,
    /// Model name to git-style content hash of its serialized file.
    pub model_hashes: BTreeMap<String, String>,
    pub n_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
    pub summaries: Vec<Summary>,
}

impl UncertaintyReport {
    pub fn new(experiment: &str, seed: u64, config_digest: String) -> Self {
        Self {
            metadata: ReportMetadata {
                experiment: experiment.to_string(),
                seed,
                config_digest,
                model_hashes: BTreeMap::new(),
                n_rows: 0,
            },
            rows: Vec::new(),
            summaries: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: ReportRow) {
        self.rows.push(row);
        self.metadata.n_rows = self.rows.len();
    }

    pub fn summarize(&mut self, method: Method, key: impl Into<String>, value: f64) {
        self.summaries.push(Summary {
            method,
            key: key.into(),
            value,
        });
    }

    pub fn summary(&self, method: Method, key: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.key == key)
            .map(|s| s.value)
    }

    pub fn row(&self, method: Method, probe_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.probe_id == probe_id)
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Checks the row invariants: probabilities and entropies in range, entropy
    /// consistent with `p_class1`, rows unique by `(probe_id, method)`, and
    /// every method evaluated on the same probe ids.
    pub fn check(&self) -> Result<()> {
        use crate::numerics::binary_entropy;
        let ln2 = std::f64::consts::LN_2;
        let mut seen = std::collections::BTreeSet::new();
        let mut probes: BTreeMap<Method, Vec<&str>> = BTreeMap::new();
        for r in &self.rows {
            if !(0.0..=1.0).contains(&r.p_class1) {
                return Err(Error::Numerical(format!(
                    "{} {}: p_class1 {}",
                    r.method, r.probe_id, r.p_class1
                )));
            }
            if !(0.0..=ln2 + 1e-12).contains(&r.entropy_nats) {
                return Err(Error::Numerical(format!(
                    "{} {}: entropy {}",
                    r.method, r.probe_id, r.entropy_nats
                )));
            }
            if (binary_entropy(r.p_class1) - r.entropy_nats).abs() > 1e-9 {
                return Err(Error::Numerical(format!(
                    "{} {}: entropy {} disagrees with p_class1 {}",
                    r.method, r.probe_id, r.entropy_nats, r.p_class1
                )));
            }
            if !seen.insert((r.method, r.probe_id.as_str())) {
                return Err(Error::Numerical(format!("duplicate row {} {}", r.method, r.probe_id)));
            }
            probes.entry(r.method).or_default().push(&r.probe_id);
        }
        let mut sets = probes.into_values().map(|mut v| {
            v.sort_unstable();
            v
        });
        if let Some(first) = sets.next() {
            if sets.any(|s| s != first) {
                return Err(Error::Numerical("methods were evaluated on different probes".into()));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("probe_id,method,descriptor,p_class1,entropy_nats\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.probe_id,
                r.method,
                r.descriptor,
                fmt_sig(r.p_class1),
                fmt_sig(r.entropy_nats)
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        round_numbers(&mut value);
        let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Formats with 9 significant digits: fixed notation for moderate
/// magnitudes, exponent notation otherwise, trailing zeros removed.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn round_numbers(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            let r: f64 = fmt_sig(x).parse().expect("formatted float parses");
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

pub fn write_report(r: &UncertaintyReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => r.to_csv(),
        ReportFormat::Json => r.to_json(),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
