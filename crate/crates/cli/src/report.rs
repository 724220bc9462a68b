//! Report envelope and its JSON / CSV encodings.


use serde::Serialize;
use serde_json::Value;

use crate::config::{Format, RunConfig};
use crate::error::{CliError, Result};

pub const TOOL: &str = "tps";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Seeds {
    pub run: u64,
    /// `None` when the input came from a fixture.
    pub input: Option<u64>,
    /// `None` when weights came from a file.
    pub weights: Option<u64>,
    pub schedule: u64,
}

impl Seeds {
    pub fn of(run: &RunConfig) -> Self {
        Self {
            run: run.seed,
            input: run.input_seed(),
            weights: run.weights.is_none().then_some(run.weights_seed),
            schedule: run.schedule.rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seeds: Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights_checksum: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub result: Value,
}

impl Report {
    pub fn new(command: &'static str, run: &RunConfig, result: impl Serialize) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            config_hash: run.hash(),
            seeds: Seeds::of(run),
            weights_checksum: None,
            warnings: Vec::new(),
            result: serde_json::to_value(result).expect("report serializes"),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["key", "value"]).expect("in-memory write");
        for (k, v) in flatten(&self.to_value()) {
            w.write_record([k, v]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

/// Dotted-path `(key, value)` pairs for every scalar leaf. Array elements use
/// their index as the path segment; null leaves render as an empty string.
pub fn flatten(v: &Value) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let join = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            Value::Object(map) => map.iter().for_each(|(k, v)| walk(&join(k), v, out)),
            Value::Array(items) => items
                .iter()
                .enumerate()
                .for_each(|(i, v)| walk(&join(&i.to_string()), v, out)),
            Value::Null => out.push((prefix.to_string(), String::new())),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out
}

/// Parses the CSV encoding back into `(key, value)` pairs.
pub fn parse_csv(text: &str) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Config(format!("bad report csv: {e}")))?;
            Ok((rec[0].to_string(), rec[1].to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flatten_paths() {
        let v = json!({"a": {"b": [1, 2.5]}, "c": null, "d": "x"});
        assert_eq!(
            flatten(&v),
            vec![
                ("a.b.0".into(), "1".into()),
                ("a.b.1".into(), "2.5".into()),
                ("c".into(), String::new()),
                ("d".into(), "x".into()),
            ]
        );
    }

    #[test]
    fn csv_round_trips_flattened_json() {
        let run = RunConfig::default();
        let r = Report::new("flops", &run, json!({"total": 4.6, "names": ["a,b", "c\"d"]}));
        assert_eq!(parse_csv(&r.to_csv()).unwrap(), flatten(&r.to_value()));
    }

    #[test]
    fn seeds_track_sources() {
        let mut run = RunConfig::default();
        run.seed = 3;
        assert_eq!(Seeds::of(&run).input, Some(3));
        assert_eq!(Seeds::of(&run).weights, Some(7));
        run.weights = Some("w.json".into());
        assert_eq!(Seeds::of(&run).weights, None);
    }
}
