//! Layer-sweep configuration: blank-line-separated records of `key=value`
//! lines describing which dense layers are replaced, by which structure, and
//! how to benchmark them.
//!
//! Recognized keys: `model`, `layer`, `i`, `o`, `method`, `r`, `b`, `count`,
//! `n`, `bench`. `count` (default 1) is how many times the layer occurs in
//! the network — it weights parameter totals, not benchmark repetitions.
//! `bench=false` keeps a record in compression accounting but skips timing.
//! Unknown keys, duplicate keys, missing required keys and divisibility
//! violations are all reported with line numbers.

use blr_core::formats::{param_count, Method, WorkloadSpec};

use crate::{Error, Result};

/// The layer set shipped with the harness (see `data/default_layers.cfg`).
pub const DEFAULT_CONFIG: &str = include_str!("../data/default_layers.cfg");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerConfig {
    pub model: String,
    pub layer: String,
    pub i: usize,
    pub o: usize,
    pub method: Method,
    pub r: usize,
    pub b: usize,
    pub count: usize,
    pub n: usize,
    pub bench: bool,
    /// First line of the record in the source file, for diagnostics.
    pub line: usize,
}

impl LayerConfig {
    /// The workload this record describes, optionally at an overridden
    /// batch size.
    pub fn workload(&self, n_override: Option<usize>) -> Result<WorkloadSpec> {
        let n = n_override.unwrap_or(self.n);
        WorkloadSpec::new(self.method, n, self.i, self.o, self.r, self.b).map_err(|e| {
            Error::Config {
                line: self.line,
                msg: e.to_string(),
            }
        })
    }

    /// Parameters of the dense layer this record replaces, times `count`.
    pub fn dense_params(&self) -> u64 {
        (self.i as u64) * (self.o as u64) * self.count as u64
    }

    /// Parameters of the structured replacement, times `count`.
    pub fn structured_params(&self) -> Result<u64> {
        let spec = self.workload(None)?;
        Ok(param_count(&spec).map_err(Error::Core)? * self.count as u64)
    }
}

pub fn parse_config(text: &str) -> Result<Vec<LayerConfig>> {
    let mut records = Vec::new();
    let mut fields: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !fields.is_empty() {
                records.push(finish_record(std::mem::take(&mut fields))?);
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: lineno,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        fields.push((lineno, key.trim().to_string(), value.trim().to_string()));
    }
    if !fields.is_empty() {
        records.push(finish_record(fields)?);
    }
    Ok(records)
}

fn finish_record(fields: Vec<(usize, String, String)>) -> Result<LayerConfig> {
    let start = fields[0].0;
    let err = |line: usize, msg: String| Error::Config { line, msg };

    let mut model = None;
    let mut layer = None;
    let mut i = None;
    let mut o = None;
    let mut method = None;
    let mut r = None;
    let mut b = None;
    let mut count = None;
    let mut n = None;
    let mut bench = None;

    fn set<T>(slot: &mut Option<T>, v: T, key: &str, line: usize) -> Result<()> {
        if slot.is_some() {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key '{key}' in record"),
            });
        }
        *slot = Some(v);
        Ok(())
    }
    fn num(v: &str, key: &str, line: usize) -> Result<usize> {
        v.parse().map_err(|_| Error::Config {
            line,
            msg: format!("key '{key}' needs a non-negative integer, got '{v}'"),
        })
    }

    for (line, key, value) in &fields {
        let (line, value) = (*line, value.as_str());
        match key.as_str() {
            "model" => set(&mut model, value.to_string(), key, line)?,
            "layer" => set(&mut layer, value.to_string(), key, line)?,
            "i" => set(&mut i, num(value, key, line)?, key, line)?,
            "o" => set(&mut o, num(value, key, line)?, key, line)?,
            "method" => {
                let m = Method::parse(value).map_err(|e| err(line, e.to_string()))?;
                set(&mut method, m, key, line)?;
            }
            "r" => set(&mut r, num(value, key, line)?, key, line)?,
            "b" => set(&mut b, num(value, key, line)?, key, line)?,
            "count" => set(&mut count, num(value, key, line)?, key, line)?,
            "n" => set(&mut n, num(value, key, line)?, key, line)?,
            "bench" => {
                let v = match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(err(
                            line,
                            format!("key 'bench' needs true or false, got '{other}'"),
                        ))
                    }
                };
                set(&mut bench, v, key, line)?;
            }
            other => return Err(err(line, format!("unknown key '{other}'"))),
        }
    }

    let require = |name: &str| err(start, format!("record is missing required key '{name}'"));
    let rec = LayerConfig {
        model: model.ok_or_else(|| require("model"))?,
        layer: layer.ok_or_else(|| require("layer"))?,
        i: i.ok_or_else(|| require("i"))?,
        o: o.ok_or_else(|| require("o"))?,
        method: method.ok_or_else(|| require("method"))?,
        r: r.unwrap_or(0),
        b: b.unwrap_or(0),
        count: count.unwrap_or(1),
        n: n.ok_or_else(|| require("n"))?,
        bench: bench.unwrap_or(true),
        line: start,
    };
    // Surface shape mistakes (divisibility, missing rank) at parse time.
    rec.workload(None)?;
    Ok(rec)
}

/// Compression factor of one (model, method) group: replaced dense
/// parameters over structured parameters, each weighted by layer count.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionFactor {
    pub model: String,
    pub method: Method,
    pub dense_params: u64,
    pub structured_params: u64,
}

impl CompressionFactor {
    pub fn factor(&self) -> f64 {
        self.dense_params as f64 / self.structured_params as f64
    }
}

/// Aggregate compression factors per (model, method), in first-seen order.
/// Includes `bench=false` records: they are still replaced layers.
pub fn compression_factors(records: &[LayerConfig]) -> Result<Vec<CompressionFactor>> {
    let mut out: Vec<CompressionFactor> = Vec::new();
    for rec in records {
        let structured = rec.structured_params()?;
        match out
            .iter_mut()
            .find(|c| c.model == rec.model && c.method == rec.method)
        {
            Some(c) => {
                c.dense_params += rec.dense_params();
                c.structured_params += structured;
            }
            None => out.push(CompressionFactor {
                model: rec.model.clone(),
                method: rec.method,
                dense_params: rec.dense_params(),
                structured_params: structured,
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_multi_record_text() {
        let text = "\
# a comment
model=tiny
layer=proj
i=8
o=8
method=lowrank
r=2
n=4

model=tiny
layer=mlp
i=8
o=16
method=blast
r=4
b=2
count=3
n=4
bench=false
";
        let recs = parse_config(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].layer, "proj");
        assert_eq!(recs[0].count, 1);
        assert!(recs[0].bench);
        assert_eq!(recs[0].line, 2);
        assert_eq!(recs[1].method, Method::Blast);
        assert_eq!(recs[1].count, 3);
        assert!(!recs[1].bench);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys_with_lines() {
        let bad = "model=m\nlayer=l\ni=8\no=8\nmethod=dense\nn=4\nwidth=3\n";
        match parse_config(bad) {
            Err(Error::Config { line: 7, msg }) => assert!(msg.contains("width")),
            other => panic!("{other:?}"),
        }
        let dup = "model=m\nmodel=m2\n";
        match parse_config(dup) {
            Err(Error::Config { line: 2, msg }) => assert!(msg.contains("duplicate")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_missing_keys_and_bad_shapes_citing_record_start() {
        let missing = "model=m\nlayer=l\ni=8\no=8\nmethod=lowrank\nr=2\n"; // no n
        match parse_config(missing) {
            Err(Error::Config { line: 1, msg }) => assert!(msg.contains("'n'")),
            other => panic!("{other:?}"),
        }
        let indivisible = "\nmodel=m\nlayer=l\ni=10\no=8\nmethod=blast\nr=2\nb=4\nn=4\n";
        match parse_config(indivisible) {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shipped_config_parses_and_matches_catalog() {
        let recs = parse_config(DEFAULT_CONFIG).unwrap();
        assert_eq!(recs.len(), 45);
        let models: Vec<&str> = {
            let mut m: Vec<&str> = recs.iter().map(|r| r.model.as_str()).collect();
            m.dedup();
            m
        };
        assert_eq!(
            models,
            ["llama7b", "llama3.2-1b", "gpt2-s", "vit-b", "dit-xl2"]
        );
        // Attention projection group of the largest model, all three methods.
        let qkvo: Vec<_> = recs
            .iter()
            .filter(|r| r.model == "llama7b" && r.layer == "qkvo_proj")
            .collect();
        assert_eq!(qkvo.len(), 3);
        for rec in &qkvo {
            assert_eq!((rec.i, rec.o, rec.count, rec.n), (4096, 4096, 128, 512));
            assert_eq!(rec.r, 1024);
        }
        // Single-token conditioning layers are excluded from timing runs.
        assert!(recs
            .iter()
            .filter(|r| r.layer == "adaln_proj")
            .all(|r| !r.bench));
        // No Monarch variant is shipped for the diffusion model.
        assert!(!recs
            .iter()
            .any(|r| r.model == "dit-xl2" && r.method == Method::Monarch));
    }

    #[test]
    fn llama7b_compression_factors_near_two() {
        let recs = parse_config(DEFAULT_CONFIG).unwrap();
        let cfs = compression_factors(&recs).unwrap();
        for method in [Method::LowRank, Method::Monarch, Method::Blast] {
            let cf = cfs
                .iter()
                .find(|c| c.model == "llama7b" && c.method == method)
                .unwrap();
            assert!(
                (cf.factor() - 2.0).abs() / 2.0 <= 0.05,
                "{method:?}: {}",
                cf.factor()
            );
        }
    }
}
