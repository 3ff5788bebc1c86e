//! CSV output for benchmark runs. One row per (layer record, compute path),
//! carrying measured time, counted traffic, and the analytic model columns
//! side by side.

use std::io::{self, Write};

use blr_core::exec::PathId;
use blr_core::formats::Method;
use blr_core::roofline::BoundClass;

pub const CSV_HEADER: &str = "model,layer,method,path,n,i,o,r,b,time_median_s,\
flops_counted,flops_modeled,bytes_intermediate_counted,bytes_modeled,\
alpha_modeled,bound,est_runtime_s,speedup_vs_dense,oracle_maxrelerr";

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub model: String,
    pub layer: String,
    pub method: Method,
    pub path: PathId,
    pub n: usize,
    pub i: usize,
    pub o: usize,
    pub r: usize,
    pub b: usize,
    pub time_median_s: f64,
    pub flops_counted: u64,
    pub flops_modeled: u64,
    pub bytes_intermediate_counted: u64,
    pub bytes_modeled: u64,
    pub alpha_modeled: f64,
    pub bound: BoundClass,
    pub est_runtime_s: f64,
    /// Dense median over this path's median; absent when the dense
    /// baseline is disabled.
    pub speedup_vs_dense: Option<f64>,
    pub oracle_maxrelerr: f64,
}

/// Quotes a field only when it needs it (comma, quote or newline inside),
/// doubling embedded quotes.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        let speedup = match self.speedup_vs_dense {
            Some(v) => format!("{v:.3}"),
            None => String::new(),
        };
        [
            csv_field(&self.model),
            csv_field(&self.layer),
            self.method.as_str().to_string(),
            self.path.as_str().to_string(),
            self.n.to_string(),
            self.i.to_string(),
            self.o.to_string(),
            self.r.to_string(),
            self.b.to_string(),
            format!("{:.6e}", self.time_median_s),
            self.flops_counted.to_string(),
            self.flops_modeled.to_string(),
            self.bytes_intermediate_counted.to_string(),
            self.bytes_modeled.to_string(),
            format!("{:.3}", self.alpha_modeled),
            self.bound.as_str().to_string(),
            format!("{:.6e}", self.est_runtime_s),
            speedup,
            format!("{:.3e}", self.oracle_maxrelerr),
        ]
        .join(",")
    }
}

pub fn emit_csv(rows: &[BenchRow], w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row.to_csv_line())?;
    }
    Ok(())
}
