//! The `blr` command line: factor / forward / verify / bench / roofline.
//!
//! Flags are parsed by hand; every subcommand is a flat list of `--flag
//! value` pairs. Exit codes: 0 on success, 1 when verification or benchmark
//! rows fail their checks, 2 for usage, config and I/O problems.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use blr_core::exec::verify::{run_verification, verification_cases, VERIFY_TOL};
use blr_core::exec::{forward, Autotuner, ExecSettings, OutputMode, PathId};
use blr_core::formats::{
    factor_blast, factor_low_rank, factor_monarch, param_count, Factors, Method, WorkloadSpec,
};
use blr_core::synth::{synth_activations, synth_dense_weight};
use blr_core::tensor::{max_rel_err, rel_fro_err};
use blr_core::{ScratchBudget, Tensor, TileConfig, DEFAULT_ELEM_BYTES, DEFAULT_SCRATCH_KIB};

use crate::config::{compression_factors, parse_config, DEFAULT_CONFIG};
use crate::report::emit_csv;
use crate::runner::{run_bench, BenchOpts, ORACLE_HEAD_ROWS};
use crate::tensor_file::{load_factors, read_tensor, save_factors};
use crate::{profile, Error, Result};

pub const USAGE: &str = "\
blr — block low-rank linear layer toolkit

USAGE: blr <command> [flags]

COMMANDS:
  factor     fit structured factors to a dense weight and save a bundle
  forward    run one compute path on a saved factor bundle
  verify     sweep every path against the dense oracle on a seeded case grid
  bench      time a layer set on synthetic data and emit CSV
  roofline   print analytic cost reports and compression factors

FACTOR FLAGS:
  --method M      dense | lowrank | monarch | blast          (required)
  --i N, --o N    weight shape                               (required)
  --r N           total rank (monarch: must be divisible by --b)
  --b N           block count (monarch/blast)
  --seed S        synthesize the dense weight from seed S    (default 0)
  --in FILE       read the dense weight from a .blrt file instead
  --steps N       shared-basis fitting sweeps                (default 200)
  --lr F          shared-basis step scale                    (default 1.0)
  --out STEM      factor bundle stem to write                (required)

FORWARD FLAGS:
  --factors STEM  bundle stem to load                        (required)
  --path P        dense | lowrank | lowrank_fused | monarch_base | monarch_opt
                  | blast_base | blast_partial | blast_reordered  (required)
  --n N           batch rows                                 (default 8)
  --seed S        activation seed                            (default 0)
  --mode M        canonical | transposed                     (default canonical)
  --scratch-kib N scratch budget                             (default 192)
  --elem-bytes N  modeled element width                      (default 2)

VERIFY FLAGS:
  --cases N       run only the first N grid cases            (default: all)
  --scratch-kib N, --elem-bytes N   as above

BENCH FLAGS:
  --config FILE   layer set                                  (default: built-in)
  --profile P     a40_like | orin_nano_like | a profile file (default: a40_like)
  --paths P1,P2   keep only these paths
  --models M1,M2  keep only these models
  --warmups N     untimed passes per path                    (default 10)
  --repeats N     timed passes per path                      (default 50)
  --seed S        base data seed                             (default 0)
  --n N           override every record's batch rows
  --out FILE      write the CSV here instead of stdout
  --no-speedup    skip dense baselines and the speedup column
  --scratch-kib N, --elem-bytes N   as above

ROOFLINE FLAGS:
  --config FILE, --profile P, --elem-bytes N, --n N   as above

EXIT CODES: 0 ok; 1 verification/benchmark failures; 2 usage, config or I/O.";

pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(args: &[String]) -> Result<i32> {
    let Some(cmd) = args.first() else {
        eprintln!("{USAGE}");
        return Ok(2);
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "factor" => cmd_factor(rest),
        "forward" => cmd_forward(rest),
        "verify" => cmd_verify(rest),
        "bench" => cmd_bench(rest),
        "roofline" => cmd_roofline(rest),
        "help" | "-h" | "--help" => {
            println!("{USAGE}");
            Ok(0)
        }
        other => Err(Error::Usage(format!(
            "unknown command '{other}' (see 'blr help')"
        ))),
    }
}

struct Flags<'a> {
    args: &'a [String],
    at: usize,
}

impl<'a> Flags<'a> {
    fn new(args: &'a [String]) -> Self {
        Flags { args, at: 0 }
    }

    fn next_flag(&mut self) -> Option<&'a str> {
        let f = self.args.get(self.at)?;
        self.at += 1;
        Some(f.as_str())
    }

    fn value(&mut self, flag: &str) -> Result<&'a str> {
        let v = self
            .args
            .get(self.at)
            .ok_or_else(|| Error::Usage(format!("{flag} needs a value")))?;
        self.at += 1;
        Ok(v.as_str())
    }

    fn num<T: FromStr>(&mut self, flag: &str) -> Result<T> {
        let v = self.value(flag)?;
        v.parse()
            .map_err(|_| Error::Usage(format!("{flag} needs a number, got '{v}'")))
    }
}

fn unknown(cmd: &str, flag: &str) -> Error {
    Error::Usage(format!("unknown flag '{flag}' for '{cmd}'"))
}

fn require<T>(v: Option<T>, cmd: &str, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Usage(format!("'{cmd}' requires {flag}")))
}

fn settings_for(scratch_kib: usize, elem_bytes: u32) -> Result<ExecSettings> {
    let budget = ScratchBudget::from_kib(scratch_kib);
    let tile = TileConfig::default_for(budget).map_err(Error::Core)?;
    Ok(ExecSettings {
        tile,
        budget,
        mode: OutputMode::Canonical,
        elem_bytes,
    })
}

fn cmd_factor(args: &[String]) -> Result<i32> {
    let mut method = None;
    let mut i = None;
    let mut o = None;
    let mut r = 0usize;
    let mut b = 0usize;
    let mut seed = 0u64;
    let mut input = None;
    let mut steps = 200usize;
    let mut lr = 1.0f64;
    let mut out = None;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        match flag {
            "--method" => method = Some(Method::parse(flags.value(flag)?).map_err(Error::Core)?),
            "--i" => i = Some(flags.num(flag)?),
            "--o" => o = Some(flags.num(flag)?),
            "--r" => r = flags.num(flag)?,
            "--b" => b = flags.num(flag)?,
            "--seed" => seed = flags.num(flag)?,
            "--in" => input = Some(flags.value(flag)?.to_string()),
            "--steps" => steps = flags.num(flag)?,
            "--lr" => lr = flags.num(flag)?,
            "--out" => out = Some(flags.value(flag)?.to_string()),
            other => return Err(unknown("factor", other)),
        }
    }
    let method = require(method, "factor", "--method")?;
    let out = require(out, "factor", "--out")?;

    let w = match &input {
        Some(path) => {
            let t = read_tensor(Path::new(path))?;
            match t.shape() {
                [ti, to] => {
                    if let (Some(i), Some(o)) = (i, o) {
                        if (i, o) != (*ti, *to) {
                            return Err(Error::Usage(format!(
                                "--i/--o say {i}x{o} but {path} holds {ti}x{to}"
                            )));
                        }
                    }
                    t
                }
                s => {
                    return Err(Error::Usage(format!(
                        "{path} holds a rank-{} tensor, need a matrix",
                        s.len()
                    )))
                }
            }
        }
        None => {
            let i = require(i, "factor", "--i")?;
            let o = require(o, "factor", "--o")?;
            synth_dense_weight(i, o, seed)
        }
    };
    let (i, o) = (w.shape()[0], w.shape()[1]);

    let t0 = Instant::now();
    let (factors, rel_err) = match method {
        Method::Dense => (Factors::Dense(w.clone()), 0.0),
        Method::LowRank => {
            let f = factor_low_rank(&w, r).map_err(Error::Core)?;
            let err = rel_fro_err(&f.to_dense(), &w);
            (Factors::LowRank(f), err)
        }
        Method::Monarch => {
            if b == 0 || r % b != 0 {
                return Err(Error::Usage(format!(
                    "monarch needs --r divisible by --b, got r={r} b={b}"
                )));
            }
            let f = factor_monarch(&w, b, r / b).map_err(Error::Core)?;
            let err = rel_fro_err(&f.to_dense(), &w);
            (Factors::Monarch(f), err)
        }
        Method::Blast => {
            let fit = factor_blast(&w, b, r, steps, lr).map_err(Error::Core)?;
            let err = fit.rel_error;
            (Factors::Blast(fit.factors), err)
        }
    };
    let fit_s = t0.elapsed().as_secs_f64();

    save_factors(Path::new(&out), &factors)?;
    let spec = WorkloadSpec::new(method, 1, i, o, r, b).map_err(Error::Core)?;
    let params = param_count(&spec).map_err(Error::Core)?;
    let dense_params = (i * o) as u64;
    println!(
        "wrote {out}.meta: method={} i={i} o={o} r={r} b={b} params={params} \
         (dense {dense_params}, {:.3}x) rel_fro_err={rel_err:.3e} fit_s={fit_s:.3}",
        method.as_str(),
        dense_params as f64 / params as f64,
    );
    Ok(0)
}

fn cmd_forward(args: &[String]) -> Result<i32> {
    let mut stem = None;
    let mut path = None;
    let mut n = 8usize;
    let mut seed = 0u64;
    let mut mode = OutputMode::Canonical;
    let mut scratch_kib = DEFAULT_SCRATCH_KIB;
    let mut elem_bytes = DEFAULT_ELEM_BYTES;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        match flag {
            "--factors" => stem = Some(flags.value(flag)?.to_string()),
            "--path" => path = Some(PathId::parse(flags.value(flag)?).map_err(Error::Core)?),
            "--n" => n = flags.num(flag)?,
            "--seed" => seed = flags.num(flag)?,
            "--mode" => {
                mode = match flags.value(flag)? {
                    "canonical" => OutputMode::Canonical,
                    "transposed" => OutputMode::Transposed,
                    other => return Err(Error::Usage(format!("unknown mode '{other}'"))),
                }
            }
            "--scratch-kib" => scratch_kib = flags.num(flag)?,
            "--elem-bytes" => elem_bytes = flags.num(flag)?,
            other => return Err(unknown("forward", other)),
        }
    }
    let stem = require(stem, "forward", "--factors")?;
    let path = require(path, "forward", "--path")?;

    let loaded = load_factors(Path::new(&stem))?;
    // Paths that want a transformed layout get it here, like a deployment
    // would prepare it offline.
    let mut variant = None;
    let factors = crate::runner::prepared(path, &loaded, &mut variant)
        .map_err(Error::Core)?
        .clone();
    let x = synth_activations(n, factors.i(), seed);
    let budget = ScratchBudget::from_kib(scratch_kib);
    let mut tuner = Autotuner::new(budget, mode, elem_bytes);
    let tile = tuner.tune(path, &x, &factors).map_err(Error::Core)?;
    let st = tuner.settings(tile);

    let t0 = Instant::now();
    let result = forward(path, &x, &factors, &st).map_err(Error::Core)?;
    let run_s = t0.elapsed().as_secs_f64();

    println!(
        "path={} n={n} i={} o={} mode={} tile=({},{},{},{}) time_s={run_s:.6e}",
        path.as_str(),
        factors.i(),
        factors.o(),
        mode.as_str(),
        tile.t_n,
        tile.t_r,
        tile.t_p,
        tile.t_q,
    );
    println!(
        "flops={} intermediate_bytes={} output_shape={:?}",
        result.counters.flops(),
        result.counters.intermediate_bytes(),
        result.y.shape(),
    );

    if mode == OutputMode::Transposed {
        println!("oracle: skipped (transposed layout)");
        return Ok(0);
    }
    let head = n.min(ORACLE_HEAD_ROWS);
    let o = factors.o();
    let x_head = Tensor::from_vec(&[head, factors.i()], x.data()[..head * factors.i()].to_vec())
        .map_err(Error::Core)?;
    let y_head =
        Tensor::from_vec(&[head, o], result.y.data()[..head * o].to_vec()).map_err(Error::Core)?;
    let y_ref = blr_core::exec::verify::reference_forward(&factors, &x_head).map_err(Error::Core)?;
    let err = max_rel_err(&y_head, &y_ref);
    println!("oracle_max_rel_err={err:.3e} (first {head} rows)");
    if err <= VERIFY_TOL {
        Ok(0)
    } else {
        eprintln!("oracle check FAILED: {err:.3e} > {VERIFY_TOL:e}");
        Ok(1)
    }
}

fn cmd_verify(args: &[String]) -> Result<i32> {
    let mut cap = None;
    let mut scratch_kib = DEFAULT_SCRATCH_KIB;
    let mut elem_bytes = DEFAULT_ELEM_BYTES;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        match flag {
            "--cases" => cap = Some(flags.num(flag)?),
            "--scratch-kib" => scratch_kib = flags.num(flag)?,
            "--elem-bytes" => elem_bytes = flags.num(flag)?,
            other => return Err(unknown("verify", other)),
        }
    }

    let mut cases = verification_cases();
    if let Some(cap) = cap {
        cases.truncate(cap);
    }
    let st = settings_for(scratch_kib, elem_bytes)?;
    let t0 = Instant::now();
    let report = run_verification(&cases, &st).map_err(Error::Core)?;
    for res in report.results.iter().filter(|r| !r.pass) {
        let c = &res.case;
        eprintln!(
            "FAIL {} n={} i={} o={} r={} b={} seed={}: rel_err={:.3e}",
            c.path.as_str(),
            c.spec.n,
            c.spec.i,
            c.spec.o,
            c.spec.r,
            c.spec.b,
            c.seed,
            res.rel_err,
        );
    }
    println!(
        "{} cases, {} failures, max rel err {:.3e}, tol {:e}, {:.1}s",
        report.results.len(),
        report.failures,
        report.max_rel_err(),
        VERIFY_TOL,
        t0.elapsed().as_secs_f64(),
    );
    Ok(if report.failures == 0 { 0 } else { 1 })
}

fn cmd_bench(args: &[String]) -> Result<i32> {
    let mut config_path = None;
    let mut out_path = None;
    let mut opts = BenchOpts::default();

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        match flag {
            "--config" => config_path = Some(flags.value(flag)?.to_string()),
            "--profile" => opts.profile = profile::resolve(flags.value(flag)?)?,
            "--paths" => {
                let list = flags
                    .value(flag)?
                    .split(',')
                    .map(PathId::parse)
                    .collect::<blr_core::Result<Vec<_>>>()
                    .map_err(Error::Core)?;
                opts.paths = Some(list);
            }
            "--models" => {
                opts.models = Some(flags.value(flag)?.split(',').map(String::from).collect())
            }
            "--warmups" => opts.warmups = flags.num(flag)?,
            "--repeats" => opts.repeats = flags.num(flag)?,
            "--seed" => opts.seed = flags.num(flag)?,
            "--n" => opts.n_override = Some(flags.num(flag)?),
            "--out" => out_path = Some(flags.value(flag)?.to_string()),
            "--scratch-kib" => opts.scratch = ScratchBudget::from_kib(flags.num(flag)?),
            "--elem-bytes" => opts.elem_bytes = flags.num(flag)?,
            "--no-speedup" => opts.dense_baseline = false,
            other => return Err(unknown("bench", other)),
        }
    }

    let text = match &config_path {
        Some(p) => std::fs::read_to_string(p)?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let records = parse_config(&text)?;
    let outcome = run_bench(&records, &opts)?;

    match &out_path {
        Some(p) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(p)?);
            emit_csv(&outcome.rows, &mut f)?;
        }
        None => {
            let stdout = std::io::stdout();
            emit_csv(&outcome.rows, &mut stdout.lock())?;
        }
    }
    for e in &outcome.errors {
        eprintln!("FAIL {e}");
    }
    eprintln!(
        "{} rows, {} failures{}",
        outcome.rows.len(),
        outcome.errors.len(),
        out_path
            .as_deref()
            .map(|p| format!(", csv -> {p}"))
            .unwrap_or_default(),
    );
    Ok(if outcome.errors.is_empty() { 0 } else { 1 })
}

fn cmd_roofline(args: &[String]) -> Result<i32> {
    let mut config_path = None;
    let mut prof = profile::builtin(profile::DATACENTER).expect("built-in");
    let mut elem_bytes = DEFAULT_ELEM_BYTES;
    let mut n_override = None;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        match flag {
            "--config" => config_path = Some(flags.value(flag)?.to_string()),
            "--profile" => prof = profile::resolve(flags.value(flag)?)?,
            "--elem-bytes" => elem_bytes = flags.num(flag)?,
            "--n" => n_override = Some(flags.num(flag)?),
            other => return Err(unknown("roofline", other)),
        }
    }

    let text = match &config_path {
        Some(p) => std::fs::read_to_string(p)?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let records = parse_config(&text)?;

    println!(
        "profile {}: peak {:.4e} FLOP/s, bandwidth {:.4e} B/s, ridge {:.2} FLOP/B",
        prof.name,
        prof.peak_flops,
        prof.mem_bandwidth_bytes_per_s,
        prof.ridge_intensity(),
    );
    println!();
    println!(
        "{:<12} {:<14} {:<8} {:>5} {:>6} {:>6} {:>5} {:>3} {:>15} {:>13} {:>8}  {:<7} {:>10}",
        "model", "layer", "method", "n", "i", "o", "r", "b", "flops", "bytes", "alpha", "bound",
        "est_s"
    );
    for rec in &records {
        let spec = rec.workload(n_override)?;
        let cr = blr_core::roofline::cost_report(&spec, elem_bytes, &prof);
        println!(
            "{:<12} {:<14} {:<8} {:>5} {:>6} {:>6} {:>5} {:>3} {:>15} {:>13} {:>8.1}  {:<7} {:>10.3e}",
            rec.model,
            rec.layer,
            rec.method.as_str(),
            spec.n,
            spec.i,
            spec.o,
            spec.r,
            spec.b,
            cr.flops,
            cr.bytes,
            cr.alpha,
            cr.bound.as_str(),
            cr.est_runtime_s,
        );
    }
    println!();
    println!("compression (dense params / structured params, count-weighted):");
    println!(
        "{:<12} {:<8} {:>14} {:>14} {:>7}",
        "model", "method", "dense", "structured", "factor"
    );
    for cf in compression_factors(&records)? {
        println!(
            "{:<12} {:<8} {:>14} {:>14} {:>7.3}",
            cf.model,
            cf.method.as_str(),
            cf.dense_params,
            cf.structured_params,
            cf.factor(),
        );
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(args: &[&str]) -> Vec<String> {
        args.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn empty_and_unknown_commands_exit_2() {
        assert_eq!(run(&[]), 2);
        assert_eq!(run(&s(&["launch"])), 2);
        assert_eq!(run(&s(&["bench", "--bogus"])), 2);
        assert_eq!(run(&s(&["help"])), 0);
    }

    #[test]
    fn flag_values_are_validated() {
        assert_eq!(run(&s(&["verify", "--cases"])), 2); // missing value
        assert_eq!(run(&s(&["verify", "--cases", "many"])), 2); // not a number
        assert_eq!(run(&s(&["bench", "--paths", "warp_drive"])), 2);
        assert_eq!(run(&s(&["bench", "--profile", "abacus"])), 2);
    }

    #[test]
    fn verify_smoke_run_passes() {
        assert_eq!(run(&s(&["verify", "--cases", "6"])), 0);
    }
}
