//! Hardware profiles for the roofline columns: two built-ins plus a
//! `key=value` file loader for anything else.

use std::path::Path;

use blr_core::roofline::HardwareProfile;

use crate::{Error, Result};

/// Data-center inference card: 149.7 TFLOP/s of half-precision tensor math
/// over 696 GB/s of GDDR6. The default for benchmark reports.
pub const DATACENTER: &str = "a40_like";

/// Small edge module with a steep ridge on the other side of most of these
/// workloads. The numbers are illustrative, not a vendor datasheet.
pub const EDGE: &str = "orin_nano_like";

pub fn builtin(name: &str) -> Option<HardwareProfile> {
    match name {
        DATACENTER => Some(HardwareProfile::new(DATACENTER, 149.7e12, 696e9)),
        EDGE => Some(HardwareProfile::new(EDGE, 5.0e12, 68e9)),
        _ => None,
    }
}

/// Loads a profile from a file of `key=value` lines (`#` comments allowed).
/// Required keys: `name`, `peak_flops`, `mem_bandwidth_bytes_per_s`.
pub fn load(path: &Path) -> Result<HardwareProfile> {
    let text = std::fs::read_to_string(path)?;
    let mut name = None;
    let mut peak = None;
    let mut bw = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Config {
            line: idx + 1,
            msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let float = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| bad(format!("key '{key}' needs a number, got '{value}'")))
        };
        match key {
            "name" => name = Some(value.to_string()),
            "peak_flops" => peak = Some(float()?),
            "mem_bandwidth_bytes_per_s" => bw = Some(float()?),
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    let missing = |k: &str| Error::Config {
        line: 1,
        msg: format!("profile is missing required key '{k}'"),
    };
    let name = name.ok_or_else(|| missing("name"))?;
    let peak = peak.ok_or_else(|| missing("peak_flops"))?;
    let bw = bw.ok_or_else(|| missing("mem_bandwidth_bytes_per_s"))?;
    if !(peak > 0.0) || !(bw > 0.0) {
        return Err(Error::Config {
            line: 1,
            msg: "peak_flops and mem_bandwidth_bytes_per_s must be positive".into(),
        });
    }
    Ok(HardwareProfile::new(&name, peak, bw))
}

/// Interprets `arg` as a built-in name first, then as a file path.
pub fn resolve(arg: &str) -> Result<HardwareProfile> {
    if let Some(p) = builtin(arg) {
        return Ok(p);
    }
    if Path::new(arg).exists() {
        return load(Path::new(arg));
    }
    Err(Error::Usage(format!(
        "unknown profile '{arg}' (built-ins: {DATACENTER}, {EDGE}; or pass a profile file)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn datacenter_ridge_sits_between_the_reference_intensities() {
        let p = builtin(DATACENTER).unwrap();
        let ridge = p.ridge_intensity();
        // The bound-classification tests upstream depend on the ridge
        // falling between the butterfly (102.4) and low-rank (455.1)
        // intensities of the 4096x4096 rank-1024 projection.
        assert!(ridge > 102.4 + 0.5 && ridge < 455.1 - 0.5, "{ridge}");
    }

    #[test]
    fn file_profile_round_trips_and_rejects_junk() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("dev.profile");
        let mut f = std::fs::File::create(&ok).unwrap();
        writeln!(f, "# a test device\nname=devboard\npeak_flops=1e12").unwrap();
        writeln!(f, "mem_bandwidth_bytes_per_s=5e10").unwrap();
        drop(f);
        let p = load(&ok).unwrap();
        assert_eq!(p.name, "devboard");
        assert_eq!(p.ridge_intensity(), 20.0);

        let bad = dir.path().join("bad.profile");
        std::fs::write(&bad, "name=x\npeak_flops=fast\n").unwrap();
        match load(&bad) {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let missing = dir.path().join("missing.profile");
        std::fs::write(&missing, "name=x\npeak_flops=1e12\n").unwrap();
        assert!(load(&missing).is_err());
    }

    #[test]
    fn resolve_prefers_builtins() {
        assert_eq!(resolve(EDGE).unwrap().name, EDGE);
        assert!(matches!(resolve("no_such_device"), Err(Error::Usage(_))));
    }
}
