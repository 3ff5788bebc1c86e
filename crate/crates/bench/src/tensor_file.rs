//! On-disk tensors and factor bundles.
//!
//! A `.blrt` file is: magic `BLRT`, then little-endian `u32` version (1),
//! `u32` dtype (0 = f32), `u32` rank, `rank` × `u64` dims, and the payload
//! as packed little-endian f32 in row-major order.
//!
//! A factor bundle is a `stem.meta` file of `key=value` lines (`method`,
//! `i`, `o`, `r`, `b`, plus `v_layout` for the butterfly structure and
//! `pretransposed` for the shared-basis one) next to `stem.<array>.blrt`
//! files. The pre-transposed S copy is derived data and is recomputed on
//! load rather than stored.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use blr_core::formats::{
    pretranspose_blast_s, BlastFactors, Factors, LowRankFactors, Method, MonarchFactors, VLayout,
};
use blr_core::Tensor;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BLRT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;

fn ferr(path: &Path, msg: impl Into<String>) -> Error {
    Error::TensorFile {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&DTYPE_F32.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    // Chunked so big factor arrays don't need a second full-size buffer.
    let mut buf = Vec::with_capacity(4 << 16);
    for chunk in t.data().chunks(1 << 16) {
        buf.clear();
        for &v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut at = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() - at < n {
            return Err(ferr(
                path,
                format!("truncated while reading {what} ({} bytes left, need {n})", bytes.len() - at),
            ));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };
    if take(4, "magic")? != MAGIC {
        return Err(ferr(path, "bad magic (not a BLRT tensor file)"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4, "version")?);
    if version != VERSION {
        return Err(ferr(path, format!("unsupported version {version}")));
    }
    let dtype = u32_at(take(4, "dtype")?);
    if dtype != DTYPE_F32 {
        return Err(ferr(path, format!("unsupported dtype code {dtype}")));
    }
    let rank = u32_at(take(4, "rank")?) as usize;
    if rank > 8 {
        return Err(ferr(path, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut elems = 1usize;
    for axis in 0..rank {
        let d = u64::from_le_bytes(take(8, "dims")?.try_into().unwrap());
        let d = usize::try_from(d).map_err(|_| ferr(path, format!("dim {axis} overflows")))?;
        elems = elems
            .checked_mul(d)
            .ok_or_else(|| ferr(path, "element count overflows"))?;
        shape.push(d);
    }
    let payload = take(elems * 4, "payload")?;
    if at != bytes.len() {
        return Err(ferr(path, format!("{} trailing bytes", bytes.len() - at)));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data).map_err(Error::Core)
}

fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", stem.display()))
}

pub fn save_factors(stem: &Path, f: &Factors) -> Result<()> {
    let mut meta = String::new();
    let mut push = |k: &str, v: String| meta.push_str(&format!("{k}={v}\n"));
    push("method", f.method().as_str().to_string());
    push("i", f.i().to_string());
    push("o", f.o().to_string());
    match f {
        Factors::Dense(w) => {
            push("r", "0".into());
            push("b", "0".into());
            write_tensor(&sibling(stem, "w.blrt"), w)?;
        }
        Factors::LowRank(lr) => {
            push("r", lr.rank().to_string());
            push("b", "0".into());
            write_tensor(&sibling(stem, "v.blrt"), lr.v())?;
            write_tensor(&sibling(stem, "u.blrt"), lr.u())?;
        }
        Factors::Monarch(m) => {
            push("r", m.r().to_string());
            push("b", m.b1().to_string());
            push("v_layout", m.v_layout().as_str().to_string());
            write_tensor(&sibling(stem, "v.blrt"), m.v())?;
            write_tensor(&sibling(stem, "u.blrt"), m.u())?;
        }
        Factors::Blast(bl) => {
            push("r", bl.r().to_string());
            push("b", bl.b1().to_string());
            push("pretransposed", bl.s_t().is_some().to_string());
            write_tensor(&sibling(stem, "v.blrt"), bl.v())?;
            write_tensor(&sibling(stem, "s.blrt"), bl.s())?;
            write_tensor(&sibling(stem, "u.blrt"), bl.u())?;
        }
    }
    fs::write(sibling(stem, "meta"), meta)?;
    Ok(())
}

pub fn load_factors(stem: &Path) -> Result<Factors> {
    let meta_path = sibling(stem, "meta");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::TensorFile {
        path: meta_path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut method = None;
    let mut i = None;
    let mut o = None;
    let mut r = None;
    let mut b = None;
    let mut v_layout = None;
    let mut pretransposed = false;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ferr(&meta_path, format!("expected key=value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| ferr(&meta_path, format!("key '{key}' needs an integer")))
        };
        match key {
            "method" => method = Some(Method::parse(value).map_err(Error::Core)?),
            "i" => i = Some(num()?),
            "o" => o = Some(num()?),
            "r" => r = Some(num()?),
            "b" => b = Some(num()?),
            "v_layout" => {
                v_layout = Some(match value {
                    "b2_fastest" => VLayout::B2Fastest,
                    "rprime_fastest" => VLayout::RPrimeFastest,
                    other => return Err(ferr(&meta_path, format!("unknown v_layout '{other}'"))),
                })
            }
            "pretransposed" => pretransposed = value == "true",
            other => return Err(ferr(&meta_path, format!("unknown key '{other}'"))),
        }
    }
    let need = |k: &str| ferr(&meta_path, format!("missing key '{k}'"));
    let method = method.ok_or_else(|| need("method"))?;
    let i = i.ok_or_else(|| need("i"))?;
    let o = o.ok_or_else(|| need("o"))?;
    let r = r.ok_or_else(|| need("r"))?;
    let b = b.ok_or_else(|| need("b"))?;

    let factors = match method {
        Method::Dense => Factors::Dense(read_tensor(&sibling(stem, "w.blrt"))?),
        Method::LowRank => {
            let v = read_tensor(&sibling(stem, "v.blrt"))?;
            let u = read_tensor(&sibling(stem, "u.blrt"))?;
            Factors::LowRank(LowRankFactors::new(v, u).map_err(Error::Core)?)
        }
        Method::Monarch => {
            let v = read_tensor(&sibling(stem, "v.blrt"))?;
            let u = read_tensor(&sibling(stem, "u.blrt"))?;
            let layout = v_layout.ok_or_else(|| need("v_layout"))?;
            if b == 0 || r % b != 0 {
                return Err(ferr(&meta_path, format!("r={r} not divisible by b={b}")));
            }
            Factors::Monarch(
                MonarchFactors::new(v, u, b, b, r / b, layout).map_err(Error::Core)?,
            )
        }
        Method::Blast => {
            let v = read_tensor(&sibling(stem, "v.blrt"))?;
            let s = read_tensor(&sibling(stem, "s.blrt"))?;
            let u = read_tensor(&sibling(stem, "u.blrt"))?;
            let mut bl = BlastFactors::new(v, s, u).map_err(Error::Core)?;
            if pretransposed {
                bl = pretranspose_blast_s(&bl);
            }
            Factors::Blast(bl)
        }
    };
    // The arrays carry their own shapes; the meta dims are a cross-check
    // against mixed-up bundles.
    if factors.i() != i || factors.o() != o {
        return Err(ferr(
            &meta_path,
            format!(
                "meta says {i}x{o} but arrays give {}x{}",
                factors.i(),
                factors.o()
            ),
        ));
    }
    Ok(factors)
}
