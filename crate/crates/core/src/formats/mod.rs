//! Structured weight containers, factorization from dense weights,
//! reconstruction to dense, parameter counting, and the static offline
//! layout transforms the optimized executors rely on.
//!
//! Shape conventions (used everywhere downstream):
//! - a dense layer maps X (n×i) to Y (n×o) through W (i×o);
//! - blocked methods split the input axis into `b1` blocks of width `p`
//!   and the output axis into `b2` blocks of width `q`;
//! - the canonical dense W stacks input blocks l-major along rows and
//!   output blocks k-major along columns, i.e. flattened output index
//!   `k·q + j`. The "transposed" flattening `j·b2 + k` is an explicit
//!   output mode of the executors, never the default.

mod blast;
pub(crate) mod smallmat;
pub(crate) mod svd;

pub use blast::{factor_blast, BlastFit};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Dense,
    LowRank,
    Monarch,
    Blast,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::LowRank => "lowrank",
            Method::Monarch => "monarch",
            Method::Blast => "blast",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "dense" => Ok(Method::Dense),
            "lowrank" | "low-rank" | "low_rank" | "lr" => Ok(Method::LowRank),
            "monarch" => Ok(Method::Monarch),
            "blast" => Ok(Method::Blast),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// One linear layer's shape tuple: the unit of benchmarking and cost
/// modeling. `r` and `b` are zero for methods that do not use them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WorkloadSpec {
    pub method: Method,
    pub n: usize,
    pub i: usize,
    pub o: usize,
    pub r: usize,
    pub b: usize,
}

impl WorkloadSpec {
    pub fn new(method: Method, n: usize, i: usize, o: usize, r: usize, b: usize) -> Result<Self> {
        let spec = WorkloadSpec {
            method,
            n,
            i,
            o,
            r: if method == Method::Dense { 0 } else { r },
            b: match method {
                Method::Dense | Method::LowRank => 0,
                _ => b,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dense(n: usize, i: usize, o: usize) -> Result<Self> {
        Self::new(Method::Dense, n, i, o, 0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.i == 0 || self.o == 0 {
            return Err(Error::InvalidArgument(format!(
                "n, i, o must be positive (got n={}, i={}, o={})",
                self.n, self.i, self.o
            )));
        }
        match self.method {
            Method::Dense => Ok(()),
            Method::LowRank => {
                if self.r == 0 {
                    return Err(Error::InvalidArgument("low-rank needs r >= 1".into()));
                }
                Ok(())
            }
            Method::Monarch | Method::Blast => {
                if self.r == 0 || self.b == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "{} needs r >= 1 and b >= 1",
                        self.method.as_str()
                    )));
                }
                if self.i % self.b != 0 || self.o % self.b != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "b={} must divide i={} and o={}",
                        self.b, self.i, self.o
                    )));
                }
                if self.method == Method::Monarch && self.r % self.b != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "monarch needs b={} to divide r={}",
                        self.b, self.r
                    )));
                }
                Ok(())
            }
        }
    }

    /// Input block width (i for unblocked methods).
    pub fn p(&self) -> usize {
        if self.b > 0 {
            self.i / self.b
        } else {
            self.i
        }
    }

    /// Output block width (o for unblocked methods).
    pub fn q(&self) -> usize {
        if self.b > 0 {
            self.o / self.b
        } else {
            self.o
        }
    }

    /// Per-block rank for the butterfly-structured method.
    pub fn r_prime(&self) -> usize {
        debug_assert_eq!(self.method, Method::Monarch);
        self.r / self.b
    }
}

/// Stored parameter count for a workload.
pub fn param_count(spec: &WorkloadSpec) -> Result<u64> {
    spec.validate()?;
    let (n, i, o, r, b) = (spec.n, spec.i as u64, spec.o as u64, spec.r as u64, spec.b as u64);
    let _ = n;
    Ok(match spec.method {
        Method::Dense => i * o,
        Method::LowRank => r * (i + o),
        // b1·b2·r′·(p+q): equals r(i+o) in the symmetric square-block case.
        Method::Monarch => {
            let (p, q, rp) = (i / b, o / b, r / b);
            b * b * rp * (p + q)
        }
        // V (i·r) + U (r·o) + the b1×b2 diagonals of length r.
        Method::Blast => r * (i + o + b * b),
    })
}

/// Memory layout of the butterfly V tensor's composite middle dimension,
/// which interleaves the per-block rank index r' with the output block
/// index b2.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VLayout {
    /// Pairs (b2, r') with b2 fastest-varying: composite index = r'·b2 + k.
    /// The layout factorization produces.
    B2Fastest,
    /// Pairs (b2, r') with r' fastest-varying: composite index = k·r' + ρ'.
    /// The re-layout the fused executor requires; see
    /// [`relayout_monarch_v`].
    RPrimeFastest,
}

impl VLayout {
    pub fn as_str(self) -> &'static str {
        match self {
            VLayout::B2Fastest => "b2_fastest",
            VLayout::RPrimeFastest => "rprime_fastest",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LowRankFactors {
    v: Tensor, // i×r
    u: Tensor, // r×o
}

impl LowRankFactors {
    pub fn new(v: Tensor, u: Tensor) -> Result<LowRankFactors> {
        let (vi, vr) = dims2(&v, "low-rank V")?;
        let (ur, uo) = dims2(&u, "low-rank U")?;
        if vr != ur || vr == 0 {
            return Err(Error::ShapeMismatch(format!(
                "V is {vi}x{vr}, U is {ur}x{uo}: ranks disagree"
            )));
        }
        Ok(LowRankFactors { v, u })
    }

    pub fn v(&self) -> &Tensor {
        &self.v
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    pub fn i(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn o(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn rank(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn to_dense(&self) -> Tensor {
        crate::kernels::naive_matmul(&self.v, &self.u).expect("validated shapes")
    }
}

#[derive(Clone, Debug)]
pub struct MonarchFactors {
    b1: usize,
    b2: usize,
    r_prime: usize,
    v: Tensor, // (b1, r'·b2, p)
    u: Tensor, // (b2, q, b1·r'), innermost composite ordered (b1, r') with r' fastest
    v_layout: VLayout,
}

impl MonarchFactors {
    pub fn new(
        v: Tensor,
        u: Tensor,
        b1: usize,
        b2: usize,
        r_prime: usize,
        v_layout: VLayout,
    ) -> Result<MonarchFactors> {
        if b1 == 0 || b2 == 0 || r_prime == 0 {
            return Err(Error::InvalidArgument(
                "butterfly factors need b1, b2, r' >= 1".into(),
            ));
        }
        match v.shape() {
            [vb, vc, _p] if *vb == b1 && *vc == r_prime * b2 => {}
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "V shape {s:?} does not match (b1={b1}, r'*b2={}, p)",
                    r_prime * b2
                )))
            }
        }
        match u.shape() {
            [ub, _q, uc] if *ub == b2 && *uc == b1 * r_prime => {}
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "U shape {s:?} does not match (b2={b2}, q, b1*r'={})",
                    b1 * r_prime
                )))
            }
        }
        Ok(MonarchFactors {
            b1,
            b2,
            r_prime,
            v,
            u,
            v_layout,
        })
    }

    pub fn b1(&self) -> usize {
        self.b1
    }

    pub fn b2(&self) -> usize {
        self.b2
    }

    pub fn r_prime(&self) -> usize {
        self.r_prime
    }

    pub fn p(&self) -> usize {
        self.v.shape()[2]
    }

    pub fn q(&self) -> usize {
        self.u.shape()[1]
    }

    pub fn i(&self) -> usize {
        self.b1 * self.p()
    }

    pub fn o(&self) -> usize {
        self.b2 * self.q()
    }

    /// Total middle rank r = r'·b2.
    pub fn r(&self) -> usize {
        self.r_prime * self.b2
    }

    pub fn v(&self) -> &Tensor {
        &self.v
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    pub fn v_layout(&self) -> VLayout {
        self.v_layout
    }

    /// Composite middle index of (k, r') under the current V layout.
    pub fn v_comp(&self, k: usize, rp: usize) -> usize {
        match self.v_layout {
            VLayout::B2Fastest => rp * self.b2 + k,
            VLayout::RPrimeFastest => k * self.r_prime + rp,
        }
    }

    /// Composite innermost index of U for (l, r'): r' fastest.
    pub fn u_comp(&self, l: usize, rp: usize) -> usize {
        l * self.r_prime + rp
    }

    pub fn to_dense(&self) -> Tensor {
        let (p, q) = (self.p(), self.q());
        let (i, o) = (self.i(), self.o());
        let mut w = vec![0f32; i * o];
        let (vd, ud) = (self.v.data(), self.u.data());
        let v_slab = self.r_prime * self.b2 * p;
        let u_slab = q * self.b1 * self.r_prime;
        let u_inner = self.b1 * self.r_prime;
        for l in 0..self.b1 {
            for k in 0..self.b2 {
                for a in 0..p {
                    for j in 0..q {
                        let mut acc = 0f64;
                        for rp in 0..self.r_prime {
                            let vv = vd[l * v_slab + self.v_comp(k, rp) * p + a];
                            let uu = ud[k * u_slab + j * u_inner + self.u_comp(l, rp)];
                            acc += vv as f64 * uu as f64;
                        }
                        w[(l * p + a) * o + k * q + j] = acc as f32;
                    }
                }
            }
        }
        Tensor::from_vec(&[i, o], w).expect("sized above")
    }
}

#[derive(Clone, Debug)]
pub struct BlastFactors {
    b1: usize,
    b2: usize,
    v: Tensor, // (b1, p, r)
    s: Tensor, // (b1, b2, r): the diagonals of the per-block coupling
    u: Tensor, // (b2, r, q)
    s_t: Option<Tensor>, // (r, b2, b1), S_T[rho,k,l] = S[l,k,rho]
}

impl BlastFactors {
    pub fn new(v: Tensor, s: Tensor, u: Tensor) -> Result<BlastFactors> {
        let (b1, _p, r) = match v.shape() {
            [b1, p, r] => (*b1, *p, *r),
            sh => {
                return Err(Error::ShapeMismatch(format!(
                    "blast V shape {sh:?}, want (b1, p, r)"
                )))
            }
        };
        let (b2, ur, _q) = match u.shape() {
            [b2, r2, q] => (*b2, *r2, *q),
            sh => {
                return Err(Error::ShapeMismatch(format!(
                    "blast U shape {sh:?}, want (b2, r, q)"
                )))
            }
        };
        if ur != r {
            return Err(Error::ShapeMismatch(format!(
                "blast rank mismatch: V has r={r}, U has r={ur}"
            )));
        }
        if s.shape() != [b1, b2, r] {
            return Err(Error::ShapeMismatch(format!(
                "blast S shape {:?}, want ({b1}, {b2}, {r})",
                s.shape()
            )));
        }
        Ok(BlastFactors {
            b1,
            b2,
            v,
            s,
            u,
            s_t: None,
        })
    }

    pub fn b1(&self) -> usize {
        self.b1
    }

    pub fn b2(&self) -> usize {
        self.b2
    }

    pub fn r(&self) -> usize {
        self.v.shape()[2]
    }

    pub fn p(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn q(&self) -> usize {
        self.u.shape()[2]
    }

    pub fn i(&self) -> usize {
        self.b1 * self.p()
    }

    pub fn o(&self) -> usize {
        self.b2 * self.q()
    }

    pub fn v(&self) -> &Tensor {
        &self.v
    }

    pub fn s(&self) -> &Tensor {
        &self.s
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    pub fn s_t(&self) -> Option<&Tensor> {
        self.s_t.as_ref()
    }

    pub fn to_dense(&self) -> Tensor {
        let (p, q, r) = (self.p(), self.q(), self.r());
        let (i, o) = (self.i(), self.o());
        let mut w = vec![0f32; i * o];
        let (vd, sd, ud) = (self.v.data(), self.s.data(), self.u.data());
        for l in 0..self.b1 {
            for k in 0..self.b2 {
                let s_row = &sd[(l * self.b2 + k) * r..(l * self.b2 + k) * r + r];
                for a in 0..p {
                    let v_row = &vd[(l * p + a) * r..(l * p + a) * r + r];
                    for j in 0..q {
                        let mut acc = 0f64;
                        for rho in 0..r {
                            acc += v_row[rho] as f64
                                * s_row[rho] as f64
                                * ud[(k * r + rho) * q + j] as f64;
                        }
                        w[(l * p + a) * o + k * q + j] = acc as f32;
                    }
                }
            }
        }
        Tensor::from_vec(&[i, o], w).expect("sized above")
    }
}

/// Any structured (or dense) weight, for code that is generic over methods.
#[derive(Clone, Debug)]
pub enum Factors {
    Dense(Tensor),
    LowRank(LowRankFactors),
    Monarch(MonarchFactors),
    Blast(BlastFactors),
}

impl Factors {
    pub fn method(&self) -> Method {
        match self {
            Factors::Dense(_) => Method::Dense,
            Factors::LowRank(_) => Method::LowRank,
            Factors::Monarch(_) => Method::Monarch,
            Factors::Blast(_) => Method::Blast,
        }
    }

    pub fn i(&self) -> usize {
        match self {
            Factors::Dense(w) => w.shape()[0],
            Factors::LowRank(f) => f.i(),
            Factors::Monarch(f) => f.i(),
            Factors::Blast(f) => f.i(),
        }
    }

    pub fn o(&self) -> usize {
        match self {
            Factors::Dense(w) => w.shape()[1],
            Factors::LowRank(f) => f.o(),
            Factors::Monarch(f) => f.o(),
            Factors::Blast(f) => f.o(),
        }
    }

    /// Canonical dense W (i×o); the oracle every forward path is checked
    /// against.
    pub fn to_dense(&self) -> Tensor {
        match self {
            Factors::Dense(w) => w.clone(),
            Factors::LowRank(f) => f.to_dense(),
            Factors::Monarch(f) => f.to_dense(),
            Factors::Blast(f) => f.to_dense(),
        }
    }
}

/// Rank-r factorization of a dense weight by thin SVD; V absorbs the
/// singular values. The reconstruction error is the rank-r optimum.
pub fn factor_low_rank(w: &Tensor, r: usize) -> Result<LowRankFactors> {
    let (i, o) = dims2(w, "weight")?;
    if r == 0 || r > i.min(o) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} out of range for {i}x{o} (need 1 <= r <= {})",
            i.min(o)
        )));
    }
    let wd: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let dec = svd::svd_thin(&wd, i, o)?;
    let c = dec.sigma.len();
    let mut v = vec![0f32; i * r];
    for row in 0..i {
        for col in 0..r {
            v[row * r + col] = (dec.u[row * c + col] * dec.sigma[col]) as f32;
        }
    }
    let mut u = vec![0f32; r * o];
    for row in 0..r {
        for col in 0..o {
            u[row * o + col] = dec.vt[row * o + col] as f32;
        }
    }
    LowRankFactors::new(Tensor::from_vec(&[i, r], v)?, Tensor::from_vec(&[r, o], u)?)
}

/// Independent per-block rank-r' SVD of each (p×q) block of W, packed into
/// the butterfly storage layout (V in its original B2-fastest layout).
pub fn factor_monarch(w: &Tensor, b: usize, r_prime: usize) -> Result<MonarchFactors> {
    let (i, o) = dims2(w, "weight")?;
    if b == 0 || i % b != 0 || o % b != 0 {
        return Err(Error::InvalidArgument(format!(
            "b={b} must divide i={i} and o={o}"
        )));
    }
    let (p, q) = (i / b, o / b);
    if r_prime == 0 || r_prime > p.min(q) {
        return Err(Error::InvalidArgument(format!(
            "per-block rank {r_prime} out of range for {p}x{q} blocks"
        )));
    }
    let (b1, b2) = (b, b);
    let mut v = Tensor::zeros(&[b1, r_prime * b2, p]);
    let mut u = Tensor::zeros(&[b2, q, b1 * r_prime]);
    let v_slab = r_prime * b2 * p;
    let u_slab = q * b1 * r_prime;
    let u_inner = b1 * r_prime;
    let mut block = vec![0f64; p * q];
    for l in 0..b1 {
        for k in 0..b2 {
            for a in 0..p {
                for j in 0..q {
                    block[a * q + j] = w.data()[(l * p + a) * o + k * q + j] as f64;
                }
            }
            let dec = svd::svd_thin(&block, p, q)?;
            let c = dec.sigma.len();
            let vd = v.data_mut();
            for rp in 0..r_prime {
                // V_{l,k}[:, rp] = u[:, rp] * sigma[rp], stored B2-fastest.
                let comp = rp * b2 + k;
                for a in 0..p {
                    vd[l * v_slab + comp * p + a] = (dec.u[a * c + rp] * dec.sigma[rp]) as f32;
                }
            }
            let ud = u.data_mut();
            for rp in 0..r_prime {
                for j in 0..q {
                    ud[k * u_slab + j * u_inner + l * r_prime + rp] =
                        dec.vt[rp * q + j] as f32;
                }
            }
        }
    }
    MonarchFactors::new(v, u, b1, b2, r_prime, VLayout::B2Fastest)
}

/// Offline re-layout of the butterfly V: reorder the composite middle
/// dimension from b2-fastest to r'-fastest so the fused executor's stores
/// become contiguous. Values are untouched; `to_dense` is bit-identical.
pub fn relayout_monarch_v(f: &MonarchFactors) -> Result<MonarchFactors> {
    if f.v_layout != VLayout::B2Fastest {
        return Err(Error::AlreadyRelaidOut);
    }
    Ok(relayout_v_impl(f, VLayout::RPrimeFastest))
}

/// Inverse of [`relayout_monarch_v`].
pub fn relayout_monarch_v_inverse(f: &MonarchFactors) -> Result<MonarchFactors> {
    if f.v_layout != VLayout::RPrimeFastest {
        return Err(Error::AlreadyRelaidOut);
    }
    Ok(relayout_v_impl(f, VLayout::B2Fastest))
}

fn relayout_v_impl(f: &MonarchFactors, to: VLayout) -> MonarchFactors {
    let (b1, b2, rp_n, p) = (f.b1, f.b2, f.r_prime, f.p());
    let mut out = f.clone();
    let comp_to = |k: usize, rp: usize| match to {
        VLayout::B2Fastest => rp * b2 + k,
        VLayout::RPrimeFastest => k * rp_n + rp,
    };
    let slab = rp_n * b2 * p;
    let (src, dst) = (f.v.data(), out.v.data_mut());
    for l in 0..b1 {
        for k in 0..b2 {
            for rp in 0..rp_n {
                let from = l * slab + f.v_comp(k, rp) * p;
                let to_off = l * slab + comp_to(k, rp) * p;
                dst[to_off..to_off + p].copy_from_slice(&src[from..from + p]);
            }
        }
    }
    out.v_layout = to;
    out
}

/// Offline row pre-permutation of the next layer's weight so that a
/// transposed-mode activation (flattened j·b2 + k) multiplied by the result
/// equals the canonical activation (flattened k·q + j) multiplied by the
/// original: W_pre[j·b2 + k, :] = W_next[k·q + j, :].
pub fn prepermute_downstream_weight(w_next: &Tensor, b2: usize, q: usize) -> Result<Tensor> {
    let (o, m) = dims2(w_next, "downstream weight")?;
    if b2 == 0 || q == 0 || b2 * q != o {
        return Err(Error::InvalidArgument(format!(
            "rows {o} must equal b2*q = {b2}*{q}"
        )));
    }
    let mut out = vec![0f32; o * m];
    for k in 0..b2 {
        for j in 0..q {
            let src = (k * q + j) * m;
            let dst = (j * b2 + k) * m;
            out[dst..dst + m].copy_from_slice(&w_next.data()[src..src + m]);
        }
    }
    Tensor::from_vec(&[o, m], out)
}

/// Populate the (r, b2, b1) pre-transposed copy of S used by the
/// reordered executor: S_T[rho, k, l] = S[l, k, rho]. Idempotent; values of
/// V/S/U are untouched.
pub fn pretranspose_blast_s(f: &BlastFactors) -> BlastFactors {
    let (b1, b2, r) = (f.b1, f.b2, f.r());
    let mut st = Tensor::zeros(&[r, b2, b1]);
    {
        let sd = f.s.data();
        let td = st.data_mut();
        for l in 0..b1 {
            for k in 0..b2 {
                for rho in 0..r {
                    td[(rho * b2 + k) * b1 + l] = sd[(l * b2 + k) * r + rho];
                }
            }
        }
    }
    let mut out = f.clone();
    out.s_t = Some(st);
    out
}

fn dims2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::ShapeMismatch(format!(
            "{what} must be rank-2, got {s:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rel_fro_err;

    #[test]
    fn param_counts() {
        let d = WorkloadSpec::new(Method::Dense, 1, 4, 4, 0, 0).unwrap();
        assert_eq!(param_count(&d).unwrap(), 16);

        let lr = WorkloadSpec::new(Method::LowRank, 1, 4096, 4096, 1024, 0).unwrap();
        assert_eq!(param_count(&lr).unwrap(), 8_388_608);

        let m = WorkloadSpec::new(Method::Monarch, 1, 4096, 4096, 1024, 16).unwrap();
        assert_eq!(param_count(&m).unwrap(), param_count(&lr).unwrap());

        let bl = WorkloadSpec::new(Method::Blast, 1, 4096, 4096, 1024, 16).unwrap();
        assert_eq!(param_count(&bl).unwrap(), 8_650_752);
    }

    #[test]
    fn spec_validation() {
        assert!(WorkloadSpec::new(Method::Monarch, 1, 10, 10, 4, 3).is_err());
        assert!(WorkloadSpec::new(Method::Monarch, 1, 12, 12, 5, 3).is_err());
        assert!(WorkloadSpec::new(Method::Blast, 1, 12, 9, 5, 3).is_ok());
        assert!(WorkloadSpec::new(Method::LowRank, 1, 12, 9, 0, 0).is_err());
        assert!(WorkloadSpec::new(Method::Dense, 0, 4, 4, 0, 0).is_err());
    }

    #[test]
    fn blast_reconstruct_single_block() {
        // V=[[1],[0]], S diag=[2], U=[[3,4]] -> W = [[6,8],[0,0]].
        let v = Tensor::from_vec(&[1, 2, 1], vec![1.0, 0.0]).unwrap();
        let s = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let u = Tensor::from_vec(&[1, 1, 2], vec![3.0, 4.0]).unwrap();
        let f = BlastFactors::new(v, s, u).unwrap();
        let w = f.to_dense();
        assert_eq!(w.shape(), &[2, 2]);
        assert_eq!(w.data(), &[6.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn lowrank_reconstruct_identity_padded() {
        // V = I_r padded with zero rows: W's top r rows equal U.
        let (i, r, o) = (5, 2, 3);
        let mut v = vec![0f32; i * r];
        v[0] = 1.0;
        v[r + 1] = 1.0; // rows 0,1 are e_0, e_1
        let u: Vec<f32> = (0..r * o).map(|x| x as f32 + 1.0).collect();
        let f = LowRankFactors::new(
            Tensor::from_vec(&[i, r], v).unwrap(),
            Tensor::from_vec(&[r, o], u.clone()).unwrap(),
        )
        .unwrap();
        let w = f.to_dense();
        assert_eq!(&w.data()[..r * o], &u[..]);
        assert!(w.data()[r * o..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn monarch_single_block_equals_lowrank() {
        // b1=b2=1: V is (1, r', p), U is (1, q, r'); reconstruction equals
        // the plain low-rank product of V_{0,0} (p×r') and U_{0,0} (r'×q).
        let (p, q, rp) = (4, 5, 2);
        let vdata: Vec<f32> = (0..rp * p).map(|x| (x as f32 * 0.37).sin()).collect();
        let udata: Vec<f32> = (0..q * rp).map(|x| (x as f32 * 0.61).cos()).collect();
        let m = MonarchFactors::new(
            Tensor::from_vec(&[1, rp, p], vdata.clone()).unwrap(),
            Tensor::from_vec(&[1, q, rp], udata.clone()).unwrap(),
            1,
            1,
            rp,
            VLayout::B2Fastest,
        )
        .unwrap();
        // Build the equivalent plain factors: V[a, rho] = vdata[rho*p + a]
        // (composite stores rank-major), U[rho, j] = udata[j*rp + rho].
        let mut v = vec![0f32; p * rp];
        for a in 0..p {
            for rho in 0..rp {
                v[a * rp + rho] = vdata[rho * p + a];
            }
        }
        let mut u = vec![0f32; rp * q];
        for rho in 0..rp {
            for j in 0..q {
                u[rho * q + j] = udata[j * rp + rho];
            }
        }
        let lr = LowRankFactors::new(
            Tensor::from_vec(&[p, rp], v).unwrap(),
            Tensor::from_vec(&[rp, q], u).unwrap(),
        )
        .unwrap();
        assert!(rel_fro_err(&m.to_dense(), &lr.to_dense()) < 1e-6);
    }

    #[test]
    fn relayout_reorders_composite_and_roundtrips() {
        // b2=2, r'=2: b2-fastest order [(k0,r0),(k1,r0),(k0,r1),(k1,r1)]
        // becomes r'-fastest [(k0,r0),(k0,r1),(k1,r0),(k1,r1)].
        let (b1, b2, rp, p, q) = (1, 2, 2, 1, 1);
        let v = Tensor::from_vec(&[b1, rp * b2, p], vec![10., 20., 11., 21.]).unwrap();
        let u = Tensor::zeros(&[b2, q, b1 * rp]);
        let f = MonarchFactors::new(v, u, b1, b2, rp, VLayout::B2Fastest).unwrap();
        let g = relayout_monarch_v(&f).unwrap();
        assert_eq!(g.v_layout(), VLayout::RPrimeFastest);
        assert_eq!(g.v().data(), &[10., 11., 20., 21.]);
        assert!(relayout_monarch_v(&g).is_err(), "already re-laid-out");

        let back = relayout_monarch_v_inverse(&g).unwrap();
        assert_eq!(back.v().data(), f.v().data());
        assert!(relayout_monarch_v_inverse(&f).is_err());
    }

    #[test]
    fn relayout_preserves_reconstruction_exactly() {
        let w = crate::synth::synth_dense_weight(12, 8, 42);
        let f = factor_monarch(&w, 2, 3).unwrap();
        let g = relayout_monarch_v(&f).unwrap();
        assert_eq!(f.to_dense().data(), g.to_dense().data());
    }

    #[test]
    fn prepermute_small_map() {
        // b2=2, q=2, m=1: rows [0,1,2,3] -> [0,2,1,3].
        let w = Tensor::from_vec(&[4, 1], vec![0., 1., 2., 3.]).unwrap();
        let p = prepermute_downstream_weight(&w, 2, 2).unwrap();
        assert_eq!(p.data(), &[0., 2., 1., 3.]);
        // b2=1 is the identity.
        let id = prepermute_downstream_weight(&w, 1, 4).unwrap();
        assert_eq!(id.data(), w.data());
        assert!(prepermute_downstream_weight(&w, 3, 2).is_err());
    }

    #[test]
    fn pretranspose_definition_and_roundtrip() {
        let (b1, b2, r) = (2, 3, 4);
        let sdata: Vec<f32> = (0..b1 * b2 * r).map(|x| x as f32).collect();
        let f = BlastFactors::new(
            Tensor::zeros(&[b1, 2, r]),
            Tensor::from_vec(&[b1, b2, r], sdata).unwrap(),
            Tensor::zeros(&[b2, r, 2]),
        )
        .unwrap();
        let g = pretranspose_blast_s(&f);
        let st = g.s_t().unwrap();
        assert_eq!(st.shape(), &[r, b2, b1]);
        for l in 0..b1 {
            for k in 0..b2 {
                for rho in 0..r {
                    assert_eq!(st.at(&[rho, k, l]), f.s().at(&[l, k, rho]));
                }
            }
        }
        // Idempotent: applying again recomputes the same table.
        let h = pretranspose_blast_s(&g);
        assert_eq!(h.s_t().unwrap().data(), st.data());
        // Round-trip back to S.
        for rho in 0..r {
            for k in 0..b2 {
                for l in 0..b1 {
                    assert_eq!(st.at(&[rho, k, l]), f.s().at(&[l, k, rho]));
                }
            }
        }
        // b1=b2=1: S_T is S reshaped.
        let f1 = BlastFactors::new(
            Tensor::zeros(&[1, 2, r]),
            Tensor::from_vec(&[1, 1, r], vec![1., 2., 3., 4.]).unwrap(),
            Tensor::zeros(&[1, r, 2]),
        )
        .unwrap();
        let g1 = pretranspose_blast_s(&f1);
        assert_eq!(g1.s_t().unwrap().data(), f1.s().data());
    }

    #[test]
    fn factor_low_rank_rank_one_exact() {
        let u = [1.5f32, -2.0, 0.5];
        let v = [0.3f32, 1.1, -0.7, 2.2];
        let mut w = vec![0f32; 12];
        for a in 0..3 {
            for b in 0..4 {
                w[a * 4 + b] = u[a] * v[b];
            }
        }
        let w = Tensor::from_vec(&[3, 4], w).unwrap();
        let f = factor_low_rank(&w, 1).unwrap();
        assert!(rel_fro_err(&f.to_dense(), &w) <= 1e-5);
    }

    #[test]
    fn factor_low_rank_truncation_error_is_discarded_sigma() {
        let w = Tensor::from_vec(&[3, 3], vec![3., 0., 0., 0., 2., 0., 0., 0., 1.]).unwrap();
        let f = factor_low_rank(&w, 2).unwrap();
        let rec = f.to_dense();
        let mut err2 = 0f64;
        for (a, b) in rec.data().iter().zip(w.data()) {
            err2 += ((a - b) as f64).powi(2);
        }
        assert!((err2.sqrt() - 1.0).abs() < 1e-6, "Frobenius error should be the dropped singular value");
    }

    #[test]
    fn factor_low_rank_range_checks() {
        let w = Tensor::zeros(&[4, 6]);
        assert!(factor_low_rank(&w, 0).is_err());
        assert!(factor_low_rank(&w, 5).is_err());
    }

    #[test]
    fn factor_monarch_b1_reduces_to_low_rank() {
        let w = crate::synth::synth_dense_weight(10, 8, 7);
        let m = factor_monarch(&w, 1, 3).unwrap();
        let lr = factor_low_rank(&w, 3).unwrap();
        assert!(rel_fro_err(&m.to_dense(), &lr.to_dense()) <= 1e-5);
    }

    #[test]
    fn factor_monarch_blockwise_optimum() {
        // 2x2 blocks, each diagonal: per-block rank-1 truncation keeps the
        // larger value and drops the smaller (per-block optimum).
        let mut w = vec![0f32; 4 * 4];
        let diag = [[5.0f32, 1.0], [0.5, 4.0], [3.0, 2.0], [0.1, 6.0]];
        for l in 0..2 {
            for k in 0..2 {
                let d = diag[l * 2 + k];
                w[(l * 2) * 4 + k * 2] = d[0];
                w[(l * 2 + 1) * 4 + k * 2 + 1] = d[1];
            }
        }
        let w = Tensor::from_vec(&[4, 4], w).unwrap();
        let f = factor_monarch(&w, 2, 1).unwrap();
        let rec = f.to_dense();
        let mut err2 = 0f64;
        for (a, b) in rec.data().iter().zip(w.data()) {
            err2 += ((a - b) as f64).powi(2);
        }
        let want: f64 = diag.iter().map(|d| (d[0].min(d[1]) as f64).powi(2)).sum();
        assert!((err2 - want).abs() < 1e-8);
    }

    #[test]
    fn factor_monarch_roundtrip_on_structured_input() {
        let truth = crate::synth::synth_factors(
            &WorkloadSpec::new(Method::Monarch, 1, 12, 12, 6, 2).unwrap(),
            11,
        )
        .unwrap();
        let w = truth.to_dense();
        let f = factor_monarch(&w, 2, 3).unwrap();
        assert!(rel_fro_err(&f.to_dense(), &w) <= 1e-4);
    }
}
