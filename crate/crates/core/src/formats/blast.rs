//! Fitting the shared-basis block format to a dense weight.
//!
//! `factor_blast` minimizes sum_{l,k} ||W_lk - V_l diag(S_lk) U_k||_F^2
//! over the shared per-block-row bases V_l, per-block-column bases U_k and
//! the coupling diagonals S_lk. The problem is a constrained three-factor
//! decomposition, so unlike the SVD-based factorizations this one is
//! iterative:
//!
//! 1. Candidate inits: a spectral alignment construction (exact on
//!    noiseless structured inputs, see [`spectral_init`]'s notes) plus a
//!    per-axis SVD least-squares init, plus seeded random-coupling
//!    restarts.
//! 2. Refinement: block coordinate descent where each V_l / U_k update
//!    solves its damped normal equations exactly (the `learning_rate`
//!    interpolates between no step and the full least-squares solve), the
//!    diagonals are re-solved exactly from their Gram system after every
//!    half-sweep, and a cube-root-schedule extrapolation step is accepted
//!    only when it improves the loss.
//!
//! All randomness is internally seeded, so the result is a deterministic
//! function of (W, b, r, steps, learning_rate). Cost per sweep is
//! O(i·o·r + (b1+b2)·r^3), so keep r modest when fitting large weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::smallmat::{self, invert, matmul, solve, transpose};
use super::svd::svd_thin;
use super::BlastFactors;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Absolute Tikhonov ridge on every normal-equation solve.
const RIDGE: f64 = 1e-10;
/// Relative-error target that short-circuits remaining sweeps/restarts.
const REL_TARGET: f64 = 1e-7;
/// Power-iteration length inside the spectral init's eigendecomposition.
const POWER_ITERS: usize = 500;
/// Shift coefficient for the eigendecomposition (pushes the spectrum to
/// one sign so power iteration separates eigenvalues reliably).
const SHIFT_COEFF: f64 = 0.739_085_133_215_160_7;
/// Number of descent runs (1 least-squares init + random-coupling restarts).
const DESCENT_RUNS: usize = 3;

pub struct BlastFit {
    pub factors: BlastFactors,
    /// Final sum of squared residuals over all blocks.
    pub loss: f64,
    /// ||W - reconstruction||_F / ||W||_F (0 when W is all zero).
    pub rel_error: f64,
}

#[derive(Clone, Copy)]
struct Dims {
    b1: usize,
    b2: usize,
    p: usize,
    q: usize,
    r: usize,
}

#[derive(Clone)]
struct State {
    v: Vec<f64>, // (b1, p, r) row-major
    s: Vec<f64>, // (b1, b2, r)
    u: Vec<f64>, // (b2, r, q)
}

impl State {
    fn v_l(&self, d: Dims, l: usize) -> &[f64] {
        &self.v[l * d.p * d.r..(l + 1) * d.p * d.r]
    }

    fn u_k(&self, d: Dims, k: usize) -> &[f64] {
        &self.u[k * d.r * d.q..(k + 1) * d.r * d.q]
    }

    fn s_lk(&self, d: Dims, l: usize, k: usize) -> &[f64] {
        &self.s[(l * d.b2 + k) * d.r..(l * d.b2 + k + 1) * d.r]
    }
}

fn block(blocks: &[f64], d: Dims, l: usize, k: usize) -> &[f64] {
    &blocks[(l * d.b2 + k) * d.p * d.q..(l * d.b2 + k + 1) * d.p * d.q]
}

/// Sum of squared residuals of the current factors against all blocks.
fn loss(blocks: &[f64], st: &State, d: Dims) -> f64 {
    let mut err = 0f64;
    let mut su = vec![0f64; d.r * d.q];
    for l in 0..d.b1 {
        for k in 0..d.b2 {
            let s = st.s_lk(d, l, k);
            let u = st.u_k(d, k);
            for rho in 0..d.r {
                for j in 0..d.q {
                    su[rho * d.q + j] = s[rho] * u[rho * d.q + j];
                }
            }
            let rec = matmul(st.v_l(d, l), &su, d.p, d.r, d.q);
            let w = block(blocks, d, l, k);
            for (a, b) in rec.iter().zip(w) {
                let e = a - b;
                err += e * e;
            }
        }
    }
    err
}

/// Exact re-solve of every coupling diagonal from its normal equations:
/// (V_l^T V_l ∘ U_k U_k^T + ridge) s = c, c_rho = v_rho^T W_lk u_rho.
fn resolve_s(blocks: &[f64], st: &mut State, d: Dims) {
    let gv: Vec<Vec<f64>> = (0..d.b1)
        .map(|l| {
            let v = st.v_l(d, l);
            matmul(&transpose(v, d.p, d.r), v, d.r, d.p, d.r)
        })
        .collect();
    let gu: Vec<Vec<f64>> = (0..d.b2)
        .map(|k| {
            let u = st.u_k(d, k);
            matmul(u, &transpose(u, d.r, d.q), d.r, d.q, d.r)
        })
        .collect();
    for l in 0..d.b1 {
        for k in 0..d.b2 {
            let mut g = vec![0f64; d.r * d.r];
            for x in 0..d.r * d.r {
                g[x] = gv[l][x] * gu[k][x];
            }
            for x in 0..d.r {
                g[x * d.r + x] += RIDGE;
            }
            // c[rho] = sum_a V[a,rho] * (W U^T)[a,rho]
            let t = matmul(
                block(blocks, d, l, k),
                &transpose(st.u_k(d, k), d.r, d.q),
                d.p,
                d.q,
                d.r,
            );
            let v = st.v_l(d, l);
            let mut c = vec![0f64; d.r];
            for a in 0..d.p {
                for rho in 0..d.r {
                    c[rho] += v[a * d.r + rho] * t[a * d.r + rho];
                }
            }
            let sol = solve(&g, &c, d.r, 1).or_else(|| {
                let mut g2 = g.clone();
                for x in 0..d.r {
                    g2[x * d.r + x] += 1e-6;
                }
                solve(&g2, &c, d.r, 1)
            });
            if let Some(snew) = sol {
                st.s[(l * d.b2 + k) * d.r..(l * d.b2 + k + 1) * d.r].copy_from_slice(&snew);
            }
        }
    }
}

/// Damped exact update of every V_l against the current S and U.
fn update_v(blocks: &[f64], st: &mut State, d: Dims, lr: f64) {
    let gu: Vec<Vec<f64>> = (0..d.b2)
        .map(|k| {
            let u = st.u_k(d, k);
            matmul(u, &transpose(u, d.r, d.q), d.r, d.q, d.r)
        })
        .collect();
    for l in 0..d.b1 {
        // M = sum_k (s s^T) ∘ (U_k U_k^T);  C = sum_k W_lk U_k^T diag(s).
        let mut m = vec![0f64; d.r * d.r];
        let mut c = vec![0f64; d.p * d.r];
        for k in 0..d.b2 {
            let s = st.s_lk(d, l, k);
            for x in 0..d.r {
                for y in 0..d.r {
                    m[x * d.r + y] += s[x] * s[y] * gu[k][x * d.r + y];
                }
            }
            let t = matmul(
                block(blocks, d, l, k),
                &transpose(st.u_k(d, k), d.r, d.q),
                d.p,
                d.q,
                d.r,
            );
            for a in 0..d.p {
                for rho in 0..d.r {
                    c[a * d.r + rho] += t[a * d.r + rho] * s[rho];
                }
            }
        }
        for x in 0..d.r {
            m[x * d.r + x] += RIDGE;
        }
        // Gradient is 2(V M - C); the damped solve moves V toward C M^{-1}.
        let v = st.v_l(d, l).to_vec();
        let vm = matmul(&v, &m, d.p, d.r, d.r);
        let mut gt = vec![0f64; d.r * d.p]; // (r, p): gradient transposed
        for a in 0..d.p {
            for rho in 0..d.r {
                gt[rho * d.p + a] = 2.0 * (vm[a * d.r + rho] - c[a * d.r + rho]);
            }
        }
        if let Some(x) = solve(&m, &gt, d.r, d.p) {
            let dst = &mut st.v[l * d.p * d.r..(l + 1) * d.p * d.r];
            for a in 0..d.p {
                for rho in 0..d.r {
                    dst[a * d.r + rho] -= 0.5 * lr * x[rho * d.p + a];
                }
            }
        }
    }
}

/// Damped exact update of every U_k against the current V and S.
fn update_u(blocks: &[f64], st: &mut State, d: Dims, lr: f64) {
    let gv: Vec<Vec<f64>> = (0..d.b1)
        .map(|l| {
            let v = st.v_l(d, l);
            matmul(&transpose(v, d.p, d.r), v, d.r, d.p, d.r)
        })
        .collect();
    for k in 0..d.b2 {
        let mut m = vec![0f64; d.r * d.r];
        let mut c = vec![0f64; d.r * d.q];
        for l in 0..d.b1 {
            let s = st.s_lk(d, l, k);
            for x in 0..d.r {
                for y in 0..d.r {
                    m[x * d.r + y] += s[x] * s[y] * gv[l][x * d.r + y];
                }
            }
            // C += diag(s) V_l^T W_lk
            let t = matmul(
                &transpose(st.v_l(d, l), d.p, d.r),
                block(blocks, d, l, k),
                d.r,
                d.p,
                d.q,
            );
            for rho in 0..d.r {
                for j in 0..d.q {
                    c[rho * d.q + j] += s[rho] * t[rho * d.q + j];
                }
            }
        }
        for x in 0..d.r {
            m[x * d.r + x] += RIDGE;
        }
        let u = st.u_k(d, k).to_vec();
        let mu = matmul(&m, &u, d.r, d.r, d.q);
        let mut g = vec![0f64; d.r * d.q];
        for x in 0..d.r * d.q {
            g[x] = 2.0 * (mu[x] - c[x]);
        }
        if let Some(x) = solve(&m, &g, d.r, d.q) {
            let dst = &mut st.u[k * d.r * d.q..(k + 1) * d.r * d.q];
            for idx in 0..d.r * d.q {
                dst[idx] -= 0.5 * lr * x[idx];
            }
        }
    }
}

/// Runs `steps` descent sweeps from `st`, returning the best iterate seen
/// and its loss. Errors with [`Error::Divergence`] if the loss goes
/// non-finite.
fn refine(
    blocks: &[f64],
    mut st: State,
    d: Dims,
    steps: usize,
    lr: f64,
    loss_target: f64,
) -> Result<(State, f64)> {
    let mut best = loss(blocks, &st, d);
    if !best.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    let mut best_state = st.clone();
    if best <= loss_target {
        return Ok((best_state, best));
    }
    let mut prev: Option<State> = None;
    for step in 0..steps {
        update_v(blocks, &mut st, d, lr);
        resolve_s(blocks, &mut st, d);
        update_u(blocks, &mut st, d, lr);
        resolve_s(blocks, &mut st, d);
        let mut cur = loss(blocks, &st, d);
        if !cur.is_finite() {
            return Err(Error::Divergence { step });
        }
        if cur < best {
            best = cur;
            best_state = st.clone();
        }
        if best <= loss_target {
            break;
        }
        if let Some(pv) = &prev {
            // Nesterov-flavored extrapolation along the last accepted move,
            // kept only when it actually helps (ALS sweeps alone are
            // monotone but crawl through plateaus).
            let beta = ((step + 1) as f64).cbrt() - 1.0;
            let mut cand = st.clone();
            for (c, (x, xp)) in cand
                .v
                .iter_mut()
                .chain(cand.s.iter_mut())
                .chain(cand.u.iter_mut())
                .zip(
                    st.v.iter()
                        .chain(st.s.iter())
                        .chain(st.u.iter())
                        .zip(pv.v.iter().chain(pv.s.iter()).chain(pv.u.iter())),
                )
            {
                *c = x + beta * (x - xp);
            }
            let cl = loss(blocks, &cand, d);
            if cl.is_finite() && cl < cur {
                st = cand;
                cur = cl;
                if cur < best {
                    best = cur;
                    best_state = st.clone();
                }
                if best <= loss_target {
                    break;
                }
            }
        }
        prev = Some(st.clone());
    }
    Ok((best_state, best))
}

/// Per-axis SVD init: V_l spans the row-block's column space, U_k spans the
/// column-block's row space, coupling all ones. Extra directions beyond
/// what the data supports (r larger than the block subspace) are filled
/// with seeded noise so descent can still use them.
fn ls_init(blocks: &[f64], d: Dims, rng: &mut ChaCha8Rng) -> Result<State> {
    let mut st = State {
        v: vec![0f64; d.b1 * d.p * d.r],
        s: vec![1f64; d.b1 * d.b2 * d.r],
        u: vec![0f64; d.b2 * d.r * d.q],
    };
    let pad_scale = 1.0 / (d.r as f64).sqrt();
    for l in 0..d.b1 {
        // hstack of the l-th block row: p x (b2*q).
        let cols = d.b2 * d.q;
        let mut hst = vec![0f64; d.p * cols];
        for k in 0..d.b2 {
            let w = block(blocks, d, l, k);
            for a in 0..d.p {
                hst[a * cols + k * d.q..a * cols + k * d.q + d.q]
                    .copy_from_slice(&w[a * d.q..a * d.q + d.q]);
            }
        }
        let dec = svd_thin(&hst, d.p, cols)?;
        let c = dec.sigma.len();
        let take = d.r.min(c);
        let dst = &mut st.v[l * d.p * d.r..(l + 1) * d.p * d.r];
        for a in 0..d.p {
            for rho in 0..take {
                dst[a * d.r + rho] = dec.u[a * c + rho];
            }
            for rho in take..d.r {
                let x: f64 = StandardNormal.sample(rng);
                dst[a * d.r + rho] = x * pad_scale;
            }
        }
    }
    for k in 0..d.b2 {
        // vstack of the k-th block column: (b1*p) x q.
        let rows = d.b1 * d.p;
        let mut vst = vec![0f64; rows * d.q];
        for l in 0..d.b1 {
            let w = block(blocks, d, l, k);
            vst[l * d.p * d.q..(l + 1) * d.p * d.q].copy_from_slice(w);
        }
        let dec = svd_thin(&vst, rows, d.q)?;
        let c = dec.sigma.len();
        let take = d.r.min(c);
        let dst = &mut st.u[k * d.r * d.q..(k + 1) * d.r * d.q];
        dst[..take * d.q].copy_from_slice(&dec.vt[..take * d.q]);
        for x in dst[take * d.q..].iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *x = g * pad_scale;
        }
    }
    Ok(st)
}

/// Eigenvector matrix of a real matrix assumed diagonalizable with real
/// spectrum (the alignment matrices this is applied to are similar to real
/// diagonal matrices by construction). Shifted power iteration with
/// two-sided Wielandt deflation produces eigenvalue estimates; each
/// eigenvector is then sharpened by inverse iteration against the original
/// matrix, which fixes the deflation-error accumulation power iteration
/// suffers when eigenvalue magnitudes are close. Columns are the
/// eigenvectors.
fn eig_real_diagonalizable(a: &[f64], r: usize) -> Vec<f64> {
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = fro / (r as f64).sqrt().max(1.0);
    let sigma = SHIFT_COEFF * scale;
    let mut shifted = a.to_vec();
    for x in 0..r {
        shifted[x * r + x] += sigma;
    }
    let mut ad = shifted.clone();
    let mut atd = transpose(&ad, r, r);
    let mut vectors = vec![0f64; r * r];
    let matvec = |m: &[f64], x: &[f64], out: &mut [f64]| {
        for row in 0..r {
            let mut acc = 0f64;
            for col in 0..r {
                acc += m[row * r + col] * x[col];
            }
            out[row] = acc;
        }
    };
    let normalize = |x: &mut [f64]| {
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in x.iter_mut() {
                *v /= n;
            }
        }
    };
    let mut tmp = vec![0f64; r];
    for j in 0..r {
        let mut v = vec![1f64; r];
        v[j % r] += 0.5;
        normalize(&mut v);
        let mut w = vec![1f64; r];
        w[(j + 1) % r] += 0.25;
        normalize(&mut w);
        for _ in 0..POWER_ITERS {
            matvec(&ad, &v, &mut tmp);
            v.copy_from_slice(&tmp);
            normalize(&mut v);
            matvec(&atd, &w, &mut tmp);
            w.copy_from_slice(&tmp);
            normalize(&mut w);
        }
        matvec(&ad, &v, &mut tmp);
        let mut lam: f64 = v.iter().zip(&tmp).map(|(a, b)| a * b).sum();

        // Rayleigh-quotient inverse iteration on the undeflated matrix.
        for _ in 0..6 {
            let mut sys = shifted.clone();
            for x in 0..r {
                sys[x * r + x] -= lam;
            }
            match solve(&sys, &v, r, 1) {
                Some(x) => {
                    let mut x = x;
                    normalize(&mut x);
                    v.copy_from_slice(&x);
                    matvec(&shifted, &v, &mut tmp);
                    let new_lam: f64 = v.iter().zip(&tmp).map(|(a, b)| a * b).sum();
                    if (new_lam - lam).abs() <= 1e-14 * scale.max(1.0) {
                        lam = new_lam;
                        break;
                    }
                    lam = new_lam;
                }
                // Exactly singular shift: nudge and retry.
                None => lam += 1e-10 * scale.max(1.0),
            }
        }

        let mut denom: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        if denom.abs() < 1e-13 {
            denom = 1e-13_f64.copysign(denom);
        }
        for row in 0..r {
            for col in 0..r {
                ad[row * r + col] -= lam * v[row] * w[col] / denom;
            }
        }
        atd = transpose(&ad, r, r);
        for row in 0..r {
            vectors[row * r + j] = v[row];
        }
    }
    vectors
}

/// Off-diagonal mass of X^{-1} A X relative to its diagonal mass: 0 when X
/// exactly diagonalizes A.
fn diagonalization_residual(a: &[f64], x: &[f64], xi: &[f64], r: usize) -> f64 {
    let e = matmul(&matmul(xi, a, r, r, r), x, r, r, r);
    let mut off = 0f64;
    let mut on = 0f64;
    for row in 0..r {
        for col in 0..r {
            let v = e[row * r + col] * e[row * r + col];
            if row == col {
                on += v;
            } else {
                off += v;
            }
        }
    }
    off / on.max(1e-300)
}

/// Spectral alignment init. On an exactly structured W with generic
/// factors this recovers the decomposition up to per-direction scaling:
/// project every block onto per-row-block/per-column-block rank-r bases
/// (M_lk = Q_l^T W_lk R_k^T), then note that M_00 M_10^{-1} (M_01 M_11^{-1})^{-1}
/// is similar to a real diagonal matrix whose eigenbasis aligns the
/// projected coordinates; anchoring S_0k = S_l0 = 1 fixes the scaling
/// freedom and the remaining diagonals fall out by direct projection.
/// Returns None when any alignment matrix is singular (e.g. rank-deficient
/// blocks); callers fall back to the least-squares init.
fn spectral_init(blocks: &[f64], d: Dims) -> Option<State> {
    if d.b1 < 2 || d.b2 < 2 || d.r > d.p.min(d.q) {
        return None;
    }
    let mut q_bases = Vec::with_capacity(d.b1); // Q_l: p x r
    for l in 0..d.b1 {
        let cols = d.b2 * d.q;
        let mut hst = vec![0f64; d.p * cols];
        for k in 0..d.b2 {
            let w = block(blocks, d, l, k);
            for a in 0..d.p {
                hst[a * cols + k * d.q..a * cols + k * d.q + d.q]
                    .copy_from_slice(&w[a * d.q..a * d.q + d.q]);
            }
        }
        let dec = svd_thin(&hst, d.p, cols).ok()?;
        let c = dec.sigma.len();
        if c < d.r {
            return None;
        }
        let mut qb = vec![0f64; d.p * d.r];
        for a in 0..d.p {
            for rho in 0..d.r {
                qb[a * d.r + rho] = dec.u[a * c + rho];
            }
        }
        q_bases.push(qb);
    }
    let mut r_bases = Vec::with_capacity(d.b2); // R_k: r x q
    for k in 0..d.b2 {
        let rows = d.b1 * d.p;
        let mut vst = vec![0f64; rows * d.q];
        for l in 0..d.b1 {
            vst[l * d.p * d.q..(l + 1) * d.p * d.q].copy_from_slice(block(blocks, d, l, k));
        }
        let dec = svd_thin(&vst, rows, d.q).ok()?;
        if dec.sigma.len() < d.r {
            return None;
        }
        r_bases.push(dec.vt[..d.r * d.q].to_vec());
    }
    // M_lk = Q_l^T W_lk R_k^T, all r x r.
    let m_lk = |l: usize, k: usize| -> Vec<f64> {
        let t = matmul(
            &transpose(&q_bases[l], d.p, d.r),
            block(blocks, d, l, k),
            d.r,
            d.p,
            d.q,
        );
        matmul(&t, &transpose(&r_bases[k], d.r, d.q), d.r, d.q, d.r)
    };
    // Frame generators: G_k = M_0k M_1k^{-1} is similar to a diagonal
    // matrix through A_0, for every k, so quotients of (random) linear
    // combinations of the G_k all share the eigenframe we are after. If one
    // combination has clustered eigenvalues that defeat the eigensolver, a
    // re-rolled combination generically does not; keep the attempt whose
    // eigenbasis actually diagonalizes its matrix best.
    let rr = d.r * d.r;
    let mut gens: Vec<Vec<f64>> = Vec::new();
    for k in 0..d.b2 {
        if let Some(minv) = invert(&m_lk(1, k), d.r) {
            gens.push(matmul(&m_lk(0, k), &minv, d.r, d.r, d.r));
        }
    }
    if gens.len() < 2 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0A11);
    let mut best_frame: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    for attempt in 0..8 {
        let rmat = if attempt == 0 {
            let Some(g1i) = invert(&gens[1], d.r) else {
                continue;
            };
            matmul(&gens[0], &g1i, d.r, d.r, d.r)
        } else {
            let mut num = vec![0f64; rr];
            let mut den = vec![0f64; rr];
            for g in &gens {
                let cn: f64 = StandardNormal.sample(&mut rng);
                let cd: f64 = StandardNormal.sample(&mut rng);
                for x in 0..rr {
                    num[x] += cn * g[x];
                    den[x] += cd * g[x];
                }
            }
            let Some(di) = invert(&den, d.r) else {
                continue;
            };
            matmul(&num, &di, d.r, d.r, d.r)
        };
        let a0 = eig_real_diagonalizable(&rmat, d.r);
        let Some(a0i) = invert(&a0, d.r) else {
            continue;
        };
        let res = diagonalization_residual(&rmat, &a0, &a0i, d.r);
        if best_frame.as_ref().map_or(true, |(b, _, _)| res < *b) {
            best_frame = Some((res, a0, a0i));
        }
        if res < 1e-12 {
            break;
        }
    }
    let (_, a0, a0i) = best_frame?;

    let mut b_mats = Vec::with_capacity(d.b2); // B_k: r x r
    for k in 0..d.b2 {
        b_mats.push(matmul(&a0i, &m_lk(0, k), d.r, d.r, d.r));
    }
    let b0i = invert(&b_mats[0], d.r)?;
    let mut a_mats = Vec::with_capacity(d.b1); // A_l: r x r
    a_mats.push(a0.clone());
    for l in 1..d.b1 {
        a_mats.push(matmul(&m_lk(l, 0), &b0i, d.r, d.r, d.r));
    }

    let mut st = State {
        v: vec![0f64; d.b1 * d.p * d.r],
        s: vec![1f64; d.b1 * d.b2 * d.r],
        u: vec![0f64; d.b2 * d.r * d.q],
    };
    for l in 0..d.b1 {
        let v = matmul(&q_bases[l], &a_mats[l], d.p, d.r, d.r);
        st.v[l * d.p * d.r..(l + 1) * d.p * d.r].copy_from_slice(&v);
    }
    for k in 0..d.b2 {
        let u = matmul(&b_mats[k], &r_bases[k], d.r, d.r, d.q);
        st.u[k * d.r * d.q..(k + 1) * d.r * d.q].copy_from_slice(&u);
    }
    // Anchors: S_0k = S_l0 = 1 by construction; interior diagonals by
    // projection D = A_l^{-1} M_lk B_k^{-1}.
    let b_invs: Vec<Option<Vec<f64>>> = b_mats.iter().map(|b| invert(b, d.r)).collect();
    for l in 1..d.b1 {
        let ali = invert(&a_mats[l], d.r)?;
        for k in 1..d.b2 {
            let bki = b_invs[k].as_ref()?;
            let t = matmul(&ali, &m_lk(l, k), d.r, d.r, d.r);
            let dmat = matmul(&t, bki, d.r, d.r, d.r);
            for rho in 0..d.r {
                st.s[(l * d.b2 + k) * d.r + rho] = dmat[rho * d.r + rho];
            }
        }
    }
    Some(st)
}

/// Fits the shared-basis block format to `w` with `b`×`b` blocks and rank
/// `r`, running up to `steps` descent sweeps per candidate start.
/// Deterministic. Errors with [`Error::Divergence`] if a descent's loss
/// goes non-finite (possible with aggressive learning rates; 1.0 is the
/// exact coordinate solve and is safe).
pub fn factor_blast(
    w: &Tensor,
    b: usize,
    r: usize,
    steps: usize,
    learning_rate: f64,
) -> Result<BlastFit> {
    let (i, o) = match w.shape() {
        [i, o] => (*i, *o),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "weight must be rank-2, got {s:?}"
            )))
        }
    };
    if b == 0 || i % b != 0 || o % b != 0 {
        return Err(Error::InvalidArgument(format!(
            "b={b} must divide i={i} and o={o}"
        )));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning_rate must be positive and finite, got {learning_rate}"
        )));
    }
    let d = Dims {
        b1: b,
        b2: b,
        p: i / b,
        q: o / b,
        r,
    };
    // Copy W into per-block contiguous f64 storage.
    let mut blocks = vec![0f64; i * o];
    for l in 0..d.b1 {
        for k in 0..d.b2 {
            for a in 0..d.p {
                for j in 0..d.q {
                    blocks[(l * d.b2 + k) * d.p * d.q + a * d.q + j] =
                        w.data()[(l * d.p + a) * o + k * d.q + j] as f64;
                }
            }
        }
    }
    let wn2 = smallmat::fro_norm2(&blocks);
    if wn2 == 0.0 {
        let st = State {
            v: vec![0f64; d.b1 * d.p * d.r],
            s: vec![0f64; d.b1 * d.b2 * d.r],
            u: vec![0f64; d.b2 * d.r * d.q],
        };
        return finish(st, d, 0.0, 0.0);
    }
    let loss_target = wn2 * REL_TARGET * REL_TARGET;

    let mut best: Option<(State, f64)> = None;
    let consider = |cand: (State, f64), best: &mut Option<(State, f64)>| {
        if best.as_ref().map_or(true, |(_, bl)| cand.1 < *bl) {
            *best = Some(cand);
        }
    };

    if let Some(init) = spectral_init(&blocks, d) {
        if loss(&blocks, &init, d).is_finite() {
            let got = refine(&blocks, init, d, steps, learning_rate, loss_target)?;
            consider(got, &mut best);
        }
    }
    if best.as_ref().map_or(true, |(_, l)| *l > loss_target) {
        for t in 0..DESCENT_RUNS {
            let mut rng = ChaCha8Rng::seed_from_u64(4242 + t as u64);
            let mut init = ls_init(&blocks, d, &mut rng)?;
            if t == 0 {
                resolve_s(&blocks, &mut init, d);
            } else {
                // Random-coupling restart: same subspaces, fresh diagonals.
                let mut srng = ChaCha8Rng::seed_from_u64(900 + t as u64);
                let scale = 1.0 / (d.r as f64).sqrt();
                for x in init.s.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut srng);
                    *x = g * scale;
                }
            }
            let got = refine(&blocks, init, d, steps, learning_rate, loss_target)?;
            consider(got, &mut best);
            if best.as_ref().map_or(false, |(_, l)| *l <= loss_target) {
                break;
            }
        }
    }
    let (st, final_loss) = best.expect("at least one descent run always executes");
    finish(st, d, final_loss, (final_loss / wn2).sqrt())
}

fn finish(st: State, d: Dims, loss: f64, rel: f64) -> Result<BlastFit> {
    let v = Tensor::from_vec(
        &[d.b1, d.p, d.r],
        st.v.iter().map(|&x| x as f32).collect(),
    )?;
    let s = Tensor::from_vec(
        &[d.b1, d.b2, d.r],
        st.s.iter().map(|&x| x as f32).collect(),
    )?;
    let u = Tensor::from_vec(
        &[d.b2, d.r, d.q],
        st.u.iter().map(|&x| x as f32).collect(),
    )?;
    Ok(BlastFit {
        factors: BlastFactors::new(v, s, u)?,
        loss,
        rel_error: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{Method, WorkloadSpec};
    use crate::synth::synth_factors;
    use crate::tensor::rel_fro_err;

    fn recovery_case(b: usize, r: usize, i: usize, o: usize, seed: u64) -> f64 {
        let spec = WorkloadSpec::new(Method::Blast, 1, i, o, r, b).unwrap();
        let truth = synth_factors(&spec, seed).unwrap().to_dense();
        let fit = factor_blast(&truth, b, r, 300, 1.0).unwrap();
        rel_fro_err(&fit.factors.to_dense(), &truth)
    }

    #[test]
    fn recovers_exact_structure_small() {
        for seed in [1, 2, 3, 4, 5] {
            let err = recovery_case(2, 4, 16, 16, seed);
            assert!(err <= 1e-3, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn recovers_exact_structure_rectangular() {
        let err = recovery_case(2, 3, 12, 8, 9);
        assert!(err <= 1e-3, "rel err {err}");
    }

    #[test]
    fn single_block_matches_truncated_svd() {
        // b=1 degenerates to plain low-rank: the fit must hit the
        // Eckart-Young optimum, i.e. match factor_low_rank's error.
        let w = crate::synth::synth_dense_weight(10, 8, 21);
        let fit = factor_blast(&w, 1, 3, 50, 1.0).unwrap();
        let lr = crate::formats::factor_low_rank(&w, 3).unwrap();
        let e_fit = rel_fro_err(&fit.factors.to_dense(), &w);
        let e_svd = rel_fro_err(&lr.to_dense(), &w);
        assert!(e_fit <= e_svd + 1e-6, "fit {e_fit} vs svd {e_svd}");
    }

    #[test]
    fn exactly_rank_r_single_block_converges() {
        let spec = WorkloadSpec::new(Method::LowRank, 1, 12, 10, 3, 0).unwrap();
        let truth = synth_factors(&spec, 5).unwrap().to_dense();
        let fit = factor_blast(&truth, 1, 3, 50, 1.0).unwrap();
        assert!(fit.rel_error <= 1e-3, "rel err {}", fit.rel_error);
        assert!(rel_fro_err(&fit.factors.to_dense(), &truth) <= 1e-3);
    }

    #[test]
    fn more_steps_never_hurt() {
        let w = crate::synth::synth_dense_weight(16, 16, 33);
        let short = factor_blast(&w, 2, 3, 1, 1.0).unwrap();
        let long = factor_blast(&w, 2, 3, 40, 1.0).unwrap();
        assert!(long.loss <= short.loss + 1e-12);
    }

    #[test]
    fn zero_weight_is_exact() {
        let w = Tensor::zeros(&[8, 8]);
        let fit = factor_blast(&w, 2, 2, 5, 1.0).unwrap();
        assert_eq!(fit.loss, 0.0);
        assert_eq!(fit.rel_error, 0.0);
        assert!(fit.factors.to_dense().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_bad_arguments() {
        let w = Tensor::zeros(&[8, 8]);
        assert!(factor_blast(&w, 3, 2, 5, 1.0).is_err());
        assert!(factor_blast(&w, 2, 0, 5, 1.0).is_err());
        assert!(factor_blast(&w, 2, 2, 5, 0.0).is_err());
        assert!(factor_blast(&w, 2, 2, 5, f64::NAN).is_err());
    }

    #[test]
    #[ignore]
    fn stress_recovery_many_shapes() {
        let mut worst = (0f64, 0, 0, 0);
        for &(b, r, pw) in &[(2, 2, 8), (2, 4, 8), (3, 3, 8), (3, 6, 8), (4, 4, 8), (4, 8, 16), (2, 8, 16)] {
            for seed in 0..10u64 {
                let err = recovery_case(b, r, b * pw, b * pw, seed);
                if err > worst.0 {
                    worst = (err, b, r, seed as usize);
                }
                assert!(err <= 1e-3, "b={b} r={r} seed={seed}: {err}");
            }
        }
        eprintln!("worst: err={:e} at b={} r={} seed={}", worst.0, worst.1, worst.2, worst.3);
    }

    #[test]
    #[ignore]
    fn debug_candidates_seed4() {
        let spec = WorkloadSpec::new(Method::Blast, 1, 16, 16, 4, 2).unwrap();
        let truth = synth_factors(&spec, 4).unwrap().to_dense();
        let (i, o, b, r) = (16usize, 16usize, 2usize, 4usize);
        let d = Dims { b1: b, b2: b, p: i / b, q: o / b, r };
        let mut blocks = vec![0f64; i * o];
        for l in 0..d.b1 {
            for k in 0..d.b2 {
                for a in 0..d.p {
                    for j in 0..d.q {
                        blocks[(l * d.b2 + k) * d.p * d.q + a * d.q + j] =
                            truth.data()[(l * d.p + a) * o + k * d.q + j] as f64;
                    }
                }
            }
        }
        let wn2: f64 = blocks.iter().map(|x| x * x).sum();
        match spectral_init(&blocks, d) {
            None => eprintln!("spectral: None"),
            Some(st) => {
                let l0 = loss(&blocks, &st, d);
                eprintln!("spectral init rel = {:e}", (l0 / wn2).sqrt());
                let (_, lf) = refine(&blocks, st, d, 300, 1.0, 0.0).unwrap();
                eprintln!("spectral refined rel = {:e}", (lf / wn2).sqrt());
            }
        }
        for t in 0..DESCENT_RUNS {
            let mut rng = ChaCha8Rng::seed_from_u64(4242 + t as u64);
            let mut init = ls_init(&blocks, d, &mut rng).unwrap();
            if t == 0 {
                resolve_s(&blocks, &mut init, d);
            } else {
                let mut srng = ChaCha8Rng::seed_from_u64(900 + t as u64);
                let scale = 1.0 / (d.r as f64).sqrt();
                for x in init.s.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut srng);
                    *x = g * scale;
                }
            }
            let (_, lf) = refine(&blocks, init, d, 300, 1.0, 0.0).unwrap();
            eprintln!("descent {t} rel = {:e}", (lf / wn2).sqrt());
        }
    }

    #[test]
    fn deterministic() {
        let w = crate::synth::synth_dense_weight(12, 12, 77);
        let a = factor_blast(&w, 2, 3, 20, 1.0).unwrap();
        let b = factor_blast(&w, 2, 3, 20, 1.0).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.factors.v().data(), b.factors.v().data());
        assert_eq!(a.factors.s().data(), b.factors.s().data());
        assert_eq!(a.factors.u().data(), b.factors.u().data());
    }
}
