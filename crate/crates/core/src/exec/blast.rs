//! Shared-basis block-format executors.
//!
//! The format stores V (b1, p, r), coupling diagonals S (b1, b2, r) and
//! U (b2, r, q); block (l,k) of the dense weight is V_l·diag(S_lk)·U_k.
//! A forward pass therefore has three compute stages: the input projection
//! Z[l] = X_l·V_l, the coupling contraction Z₂[t,k,ρ] = Σ_l Z[l][t,ρ]·S[l,k,ρ],
//! and the output projection Y'[k] = Z''[k]·U_k.
//!
//! Three dataflows:
//! - baseline: every stage materialized, plus the two batch-axis shuffles
//!   the contraction wants — 8·b·n·r intermediate stage elements;
//! - partially fused: the projection and coupling stages run per
//!   (row-tile × rank-tile) task holding the (b2, t_n, t_r) accumulator in
//!   scratch, writing only the finished Z'' — 2·b·n·r;
//! - reordered: keeps rank outermost so the coupling becomes r tiny
//!   (b2×b1)·(b1×n) GEMMs against a pre-transposed S, never forming the
//!   (n-leading) shuffles at all — 4·b·n·r, and the output can stay
//!   transposed for a downstream consumer that wants (o, n).

use super::{ExecSettings, ForwardResult, OutputMode};
use crate::counters::ArrayRole;
use crate::error::{Error, Result};
use crate::formats::BlastFactors;
use crate::kernels::{gemm_into, permute, permute_as, GemmTiles, MatMut, MatRef};
use crate::tensor::Tensor;

pub fn forward_baseline(
    x: &Tensor,
    f: &BlastFactors,
    st: &ExecSettings,
) -> Result<ForwardResult> {
    let n = x.shape()[0];
    let (b1, b2, r, p, q) = (f.b1(), f.b2(), f.r(), f.p(), f.q());
    let (i, o) = (f.i(), f.o());
    let mut counters = st.fresh_counters();

    // 1. Z[l] = X_l · V_l; V slabs are already (p, r), no transpose.
    let mut z = Tensor::zeros(&[b1, n, r]);
    for l in 0..b1 {
        let xv = MatRef::strided(x.data(), l * p, n, p, i, 1, ArrayRole::Input)?;
        let vv = MatRef::strided(f.v().data(), l * p * r, p, r, r, 1, ArrayRole::Weight)?;
        let mut zv =
            MatMut::strided(z.data_mut(), l * n * r, n, r, r, 1, ArrayRole::Intermediate)?;
        gemm_into(
            xv,
            vv,
            &mut zv,
            GemmTiles {
                rows: st.tile.t_n,
                inner: st.tile.t_p,
                cols: st.tile.t_r,
            },
            st.budget,
            &mut counters,
        )?;
    }

    // 2. Bring tokens outermost for the coupling contraction.
    let zp = permute(&z, &[1, 0, 2], &mut counters)?; // (n, b1, r)

    // 3. Z2[t,k,ρ] = Σ_l Z'[t,l,ρ] · S[l,k,ρ].
    let mut z2 = Tensor::zeros(&[n, b2, r]);
    {
        let (zpd, sd) = (zp.data(), f.s().data());
        let z2d = z2.data_mut();
        counters.stage_read(ArrayRole::Intermediate, (n * b1 * r) as u64);
        counters.stage_read(ArrayRole::Weight, (b1 * b2 * r) as u64);
        counters.stage_write(ArrayRole::Intermediate, (n * b2 * r) as u64);
        counters.add_flops(2 * (n * b1 * b2 * r) as u64);
        for t in 0..n {
            let zrow = &zpd[t * b1 * r..(t + 1) * b1 * r];
            counters.transfer_read(ArrayRole::Intermediate, (b1 * r) as u64);
            for k in 0..b2 {
                let out = &mut z2d[(t * b2 + k) * r..(t * b2 + k + 1) * r];
                for l in 0..b1 {
                    let srow = &sd[(l * b2 + k) * r..(l * b2 + k + 1) * r];
                    counters.transfer_read(ArrayRole::Weight, r as u64);
                    let zl = &zrow[l * r..(l + 1) * r];
                    for ((ov, &zv), &sv) in out.iter_mut().zip(zl).zip(srow) {
                        *ov += zv * sv;
                    }
                }
                counters.transfer_write(ArrayRole::Intermediate, r as u64);
            }
        }
    }

    // 4. Output blocks outermost for the second projection.
    let zpp = permute(&z2, &[1, 0, 2], &mut counters)?; // (b2, n, r)

    // 5. Y'[k] = Z''[k] · U_k; U slabs are (r, q), no transpose.
    let mut yp = Tensor::zeros(&[b2, n, q]);
    for k in 0..b2 {
        let zv = MatRef::strided(zpp.data(), k * n * r, n, r, r, 1, ArrayRole::Intermediate)?;
        let uv = MatRef::strided(f.u().data(), k * r * q, r, q, q, 1, ArrayRole::Weight)?;
        let mut yv = MatMut::strided(yp.data_mut(), k * n * q, n, q, q, 1, ArrayRole::Output)?;
        gemm_into(
            zv,
            uv,
            &mut yv,
            GemmTiles {
                rows: st.tile.t_n,
                inner: st.tile.t_r,
                cols: st.tile.t_q,
            },
            st.budget,
            &mut counters,
        )?;
    }

    // 6. Finalize.
    let y = match st.mode {
        OutputMode::Canonical => {
            permute_as(&yp, &[1, 0, 2], ArrayRole::Output, ArrayRole::Output, &mut counters)?
        }
        OutputMode::Transposed => {
            permute_as(&yp, &[1, 2, 0], ArrayRole::Output, ArrayRole::Output, &mut counters)?
        }
    }
    .with_shape(&[n, o])?;
    Ok(ForwardResult { y, counters })
}

/// Projection and coupling fused per (row-tile × rank-tile) task; the
/// (b2, t_n, t_r) accumulator lives in scratch, which is what bounds the
/// tile sizes this path accepts.
pub fn forward_partial_fused(
    x: &Tensor,
    f: &BlastFactors,
    st: &ExecSettings,
) -> Result<ForwardResult> {
    let n = x.shape()[0];
    let (b1, b2, r, p, q) = (f.b1(), f.b2(), f.r(), f.p(), f.q());
    let (i, o) = (f.i(), f.o());
    let mut counters = st.fresh_counters();

    let tn_max = st.tile.t_n.min(n);
    let tr_max = st.tile.t_r.min(r);
    let tp_max = st.tile.t_p.min(p);
    st.budget.ensure(
        b2 * tn_max * tr_max + tn_max * tr_max + tn_max * tp_max + tp_max * tr_max,
    )?;

    counters.stage_read(ArrayRole::Input, (n * i) as u64);
    counters.stage_read(ArrayRole::Weight, (i * r) as u64); // all of V
    counters.stage_read(ArrayRole::Weight, (b1 * b2 * r) as u64); // all of S
    counters.stage_write(ArrayRole::Intermediate, (b2 * n * r) as u64);

    let mut zpp = Tensor::zeros(&[b2, n, r]);
    {
        let (xd, vd, sd) = (x.data(), f.v().data(), f.s().data());
        let zd = zpp.data_mut();
        let mut acc = vec![0f32; b2 * tn_max * tr_max];
        let mut zt = vec![0f32; tn_max * tr_max];
        let mut xt = vec![0f32; tn_max * tp_max];
        let mut vt = vec![0f32; tp_max * tr_max];
        let mut n0 = 0;
        while n0 < n {
            let tn = tn_max.min(n - n0);
            let mut r0 = 0;
            while r0 < r {
                let tr = tr_max.min(r - r0);
                acc[..b2 * tn * tr].fill(0.0);
                for l in 0..b1 {
                    // zt = X[n-tile, block l] · V_l[:, rank-tile].
                    zt[..tn * tr].fill(0.0);
                    let mut p0 = 0;
                    while p0 < p {
                        let tp = tp_max.min(p - p0);
                        for t in 0..tn {
                            xt[t * tp..t * tp + tp].copy_from_slice(
                                &xd[(n0 + t) * i + l * p + p0..(n0 + t) * i + l * p + p0 + tp],
                            );
                        }
                        for a in 0..tp {
                            vt[a * tr..a * tr + tr].copy_from_slice(
                                &vd[(l * p + p0 + a) * r + r0..(l * p + p0 + a) * r + r0 + tr],
                            );
                        }
                        counters.transfer_read(ArrayRole::Input, (tn * tp) as u64);
                        counters.transfer_read(ArrayRole::Weight, (tp * tr) as u64);
                        counters.add_flops(2 * (tn * tp * tr) as u64);
                        for t in 0..tn {
                            let xrow = &xt[t * tp..t * tp + tp];
                            let zrow = &mut zt[t * tr..t * tr + tr];
                            for (kk, &xv) in xrow.iter().enumerate() {
                                let vrow = &vt[kk * tr..kk * tr + tr];
                                for (zv, &vv) in zrow.iter_mut().zip(vrow) {
                                    *zv += xv * vv;
                                }
                            }
                        }
                        p0 += tp;
                    }
                    // Couple into all b2 accumulator planes.
                    for k in 0..b2 {
                        let srow = &sd[(l * b2 + k) * r + r0..(l * b2 + k) * r + r0 + tr];
                        counters.transfer_read(ArrayRole::Weight, tr as u64);
                        counters.add_flops(2 * (tn * tr) as u64);
                        let plane = &mut acc[k * tn * tr..(k + 1) * tn * tr];
                        for t in 0..tn {
                            let zrow = &zt[t * tr..t * tr + tr];
                            let arow = &mut plane[t * tr..t * tr + tr];
                            for ((av, &zv), &sv) in arow.iter_mut().zip(zrow).zip(srow) {
                                *av += zv * sv;
                            }
                        }
                    }
                }
                // Store the finished task accumulator.
                for k in 0..b2 {
                    let plane = &acc[k * tn * tr..(k + 1) * tn * tr];
                    for t in 0..tn {
                        let dst = k * n * r + (n0 + t) * r + r0;
                        zd[dst..dst + tr].copy_from_slice(&plane[t * tr..t * tr + tr]);
                    }
                    counters.transfer_write(ArrayRole::Intermediate, (tn * tr) as u64);
                }
                r0 += tr;
            }
            n0 += tn;
        }
    }

    // Second projection stores straight into the finalized output.
    let mut y = Tensor::zeros(&[n, o]);
    for k in 0..b2 {
        let zv = MatRef::strided(zpp.data(), k * n * r, n, r, r, 1, ArrayRole::Intermediate)?;
        let uv = MatRef::strided(f.u().data(), k * r * q, r, q, q, 1, ArrayRole::Weight)?;
        let mut yv = match st.mode {
            OutputMode::Canonical => {
                MatMut::strided(y.data_mut(), k * q, n, q, o, 1, ArrayRole::Output)?
            }
            OutputMode::Transposed => {
                MatMut::strided(y.data_mut(), k, n, q, o, b2, ArrayRole::Output)?
            }
        };
        gemm_into(
            zv,
            uv,
            &mut yv,
            GemmTiles {
                rows: st.tile.t_n,
                inner: st.tile.t_r,
                cols: st.tile.t_q,
            },
            st.budget,
            &mut counters,
        )?;
    }
    Ok(ForwardResult { y, counters })
}

/// Rank-outermost dataflow. Requires the factors to carry the
/// pre-transposed coupling table S_T (r, b2, b1); see
/// [`pretranspose_blast_s`](crate::formats::pretranspose_blast_s).
///
/// `Transposed` mode returns Y as (o, n) with canonical rows — the natural
/// output of this dataflow — instead of transposing tiles back.
pub fn forward_reordered(
    x: &Tensor,
    f: &BlastFactors,
    st: &ExecSettings,
) -> Result<ForwardResult> {
    let s_t = f.s_t().ok_or(Error::MissingPretransposedS)?;
    let n = x.shape()[0];
    let (b1, b2, r, p, q) = (f.b1(), f.b2(), f.r(), f.p(), f.q());
    let (i, o) = (f.i(), f.o());
    let mut counters = st.fresh_counters();

    let tn_max = st.tile.t_n.min(n);
    let tr_max = st.tile.t_r.min(r);
    let tp_max = st.tile.t_p.min(p);
    st.budget
        .ensure(tn_max * tp_max + tp_max * tr_max + tn_max * tr_max)?;

    // K1: project and transpose per tile — A[ρ, l, t] = Z[l][t, ρ].
    counters.stage_read(ArrayRole::Input, (n * i) as u64);
    counters.stage_read(ArrayRole::Weight, (i * r) as u64);
    counters.stage_write(ArrayRole::Intermediate, (r * b1 * n) as u64);
    let mut a_buf = Tensor::zeros(&[r, b1, n]);
    {
        let (xd, vd) = (x.data(), f.v().data());
        let ad = a_buf.data_mut();
        let mut xt = vec![0f32; tn_max * tp_max];
        let mut vt = vec![0f32; tp_max * tr_max];
        let mut zt = vec![0f32; tn_max * tr_max];
        for l in 0..b1 {
            let mut n0 = 0;
            while n0 < n {
                let tn = tn_max.min(n - n0);
                let mut r0 = 0;
                while r0 < r {
                    let tr = tr_max.min(r - r0);
                    zt[..tn * tr].fill(0.0);
                    let mut p0 = 0;
                    while p0 < p {
                        let tp = tp_max.min(p - p0);
                        for t in 0..tn {
                            xt[t * tp..t * tp + tp].copy_from_slice(
                                &xd[(n0 + t) * i + l * p + p0..(n0 + t) * i + l * p + p0 + tp],
                            );
                        }
                        for a in 0..tp {
                            vt[a * tr..a * tr + tr].copy_from_slice(
                                &vd[(l * p + p0 + a) * r + r0..(l * p + p0 + a) * r + r0 + tr],
                            );
                        }
                        counters.transfer_read(ArrayRole::Input, (tn * tp) as u64);
                        counters.transfer_read(ArrayRole::Weight, (tp * tr) as u64);
                        counters.add_flops(2 * (tn * tp * tr) as u64);
                        for t in 0..tn {
                            let xrow = &xt[t * tp..t * tp + tp];
                            let zrow = &mut zt[t * tr..t * tr + tr];
                            for (kk, &xv) in xrow.iter().enumerate() {
                                let vrow = &vt[kk * tr..kk * tr + tr];
                                for (zv, &vv) in zrow.iter_mut().zip(vrow) {
                                    *zv += xv * vv;
                                }
                            }
                        }
                        p0 += tp;
                    }
                    // Transposed store: contiguous n-runs per rank row.
                    for rr in 0..tr {
                        let dst = (r0 + rr) * b1 * n + l * n + n0;
                        for t in 0..tn {
                            ad[dst + t] = zt[t * tr + rr];
                        }
                    }
                    counters.transfer_write(ArrayRole::Intermediate, (tn * tr) as u64);
                    r0 += tr;
                }
                n0 += tn;
            }
        }
    }

    // K2: per rank index, couple all blocks with one (b2×b1)·(b1×n) GEMM,
    // storing plane ρ of B (b2, r, n) through a strided view.
    let mut b_buf = Tensor::zeros(&[b2, r, n]);
    for rho in 0..r {
        let sv = MatRef::strided(s_t.data(), rho * b2 * b1, b2, b1, b1, 1, ArrayRole::Weight)?;
        let av = MatRef::strided(a_buf.data(), rho * b1 * n, b1, n, n, 1, ArrayRole::Intermediate)?;
        let mut bv = MatMut::strided(
            b_buf.data_mut(),
            rho * n,
            b2,
            n,
            r * n,
            1,
            ArrayRole::Intermediate,
        )?;
        gemm_into(
            sv,
            av,
            &mut bv,
            GemmTiles {
                rows: st.tile.t_r,
                inner: st.tile.t_p,
                cols: st.tile.t_n,
            },
            st.budget,
            &mut counters,
        )?;
    }

    // K3: per output block, P[j, t] = Σ_ρ U[k][ρ, j] · B[k][ρ, t].
    let transposed = st.mode == OutputMode::Transposed;
    let mut y = if transposed {
        Tensor::zeros(&[o, n])
    } else {
        Tensor::zeros(&[n, o])
    };
    for k in 0..b2 {
        let uv = MatRef::strided(f.u().data(), k * r * q, r, q, q, 1, ArrayRole::Weight)?
            .transposed();
        let bv = MatRef::strided(b_buf.data(), k * r * n, r, n, n, 1, ArrayRole::Intermediate)?;
        let mut yv = if transposed {
            MatMut::strided(y.data_mut(), k * q * n, q, n, n, 1, ArrayRole::Output)?
        } else {
            // Transpose back on store: element (j, t) lands at Y[t, k·q+j].
            MatMut::strided(y.data_mut(), k * q, q, n, 1, o, ArrayRole::Output)?
        };
        gemm_into(
            uv,
            bv,
            &mut yv,
            GemmTiles {
                rows: st.tile.t_q,
                inner: st.tile.t_r,
                cols: st.tile.t_n,
            },
            st.budget,
            &mut counters,
        )?;
    }
    Ok(ForwardResult { y, counters })
}
