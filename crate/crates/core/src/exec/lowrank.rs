//! Two-factor (V·U) executors.
//!
//! The baseline materializes Z = X·V (n×r) in global memory and then runs
//! Y = Z·U: the intermediate costs 2nr stage elements (one write, one
//! read). The fused path never lets Z leave scratch: each row-tile of X
//! accumulates its whole (t_n × r) slice of Z locally, then immediately
//! multiplies it by U — zero intermediate traffic, at the price of keeping
//! t_n·r live in scratch, which caps the rank the path can run.

use super::{ExecSettings, ForwardResult, OutputMode};
use crate::counters::ArrayRole;
use crate::error::{Error, Result};
use crate::formats::LowRankFactors;
use crate::kernels::{gemm_into, GemmTiles, MatMut, MatRef};
use crate::tensor::Tensor;
use crate::tile::{ScratchBudget, TileConfig};

pub fn forward_baseline(
    x: &Tensor,
    f: &LowRankFactors,
    st: &ExecSettings,
) -> Result<ForwardResult> {
    no_transposed_mode(st)?;
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let (r, o) = (f.rank(), f.o());
    let mut counters = st.fresh_counters();
    let mut z = Tensor::zeros(&[n, r]);
    gemm_into(
        MatRef::contiguous(x.data(), n, i, ArrayRole::Input),
        MatRef::contiguous(f.v().data(), i, r, ArrayRole::Weight),
        &mut MatMut::contiguous(z.data_mut(), n, r, ArrayRole::Intermediate),
        GemmTiles {
            rows: st.tile.t_n,
            inner: st.tile.t_p,
            cols: st.tile.t_r,
        },
        st.budget,
        &mut counters,
    )?;
    let mut y = Tensor::zeros(&[n, o]);
    gemm_into(
        MatRef::contiguous(z.data(), n, r, ArrayRole::Intermediate),
        MatRef::contiguous(f.u().data(), r, o, ArrayRole::Weight),
        &mut MatMut::contiguous(y.data_mut(), n, o, ArrayRole::Output),
        GemmTiles {
            rows: st.tile.t_n,
            inner: st.tile.t_r,
            cols: st.tile.t_q,
        },
        st.budget,
        &mut counters,
    )?;
    Ok(ForwardResult { y, counters })
}

/// Largest rank the fused path can hold in scratch for a given tile config:
/// the live set is the (t_n × r) local Z plus, per stage, one operand tile
/// and one weight panel spanning the full rank.
pub fn fused_lowrank_max_rank(tile: TileConfig, budget: ScratchBudget) -> usize {
    let cap = budget.f32_capacity();
    let stage1_fixed = tile.t_n * tile.t_p;
    let stage2_fixed = tile.t_n * tile.t_q;
    let r1 = cap.saturating_sub(stage1_fixed) / (tile.t_n + tile.t_p);
    let r2 = cap.saturating_sub(stage2_fixed) / (tile.t_n + tile.t_q);
    r1.min(r2)
}

pub fn forward_fused(x: &Tensor, f: &LowRankFactors, st: &ExecSettings) -> Result<ForwardResult> {
    no_transposed_mode(st)?;
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let (r, o) = (f.rank(), f.o());
    let max_rank = fused_lowrank_max_rank(st.tile, st.budget);
    if r > max_rank {
        return Err(Error::RankTooLargeForScratch { rank: r, max_rank });
    }
    let mut counters = st.fresh_counters();
    counters.stage_read(ArrayRole::Input, (n * i) as u64);
    counters.stage_read(ArrayRole::Weight, (i * r + r * o) as u64);
    counters.stage_write(ArrayRole::Output, (n * o) as u64);

    let (t_n, t_p, t_q) = (st.tile.t_n, st.tile.t_p, st.tile.t_q);
    let mut y = Tensor::zeros(&[n, o]);
    let (xd, vd, ud) = (x.data(), f.v().data(), f.u().data());
    let yd = y.data_mut();
    let mut z = vec![0f32; t_n.min(n) * r];
    let mut xt = vec![0f32; t_n.min(n) * t_p.min(i)];
    let mut panel = vec![0f32; t_p.max(t_q).min(i.max(o)) * r];
    let mut out_tile = vec![0f32; t_n.min(n) * t_q.min(o)];

    let mut n0 = 0;
    while n0 < n {
        let tn = t_n.min(n - n0);
        z[..tn * r].fill(0.0);
        // Stage 1: accumulate Z[n-tile] over input-width tiles.
        let mut p0 = 0;
        while p0 < i {
            let tp = t_p.min(i - p0);
            for t in 0..tn {
                xt[t * tp..t * tp + tp]
                    .copy_from_slice(&xd[(n0 + t) * i + p0..(n0 + t) * i + p0 + tp]);
            }
            let vp = &vd[p0 * r..(p0 + tp) * r];
            counters.transfer_read(ArrayRole::Input, (tn * tp) as u64);
            counters.transfer_read(ArrayRole::Weight, (tp * r) as u64);
            counters.add_flops(2 * (tn * tp * r) as u64);
            for t in 0..tn {
                let xrow = &xt[t * tp..t * tp + tp];
                let zrow = &mut z[t * r..t * r + r];
                for (kk, &xv) in xrow.iter().enumerate() {
                    let vrow = &vp[kk * r..kk * r + r];
                    for (zv, &vv) in zrow.iter_mut().zip(vrow) {
                        *zv += xv * vv;
                    }
                }
            }
            p0 += tp;
        }
        // Stage 2: multiply the local Z by U, column tile by column tile.
        let mut q0 = 0;
        while q0 < o {
            let tq = t_q.min(o - q0);
            for rho in 0..r {
                panel[rho * tq..rho * tq + tq]
                    .copy_from_slice(&ud[rho * o + q0..rho * o + q0 + tq]);
            }
            counters.transfer_read(ArrayRole::Weight, (r * tq) as u64);
            counters.add_flops(2 * (tn * r * tq) as u64);
            let ot = &mut out_tile[..tn * tq];
            ot.fill(0.0);
            for t in 0..tn {
                let zrow = &z[t * r..t * r + r];
                let orow = &mut ot[t * tq..t * tq + tq];
                for (rho, &zv) in zrow.iter().enumerate() {
                    let urow = &panel[rho * tq..rho * tq + tq];
                    for (ov, &uv) in orow.iter_mut().zip(urow) {
                        *ov += zv * uv;
                    }
                }
            }
            for t in 0..tn {
                yd[(n0 + t) * o + q0..(n0 + t) * o + q0 + tq]
                    .copy_from_slice(&ot[t * tq..t * tq + tq]);
            }
            counters.transfer_write(ArrayRole::Output, (tn * tq) as u64);
            q0 += tq;
        }
        n0 += tn;
    }
    Ok(ForwardResult { y, counters })
}

fn no_transposed_mode(st: &ExecSettings) -> Result<()> {
    if st.mode == OutputMode::Transposed {
        return Err(Error::InvalidArgument(
            "two-factor paths have no transposed output mode".into(),
        ));
    }
    Ok(())
}
