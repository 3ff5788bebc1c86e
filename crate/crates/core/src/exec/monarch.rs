//! Blocked-butterfly executors.
//!
//! Storage recap (see the formats module): V is (b1, r'·b2, p), U is
//! (b2, q, b1·r'). The middle axis of the computation is a composite of the
//! output-block index k and the per-block rank index ρ'.
//!
//! Baseline dataflow, all intermediates materialized:
//!   1. per input block l: Z[l] = X_l · V[l]^T            (b1, n, r'·b2)
//!   2. reshape (b1, n, r', b2), swap the last axes        (b1, n, b2, r')
//!   3. bring the output-block axis outermost              (b2, n, b1, r')
//!   4. per output block k: Y'[k] = Z''[k] · U[k]^T        (b2, n, q)
//!   5. finalize to (n, o)
//! The two materialized shuffles plus Z/Z'' traffic cost 6·b1·n·r stage
//! elements of intermediate.
//!
//! The optimized dataflow needs V re-laid-out with ρ' fastest
//! ([`relayout_monarch_v`](crate::formats::relayout_monarch_v)): then each
//! bmm1 output tile scatters straight into Z'' layout as contiguous runs of
//! r' (the shuffles disappear), and the second GEMM stores through a
//! strided view straight into the finalized Y (the finalization copy
//! disappears too). Intermediate traffic drops to 2·b1·n·r.

use super::{ExecSettings, ForwardResult, OutputMode};
use crate::counters::ArrayRole;
use crate::error::{Error, Result};
use crate::formats::{MonarchFactors, VLayout};
use crate::kernels::{gemm_into, permute, permute_as, GemmTiles, MatMut, MatRef};
use crate::tensor::Tensor;

/// Where the fused bmm1+scatter sends element (row, c) of the per-block
/// product Z_l (with V in ρ'-fastest layout, so c = k·r' + ρ'): returns
/// (k, col) such that Z''[k][row, col] receives it, col = l·r' + ρ'.
/// Runs of r' consecutive c values land contiguously.
pub fn fused_scatter_dest(l: usize, c: usize, r_prime: usize) -> (usize, usize) {
    (c / r_prime, l * r_prime + c % r_prime)
}

pub fn forward_baseline(
    x: &Tensor,
    f: &MonarchFactors,
    st: &ExecSettings,
) -> Result<ForwardResult> {
    if f.v_layout() != VLayout::B2Fastest {
        return Err(Error::LayoutMismatch {
            expected: "b2_fastest",
            found: f.v_layout().as_str(),
        });
    }
    let n = x.shape()[0];
    let (b1, b2, rp, p, q) = (f.b1(), f.b2(), f.r_prime(), f.p(), f.q());
    let (i, o, rb2) = (f.i(), f.o(), rp * b2);
    let mut counters = st.fresh_counters();

    // 1. Z[l] = X_l · V[l]^T for every input block.
    let mut z = Tensor::zeros(&[b1, n, rb2]);
    for l in 0..b1 {
        let xv = MatRef::strided(x.data(), l * p, n, p, i, 1, ArrayRole::Input)?;
        let vv = MatRef::strided(f.v().data(), l * rb2 * p, rb2, p, p, 1, ArrayRole::Weight)?
            .transposed();
        let mut zv = MatMut::strided(
            z.data_mut(),
            l * n * rb2,
            n,
            rb2,
            rb2,
            1,
            ArrayRole::Intermediate,
        )?;
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

    // 2–3. Two materialized shuffles: split the composite, swap ρ'/k, then
    // bring k outermost so U's batch axis is leading.
    let z4 = z.with_shape(&[b1, n, rp, b2])?;
    let zp = permute(&z4, &[0, 1, 3, 2], &mut counters)?;
    let zpp = permute(&zp, &[2, 1, 0, 3], &mut counters)?;
    let zpp = zpp.with_shape(&[b2, n, b1 * rp])?;

    // 4. Y'[k] = Z''[k] · U[k]^T.
    let mut yp = Tensor::zeros(&[b2, n, q]);
    for k in 0..b2 {
        let zv = MatRef::strided(
            zpp.data(),
            k * n * b1 * rp,
            n,
            b1 * rp,
            b1 * rp,
            1,
            ArrayRole::Intermediate,
        )?;
        let uv = MatRef::strided(
            f.u().data(),
            k * q * b1 * rp,
            q,
            b1 * rp,
            b1 * rp,
            1,
            ArrayRole::Weight,
        )?
        .transposed();
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

    // 5. Finalize (a materialized copy in both modes).
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

pub fn forward_optimized(
    x: &Tensor,
    f: &MonarchFactors,
    st: &ExecSettings,
) -> Result<ForwardResult> {
    if f.v_layout() != VLayout::RPrimeFastest {
        return Err(Error::LayoutMismatch {
            expected: "rprime_fastest",
            found: f.v_layout().as_str(),
        });
    }
    let n = x.shape()[0];
    let (b1, b2, rp, p, q) = (f.b1(), f.b2(), f.r_prime(), f.p(), f.q());
    let (i, o, rb2) = (f.i(), f.o(), rp * b2);
    let mut counters = st.fresh_counters();

    let (t_n, t_p, t_c) = (st.tile.t_n, st.tile.t_p, st.tile.t_r);
    st.budget.ensure(
        t_n.min(n) * t_p.min(p) + t_p.min(p) * t_c.min(rb2) + t_n.min(n) * t_c.min(rb2),
    )?;

    // Fused bmm1 + scatter. Stage ledger: one pass over X and V, one write
    // of Z''.
    counters.stage_read(ArrayRole::Input, (n * i) as u64);
    counters.stage_read(ArrayRole::Weight, (b1 * rb2 * p) as u64);
    counters.stage_write(ArrayRole::Intermediate, (b1 * n * rb2) as u64);

    let mut zpp = Tensor::zeros(&[b2, n, b1 * rp]);
    {
        let (xd, vd) = (x.data(), f.v().data());
        let zd = zpp.data_mut();
        let tn_max = t_n.min(n);
        let tp_max = t_p.min(p);
        let tc_max = t_c.min(rb2);
        let mut xt = vec![0f32; tn_max * tp_max];
        let mut vt = vec![0f32; tp_max * tc_max];
        let mut acc = vec![0f32; tn_max * tc_max];
        for l in 0..b1 {
            let v_slab = &vd[l * rb2 * p..(l + 1) * rb2 * p]; // (rb2, p): row c, col a
            let mut n0 = 0;
            while n0 < n {
                let tn = t_n.min(n - n0);
                let mut c0 = 0;
                while c0 < rb2 {
                    let tc = t_c.min(rb2 - c0);
                    let at = &mut acc[..tn * tc];
                    at.fill(0.0);
                    let mut p0 = 0;
                    while p0 < p {
                        let tp = t_p.min(p - p0);
                        for t in 0..tn {
                            xt[t * tp..t * tp + tp].copy_from_slice(
                                &xd[(n0 + t) * i + l * p + p0..(n0 + t) * i + l * p + p0 + tp],
                            );
                        }
                        // V^T tile: a (input) rows, c (composite) columns.
                        for a in 0..tp {
                            for cc in 0..tc {
                                vt[a * tc + cc] = v_slab[(c0 + cc) * p + p0 + a];
                            }
                        }
                        counters.transfer_read(ArrayRole::Input, (tn * tp) as u64);
                        counters.transfer_read(ArrayRole::Weight, (tp * tc) as u64);
                        counters.add_flops(2 * (tn * tp * tc) as u64);
                        for t in 0..tn {
                            let xrow = &xt[t * tp..t * tp + tp];
                            let arow = &mut at[t * tc..t * tc + tc];
                            for (kk, &xv) in xrow.iter().enumerate() {
                                let vrow = &vt[kk * tc..kk * tc + tc];
                                for (av, &vv) in arow.iter_mut().zip(vrow) {
                                    *av += xv * vv;
                                }
                            }
                        }
                        p0 += tp;
                    }
                    // Scatter the finished tile into Z'' in runs of r'.
                    for t in 0..tn {
                        let arow = &at[t * tc..t * tc + tc];
                        let mut cc = 0;
                        while cc < tc {
                            let c = c0 + cc;
                            let (k, col) = fused_scatter_dest(l, c, rp);
                            let run = (rp - c % rp).min(tc - cc);
                            let dst = k * n * b1 * rp + (n0 + t) * b1 * rp + col;
                            zd[dst..dst + run].copy_from_slice(&arow[cc..cc + run]);
                            cc += run;
                        }
                    }
                    counters.transfer_write(ArrayRole::Intermediate, (tn * tc) as u64);
                    c0 += tc;
                }
                n0 += tn;
            }
        }
    }

    // Second GEMM stores straight into the finalized Y through a strided
    // view; no finalization pass exists on this path.
    let mut y = Tensor::zeros(&[n, o]);
    for k in 0..b2 {
        let zv = MatRef::strided(
            zpp.data(),
            k * n * b1 * rp,
            n,
            b1 * rp,
            b1 * rp,
            1,
            ArrayRole::Intermediate,
        )?;
        let uv = MatRef::strided(
            f.u().data(),
            k * q * b1 * rp,
            q,
            b1 * rp,
            b1 * rp,
            1,
            ArrayRole::Weight,
        )?
        .transposed();
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{forward, PathId};
    use crate::formats::{relayout_monarch_v, Factors, Method, WorkloadSpec};
    use crate::synth::{synth_activations, synth_factors};
    use crate::tensor::rel_fro_err;

    fn case(
        n: usize,
        i: usize,
        o: usize,
        r: usize,
        b: usize,
        seed: u64,
    ) -> (Tensor, Factors, Tensor) {
        let spec = WorkloadSpec::new(Method::Monarch, n, i, o, r, b).unwrap();
        let f = synth_factors(&spec, seed).unwrap();
        let x = synth_activations(n, i, seed);
        let y_ref = crate::kernels::naive_matmul(&x, &f.to_dense()).unwrap();
        (x, f, y_ref)
    }

    fn relaid(f: &Factors) -> Factors {
        match f {
            Factors::Monarch(m) => Factors::Monarch(relayout_monarch_v(m).unwrap()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn baseline_matches_oracle() {
        for (n, io, r, b, seed) in [(6, 12, 4, 2, 1), (9, 24, 6, 3, 2), (1, 16, 8, 4, 3)] {
            let (x, f, y_ref) = case(n, io, io, r, b, seed);
            let got = forward(PathId::MonarchBase, &x, &f, &ExecSettings::default()).unwrap();
            assert!(
                rel_fro_err(&got.y, &y_ref) <= 1e-4,
                "n={n} io={io} r={r} b={b}"
            );
        }
    }

    #[test]
    fn optimized_needs_relayout_and_matches_baseline_exactly() {
        let (x, f, y_ref) = case(13, 24, 18, 12, 3, 4);
        let st = ExecSettings::default();
        // Wrong layout in either direction errors.
        match forward(PathId::MonarchOpt, &x, &f, &st) {
            Err(Error::LayoutMismatch { expected, found }) => {
                assert_eq!(expected, "rprime_fastest");
                assert_eq!(found, "b2_fastest");
            }
            other => panic!("expected LayoutMismatch, got {other:?}"),
        }
        let g = relaid(&f);
        assert!(matches!(
            forward(PathId::MonarchBase, &x, &g, &st),
            Err(Error::LayoutMismatch { .. })
        ));

        let base = forward(PathId::MonarchBase, &x, &f, &st).unwrap();
        let opt = forward(PathId::MonarchOpt, &x, &g, &st).unwrap();
        assert!(rel_fro_err(&base.y, &y_ref) <= 1e-4);
        // Same contraction order in both dataflows.
        assert_eq!(base.y.data(), opt.y.data());
    }

    #[test]
    fn flop_count_exact_asymmetric_blocks() {
        // p != q exercises both GEMM stages' distinct shapes.
        let (n, i, o, r, b) = (7, 12, 20, 6, 2);
        let (x, f, _) = case(n, i, o, r, b, 5);
        let st = ExecSettings::default();
        let base = forward(PathId::MonarchBase, &x, &f, &st).unwrap();
        let want = 2 * n as u64 * r as u64 * (i + o) as u64;
        assert_eq!(base.counters.flops(), want);
        let opt = forward(PathId::MonarchOpt, &x, &relaid(&f), &st).unwrap();
        assert_eq!(opt.counters.flops(), want);
    }

    #[test]
    fn intermediate_stage_traffic_6bnr_vs_2bnr() {
        let (n, io, r, b) = (16, 24, 12, 2);
        let (x, f, _) = case(n, io, io, r, b, 6);
        let st = ExecSettings::default();
        let base = forward(PathId::MonarchBase, &x, &f, &st).unwrap();
        let opt = forward(PathId::MonarchOpt, &x, &relaid(&f), &st).unwrap();
        let bnr = (b * n * r) as u64;
        assert_eq!(base.counters.intermediate_elements(), 6 * bnr);
        assert_eq!(opt.counters.intermediate_elements(), 2 * bnr);
    }

    #[test]
    fn transposed_mode_consistency() {
        let (n, io, r, b) = (5, 12, 4, 2);
        let (x, f, _) = case(n, io, io, r, b, 7);
        let st_c = ExecSettings::default();
        let st_t = ExecSettings {
            mode: OutputMode::Transposed,
            ..Default::default()
        };
        let q = io / b;
        let yc = forward(PathId::MonarchBase, &x, &f, &st_c).unwrap().y;
        let yt = forward(PathId::MonarchBase, &x, &f, &st_t).unwrap().y;
        // Column (k·q + j) of canonical equals column (j·b2 + k) of
        // transposed.
        for t in 0..n {
            for k in 0..b {
                for j in 0..q {
                    assert_eq!(
                        yc.at(&[t, k * q + j]),
                        yt.at(&[t, j * b + k]),
                        "t={t} k={k} j={j}"
                    );
                }
            }
        }
        let g = relaid(&f);
        let ot = forward(PathId::MonarchOpt, &x, &g, &st_t).unwrap().y;
        assert_eq!(ot.data(), yt.data());
    }

    #[test]
    fn scatter_map_matches_small_example() {
        // r'=2: per-block composite [0,1,2,3] with k fastest-cycling every
        // r', l=1 lands columns starting at l·r' = 2.
        assert_eq!(fused_scatter_dest(0, 0, 2), (0, 0));
        assert_eq!(fused_scatter_dest(0, 1, 2), (0, 1));
        assert_eq!(fused_scatter_dest(0, 2, 2), (1, 0));
        assert_eq!(fused_scatter_dest(0, 3, 2), (1, 1));
        assert_eq!(fused_scatter_dest(1, 3, 2), (1, 3));
    }

    #[test]
    fn single_block_reduces_to_low_rank() {
        // b1 = b2 = 1: both paths must agree with the plain two-factor
        // baseline on the same reconstructed weight.
        let (x, f, y_ref) = case(8, 16, 12, 5, 1, 8);
        let st = ExecSettings::default();
        let base = forward(PathId::MonarchBase, &x, &f, &st).unwrap();
        assert!(rel_fro_err(&base.y, &y_ref) <= 1e-4);
        let opt = forward(PathId::MonarchOpt, &x, &relaid(&f), &st).unwrap();
        assert_eq!(base.y.data(), opt.y.data());
    }
}
