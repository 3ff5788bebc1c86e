//! Instrumented compute primitives: tiled GEMM over strided matrix views,
//! counted permutation/copy, and scratch-local tile helpers. Every execution
//! path is assembled from these, so the counter discipline lives here in one
//! place.
//!
//! Determinism: each output element is accumulated in ascending order of the
//! inner (contraction) index, independent of tile extents. Outputs are
//! therefore bit-identical across all legal `TileConfig`s, not merely close.

use crate::counters::{ArrayRole, Counters};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tile::{gemm_scratch_elems, ScratchBudget, TileConfig};

/// Read-only strided 2-D view over a flat f32 buffer. `row_stride` /
/// `col_stride` are in elements; a transposed view is just swapped strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f32],
    offset: usize,
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
    role: ArrayRole,
}

impl<'a> MatRef<'a> {
    pub fn contiguous(data: &'a [f32], rows: usize, cols: usize, role: ArrayRole) -> MatRef<'a> {
        debug_assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
            role,
        }
    }

    pub fn strided(
        data: &'a [f32],
        offset: usize,
        rows: usize,
        cols: usize,
        row_stride: usize,
        col_stride: usize,
        role: ArrayRole,
    ) -> Result<MatRef<'a>> {
        check_extent(data.len(), offset, rows, cols, row_stride, col_stride)?;
        Ok(MatRef {
            data,
            offset,
            rows,
            cols,
            row_stride,
            col_stride,
            role,
        })
    }

    /// The transposed view of the same data (no movement).
    pub fn transposed(self) -> MatRef<'a> {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// Mutable strided 2-D view; the store side of a GEMM.
pub struct MatMut<'a> {
    data: &'a mut [f32],
    offset: usize,
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
    role: ArrayRole,
}

impl<'a> MatMut<'a> {
    pub fn contiguous(data: &'a mut [f32], rows: usize, cols: usize, role: ArrayRole) -> MatMut<'a> {
        debug_assert_eq!(data.len(), rows * cols);
        MatMut {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
            role,
        }
    }

    pub fn strided(
        data: &'a mut [f32],
        offset: usize,
        rows: usize,
        cols: usize,
        row_stride: usize,
        col_stride: usize,
        role: ArrayRole,
    ) -> Result<MatMut<'a>> {
        check_extent(data.len(), offset, rows, cols, row_stride, col_stride)?;
        Ok(MatMut {
            data,
            offset,
            rows,
            cols,
            row_stride,
            col_stride,
            role,
        })
    }
}

fn check_extent(
    len: usize,
    offset: usize,
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("empty matrix view".into()));
    }
    let last = offset + (rows - 1) * row_stride + (cols - 1) * col_stride;
    if last >= len {
        return Err(Error::ShapeMismatch(format!(
            "view [{rows}x{cols}] strides ({row_stride},{col_stride}) offset {offset} \
             overruns buffer of {len}"
        )));
    }
    Ok(())
}

/// Tile extents for one GEMM: how the rows / contraction / columns loops are
/// blocked. Callers map these from a `TileConfig` according to which logical
/// axes the GEMM runs over.
#[derive(Clone, Copy, Debug)]
pub struct GemmTiles {
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
}

/// C = A · B with tile-level instrumentation.
///
/// Counter discipline: one transfer count per operand tile load and per
/// output tile store (actual clamped sizes); one stage count per whole
/// operand/output (a call is one kernel stage consuming its operands once);
/// flops += 2 · rows · inner · cols exactly.
pub fn gemm_into(
    a: MatRef,
    b: MatRef,
    c: &mut MatMut,
    tiles: GemmTiles,
    budget: ScratchBudget,
    counters: &mut Counters,
) -> Result<()> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "gemm [{}x{}] · [{}x{}] -> [{}x{}]",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    let (rows, inner, cols) = (a.rows, a.cols, b.cols);
    let t_rows = tiles.rows.max(1).min(rows);
    let t_inner = tiles.inner.max(1).min(inner);
    let t_cols = tiles.cols.max(1).min(cols);
    budget.ensure(gemm_scratch_elems(t_rows, t_inner, t_cols))?;

    counters.stage_read(a.role, (rows * inner) as u64);
    counters.stage_read(b.role, (inner * cols) as u64);
    counters.stage_write(c.role, (rows * cols) as u64);
    counters.add_flops(2 * rows as u64 * inner as u64 * cols as u64);

    let mut a_tile = vec![0f32; t_rows * t_inner];
    let mut b_tile = vec![0f32; t_inner * t_cols];
    let mut acc = vec![0f32; t_rows * t_cols];

    let mut i0 = 0;
    while i0 < rows {
        let ti = t_rows.min(rows - i0);
        let mut j0 = 0;
        while j0 < cols {
            let tj = t_cols.min(cols - j0);
            acc[..ti * tj].fill(0.0);
            let mut k0 = 0;
            while k0 < inner {
                let tk = t_inner.min(inner - k0);
                load_tile(&a, i0, k0, ti, tk, &mut a_tile);
                load_tile(&b, k0, j0, tk, tj, &mut b_tile);
                counters.transfer_read(a.role, (ti * tk) as u64);
                counters.transfer_read(b.role, (tk * tj) as u64);
                // Micro-kernel: i-k-j with the j loop innermost over
                // contiguous slices (vectorizes to FMA lanes). k ascends both
                // here and in the k0 loop, fixing the accumulation order per
                // output element.
                for ii in 0..ti {
                    let arow = &a_tile[ii * tk..ii * tk + tk];
                    let crow = &mut acc[ii * tj..ii * tj + tj];
                    for (kk, &av) in arow.iter().enumerate() {
                        let brow = &b_tile[kk * tj..kk * tj + tj];
                        for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                            *cv += av * bv;
                        }
                    }
                }
                k0 += tk;
            }
            store_tile(c, i0, j0, ti, tj, &acc);
            counters.transfer_write(c.role, (ti * tj) as u64);
            j0 += tj;
        }
        i0 += ti;
    }
    Ok(())
}

fn load_tile(m: &MatRef, r0: usize, c0: usize, tr: usize, tc: usize, out: &mut [f32]) {
    for rr in 0..tr {
        let base = m.offset + (r0 + rr) * m.row_stride + c0 * m.col_stride;
        let dst = &mut out[rr * tc..rr * tc + tc];
        if m.col_stride == 1 {
            dst.copy_from_slice(&m.data[base..base + tc]);
        } else {
            for (cc, d) in dst.iter_mut().enumerate() {
                *d = m.data[base + cc * m.col_stride];
            }
        }
    }
}

fn store_tile(m: &mut MatMut, r0: usize, c0: usize, tr: usize, tc: usize, tile: &[f32]) {
    for rr in 0..tr {
        let base = m.offset + (r0 + rr) * m.row_stride + c0 * m.col_stride;
        let src = &tile[rr * tc..rr * tc + tc];
        if m.col_stride == 1 {
            m.data[base..base + tc].copy_from_slice(src);
        } else {
            for (cc, &v) in src.iter().enumerate() {
                m.data[base + cc * m.col_stride] = v;
            }
        }
    }
}

/// C (n×m) = A (n×k) · B (k×m) on rank-2 tensors. Operands are tagged
/// input/weight/output; use [`gemm_into`] directly when other roles or
/// strided views are needed. Tile mapping: rows ← t_n, contraction ← t_p,
/// columns ← t_q.
pub fn tiled_gemm(
    a: &Tensor,
    b: &Tensor,
    tile: TileConfig,
    budget: ScratchBudget,
    counters: &mut Counters,
) -> Result<Tensor> {
    let (n, k) = as_2d(a)?;
    let (k2, m) = as_2d(b)?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "tiled_gemm inner dims {k} vs {k2}"
        )));
    }
    let mut out = Tensor::zeros(&[n, m]);
    let av = MatRef::contiguous(a.data(), n, k, ArrayRole::Input);
    let bv = MatRef::contiguous(b.data(), k, m, ArrayRole::Weight);
    let mut cv = MatMut::contiguous(out.data_mut(), n, m, ArrayRole::Output);
    gemm_into(
        av,
        bv,
        &mut cv,
        GemmTiles {
            rows: tile.t_n,
            inner: tile.t_p,
            cols: tile.t_q,
        },
        budget,
        counters,
    )?;
    Ok(out)
}

/// C (b×n×m) = A (b×n×k) · B (b×k×m), slice by slice; batches are
/// independent tasks sharing one counter set.
pub fn batched_gemm(
    a: &Tensor,
    b: &Tensor,
    tile: TileConfig,
    budget: ScratchBudget,
    counters: &mut Counters,
) -> Result<Tensor> {
    let (ba, n, k) = as_3d(a)?;
    let (bb, k2, m) = as_3d(b)?;
    if ba != bb || k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "batched_gemm [{ba}x{n}x{k}] · [{bb}x{k2}x{m}]"
        )));
    }
    let mut out = Tensor::zeros(&[ba, n, m]);
    for s in 0..ba {
        let av = MatRef::strided(a.data(), s * n * k, n, k, k, 1, ArrayRole::Input)?;
        let bv = MatRef::strided(b.data(), s * k * m, k, m, m, 1, ArrayRole::Weight)?;
        let mut cv = MatMut::strided(out.data_mut(), s * n * m, n, m, m, 1, ArrayRole::Output)?;
        gemm_into(
            av,
            bv,
            &mut cv,
            GemmTiles {
                rows: tile.t_n,
                inner: tile.t_p,
                cols: tile.t_q,
            },
            budget,
            counters,
        )?;
    }
    Ok(out)
}

/// Materialized axis permutation with both source and destination tagged as
/// intermediates — the common case for the layout shuffles between two
/// batched GEMMs. See [`permute_as`] for explicit role tagging.
pub fn permute(t: &Tensor, axes: &[usize], counters: &mut Counters) -> Result<Tensor> {
    permute_as(
        t,
        axes,
        ArrayRole::Intermediate,
        ArrayRole::Intermediate,
        counters,
    )
}

/// Materialized axis permutation (always a full copy, even for the identity
/// permutation): every element is read once and written once, in both the
/// transfer and stage ledgers.
pub fn permute_as(
    t: &Tensor,
    axes: &[usize],
    src_role: ArrayRole,
    dst_role: ArrayRole,
    counters: &mut Counters,
) -> Result<Tensor> {
    let out = t.permuted(axes)?;
    let n = t.element_count() as u64;
    counters.transfer_read(src_role, n);
    counters.transfer_write(dst_role, n);
    counters.stage_read(src_role, n);
    counters.stage_write(dst_role, n);
    Ok(out)
}

/// Transpose a rows×cols tile held in scratch into dst (cols×rows). Scratch
/// is task-local, so this moves zero global bytes and counts nothing.
pub fn transpose_tile_in_scratch(src: &[f32], rows: usize, cols: usize, dst: &mut [f32]) {
    debug_assert!(src.len() >= rows * cols && dst.len() >= rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

/// Reference matmul: plain triple loop, no tiling, no scratch, no counters.
/// This is the independent oracle the instrumented paths are verified
/// against; keep it boring.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = as_2d(a)?;
    let (k2, m) = as_2d(b)?;
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "naive_matmul inner dims {k} vs {k2}"
        )));
    }
    let mut out = vec![0f32; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = ad[i * k + kk];
            let brow = &bd[kk * m..kk * m + m];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[n, m], out)
}

fn as_2d(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::ShapeMismatch(format!("expected rank-2, got {s:?}"))),
    }
}

fn as_3d(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [b, r, c] => Ok((*b, *r, *c)),
        s => Err(Error::ShapeMismatch(format!("expected rank-3, got {s:?}"))),
    }
}
