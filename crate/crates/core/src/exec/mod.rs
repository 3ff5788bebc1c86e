//! Forward-pass executors: one per (method, dataflow) pair, all built on
//! the instrumented kernels so every path reports FLOPs and the two traffic
//! ledgers alongside its output.
//!
//! Paths compute Y = X · W for the structured W held in a
//! [`Factors`](crate::formats::Factors), where X is (n×i) and the canonical
//! Y is (n×o). "Baseline" paths materialize every intermediate the
//! textbook dataflow implies; "optimized" paths fuse stages or store
//! through strided views to delete intermediates, and are verified
//! bit-compatible with their baselines.

pub mod autotune;
mod blast;
mod lowrank;
mod monarch;
pub mod verify;

pub use autotune::Autotuner;
pub use lowrank::fused_lowrank_max_rank;
pub use monarch::fused_scatter_dest;

use crate::counters::{ArrayRole, Counters, DEFAULT_ELEM_BYTES};
use crate::error::{Error, Result};
use crate::formats::{Factors, Method};
use crate::kernels::{gemm_into, GemmTiles, MatMut, MatRef};
use crate::tensor::Tensor;
use crate::tile::{ScratchBudget, TileConfig};

/// Every executable dataflow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PathId {
    Dense,
    LowRank,
    LowRankFused,
    MonarchBase,
    MonarchOpt,
    BlastBase,
    BlastPartial,
    BlastReordered,
}

impl PathId {
    pub const ALL: [PathId; 8] = [
        PathId::Dense,
        PathId::LowRank,
        PathId::LowRankFused,
        PathId::MonarchBase,
        PathId::MonarchOpt,
        PathId::BlastBase,
        PathId::BlastPartial,
        PathId::BlastReordered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PathId::Dense => "dense",
            PathId::LowRank => "lowrank",
            PathId::LowRankFused => "lowrank_fused",
            PathId::MonarchBase => "monarch_base",
            PathId::MonarchOpt => "monarch_opt",
            PathId::BlastBase => "blast_base",
            PathId::BlastPartial => "blast_partial",
            PathId::BlastReordered => "blast_reordered",
        }
    }

    pub fn parse(s: &str) -> Result<PathId> {
        PathId::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown path '{s}'")))
    }

    /// The weight format this path executes.
    pub fn method(self) -> Method {
        match self {
            PathId::Dense => Method::Dense,
            PathId::LowRank | PathId::LowRankFused => Method::LowRank,
            PathId::MonarchBase | PathId::MonarchOpt => Method::Monarch,
            PathId::BlastBase | PathId::BlastPartial | PathId::BlastReordered => Method::Blast,
        }
    }

    /// All paths that can run a given method.
    pub fn paths_for(method: Method) -> &'static [PathId] {
        match method {
            Method::Dense => &[PathId::Dense],
            Method::LowRank => &[PathId::LowRank, PathId::LowRankFused],
            Method::Monarch => &[PathId::MonarchBase, PathId::MonarchOpt],
            Method::Blast => &[
                PathId::BlastBase,
                PathId::BlastPartial,
                PathId::BlastReordered,
            ],
        }
    }
}

/// How the finalized output is laid out.
///
/// `Canonical` is (n×o) with flattened column k·q + j (output blocks
/// outermost). `Transposed` skips the finalization shuffle where the
/// dataflow allows it: for the blocked-butterfly paths it yields (n×o)
/// with columns flattened j·b2 + k (pair with
/// [`prepermute_downstream_weight`](crate::formats::prepermute_downstream_weight)
/// on the next layer), and for the reordered shared-basis path it yields
/// the (o×n) transpose with canonical rows. Paths with no cheaper
/// alternative layout reject `Transposed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutputMode {
    Canonical,
    Transposed,
}

impl OutputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMode::Canonical => "canonical",
            OutputMode::Transposed => "transposed",
        }
    }
}

/// Knobs shared by every executor.
#[derive(Clone, Copy, Debug)]
pub struct ExecSettings {
    pub tile: TileConfig,
    pub budget: ScratchBudget,
    pub mode: OutputMode,
    /// Modeled element width for traffic bytes (the engine computes in f32
    /// regardless).
    pub elem_bytes: u32,
}

impl Default for ExecSettings {
    fn default() -> Self {
        let budget = ScratchBudget::default();
        ExecSettings {
            tile: TileConfig::default_for(budget).expect("default budget admits a tile config"),
            budget,
            mode: OutputMode::Canonical,
            elem_bytes: DEFAULT_ELEM_BYTES,
        }
    }
}

impl ExecSettings {
    pub fn with_tile(tile: TileConfig) -> Self {
        ExecSettings {
            tile,
            ..Default::default()
        }
    }

    pub(crate) fn fresh_counters(&self) -> Counters {
        Counters::new(self.elem_bytes)
    }
}

/// A finished forward pass: the output plus everything the cost model wants
/// to know about how it was produced.
#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub y: Tensor,
    pub counters: Counters,
}

/// Runs one path. The factors' method must match the path's; X is (n×i).
pub fn forward(
    path: PathId,
    x: &Tensor,
    factors: &Factors,
    settings: &ExecSettings,
) -> Result<ForwardResult> {
    let (_n, xi) = match x.shape() {
        [n, i] => (*n, *i),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "activations must be (n, i), got {s:?}"
            )))
        }
    };
    if path.method() != factors.method() {
        return Err(Error::InvalidArgument(format!(
            "path {} needs {} factors, got {}",
            path.as_str(),
            path.method().as_str(),
            factors.method().as_str()
        )));
    }
    if xi != factors.i() {
        return Err(Error::ShapeMismatch(format!(
            "activations have i={xi}, weight expects i={}",
            factors.i()
        )));
    }
    match (path, factors) {
        (PathId::Dense, Factors::Dense(w)) => forward_dense(x, w, settings),
        (PathId::LowRank, Factors::LowRank(f)) => lowrank::forward_baseline(x, f, settings),
        (PathId::LowRankFused, Factors::LowRank(f)) => lowrank::forward_fused(x, f, settings),
        (PathId::MonarchBase, Factors::Monarch(f)) => monarch::forward_baseline(x, f, settings),
        (PathId::MonarchOpt, Factors::Monarch(f)) => monarch::forward_optimized(x, f, settings),
        (PathId::BlastBase, Factors::Blast(f)) => blast::forward_baseline(x, f, settings),
        (PathId::BlastPartial, Factors::Blast(f)) => blast::forward_partial_fused(x, f, settings),
        (PathId::BlastReordered, Factors::Blast(f)) => blast::forward_reordered(x, f, settings),
        _ => unreachable!("method equality checked above"),
    }
}

/// Plain tiled X·W.
fn forward_dense(x: &Tensor, w: &Tensor, st: &ExecSettings) -> Result<ForwardResult> {
    if st.mode == OutputMode::Transposed {
        return Err(Error::InvalidArgument(
            "dense path has no transposed output mode".into(),
        ));
    }
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[1];
    let mut counters = st.fresh_counters();
    let mut y = Tensor::zeros(&[n, o]);
    gemm_into(
        MatRef::contiguous(x.data(), n, i, ArrayRole::Input),
        MatRef::contiguous(w.data(), i, o, ArrayRole::Weight),
        &mut MatMut::contiguous(y.data_mut(), n, o, ArrayRole::Output),
        GemmTiles {
            rows: st.tile.t_n,
            inner: st.tile.t_p,
            cols: st.tile.t_q,
        },
        st.budget,
        &mut counters,
    )?;
    Ok(ForwardResult { y, counters })
}
