//! Block low-rank linear layers on CPU: structured weight containers and
//! factorization, tiled + instrumented forward executors (baseline and
//! fused variants), and an analytic roofline cost model.
//!
//! Layer structure:
//! - [`tensor`], [`tile`], [`counters`], [`kernels`]: the substrate — dense
//!   row-major tensors, tile/scratch geometry, two-ledger traffic counters,
//!   and the instrumented GEMM/permute primitives.
//! - [`formats`]: low-rank / block-diagonal-butterfly ("monarch") / shared-
//!   factor block low-rank ("blast") weight containers, factorization from
//!   dense weights, reconstruction, and offline layout transforms.
//! - [`exec`]: the forward-pass paths, baseline and memory-optimized, plus
//!   the tile autotuner and the oracle-equivalence sweep.
//! - [`roofline`]: analytic FLOP/byte/intensity model and bound
//!   classification against a hardware profile.
//! - [`synth`]: seeded random factor/activation synthesis for benchmarks.

pub mod counters;
pub mod error;
pub mod exec;
pub mod formats;
pub mod kernels;
pub mod roofline;
pub mod synth;
pub mod tensor;
pub mod tile;

pub use counters::{ArrayRole, Counters, DEFAULT_ELEM_BYTES};
pub use error::{Error, Result};
pub use exec::{forward, ExecSettings, ForwardResult, OutputMode, PathId};
pub use tensor::Tensor;
pub use tile::{ScratchBudget, TileConfig, DEFAULT_SCRATCH_KIB, TILE_MAX, TILE_MIN};
