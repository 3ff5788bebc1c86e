//! Tile geometry and the per-task scratch budget.
//!
//! A "tile task" is the unit of kernel work: it owns a private scratch buffer
//! (modeling a fast local memory), loads operand tiles into it, computes, and
//! stores one output region. The budget caps how much scratch any single task
//! may hold, in f32 elements at 4 bytes each — the compute width, independent
//! of the modeled element width used for traffic byte accounting.

use crate::error::{Error, Result};

/// Inclusive bounds for each tile extent; extents must be powers of two.
pub const TILE_MIN: usize = 16;
pub const TILE_MAX: usize = 256;

pub const DEFAULT_SCRATCH_KIB: usize = 192;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScratchBudget {
    bytes: usize,
}

impl Default for ScratchBudget {
    fn default() -> Self {
        ScratchBudget::from_kib(DEFAULT_SCRATCH_KIB)
    }
}

impl ScratchBudget {
    pub fn from_kib(kib: usize) -> ScratchBudget {
        ScratchBudget { bytes: kib * 1024 }
    }

    pub fn from_bytes(bytes: usize) -> ScratchBudget {
        ScratchBudget { bytes }
    }

    pub fn bytes(self) -> usize {
        self.bytes
    }

    /// How many f32 elements fit in the budget.
    pub fn f32_capacity(self) -> usize {
        self.bytes / 4
    }

    /// Check a task's scratch requirement (in f32 elements) against the
    /// budget.
    pub fn ensure(self, needed_elems: usize) -> Result<()> {
        if needed_elems * 4 > self.bytes {
            Err(Error::ScratchBudgetExceeded {
                needed_bytes: needed_elems * 4,
                budget_bytes: self.bytes,
            })
        } else {
            Ok(())
        }
    }
}

/// Scratch footprint (in f32 elements) of one GEMM tile task: two operand
/// tiles plus the accumulator.
pub fn gemm_scratch_elems(rows: usize, inner: usize, cols: usize) -> usize {
    rows * inner + inner * cols + rows * cols
}

/// Tile extents for the four loop dimensions a structured forward pass tiles
/// over: `t_n` (tokens), `t_r` (rank / composite middle), `t_p` (input block
/// width), `t_q` (output block width).
///
/// The derived `Ord` is lexicographic in declaration order (t_n, t_r, t_p,
/// t_q), which is the deterministic sweep order the autotuner relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileConfig {
    pub t_n: usize,
    pub t_r: usize,
    pub t_p: usize,
    pub t_q: usize,
}

impl TileConfig {
    /// Validates extents (powers of two in [TILE_MIN, TILE_MAX]) and checks
    /// that every GEMM stage shape a forward pass can form from these
    /// extents — (t_n,t_p,t_r), (t_n,t_r,t_q), (t_n,t_p,t_q) — fits the
    /// scratch budget, so a constructed config can never spawn an
    /// over-budget tile task.
    pub fn new(
        t_n: usize,
        t_r: usize,
        t_p: usize,
        t_q: usize,
        budget: ScratchBudget,
    ) -> Result<TileConfig> {
        for (name, v) in [("t_n", t_n), ("t_r", t_r), ("t_p", t_p), ("t_q", t_q)] {
            if !v.is_power_of_two() || v < TILE_MIN || v > TILE_MAX {
                return Err(Error::InvalidTileConfig(format!(
                    "{name}={v} must be a power of two in [{TILE_MIN}, {TILE_MAX}]"
                )));
            }
        }
        for (rows, inner, cols) in [(t_n, t_p, t_r), (t_n, t_r, t_q), (t_n, t_p, t_q)] {
            budget.ensure(gemm_scratch_elems(rows, inner, cols))?;
        }
        Ok(TileConfig { t_n, t_r, t_p, t_q })
    }

    /// Largest uniform config legal under the budget.
    pub fn default_for(budget: ScratchBudget) -> Result<TileConfig> {
        let mut t = TILE_MAX;
        while t >= TILE_MIN {
            if let Ok(cfg) = TileConfig::new(t, t, t, t, budget) {
                return Ok(cfg);
            }
            t /= 2;
        }
        Err(Error::NoLegalTileConfig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_128_exactly_fills_default_budget() {
        let budget = ScratchBudget::default();
        // Three 128x128 f32 tiles: 3 * 128 * 128 * 4 bytes = 192 KiB exactly.
        assert_eq!(gemm_scratch_elems(128, 128, 128) * 4, budget.bytes());
        assert!(TileConfig::new(128, 128, 128, 128, budget).is_ok());
        assert_eq!(
            TileConfig::default_for(budget).unwrap(),
            TileConfig {
                t_n: 128,
                t_r: 128,
                t_p: 128,
                t_q: 128
            }
        );
    }

    #[test]
    fn uniform_256_exceeds_default_budget() {
        let err = TileConfig::new(256, 256, 256, 256, ScratchBudget::default()).unwrap_err();
        match err {
            Error::ScratchBudgetExceeded { needed_bytes, budget_bytes } => {
                assert!(needed_bytes > budget_bytes);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_and_non_power_of_two() {
        let b = ScratchBudget::default();
        assert!(TileConfig::new(8, 64, 64, 64, b).is_err());
        assert!(TileConfig::new(64, 512, 64, 64, b).is_err());
        assert!(TileConfig::new(64, 48, 64, 64, b).is_err());
    }

    #[test]
    fn mixed_extents_checked_per_stage() {
        let b = ScratchBudget::default();
        // (256, 16, 256, 16): stage shapes are (256,256,16), (256,16,16),
        // (256,256,16); the largest needs (256*256 + 256*16 + 256*16)*4
        // = 294912 bytes > 192 KiB.
        assert!(TileConfig::new(256, 16, 256, 16, b).is_err());
        // (128, 64, 128, 64) fits: worst stage (128,128,64) needs
        // (16384 + 8192 + 8192)*4 = 131072 bytes.
        assert!(TileConfig::new(128, 64, 128, 64, b).is_ok());
    }

    #[test]
    fn default_shrinks_with_budget() {
        let small = ScratchBudget::from_kib(48); // fits 64^2 tiles exactly
        assert_eq!(
            TileConfig::default_for(small).unwrap(),
            TileConfig {
                t_n: 64,
                t_r: 64,
                t_p: 64,
                t_q: 64
            }
        );
        let tiny = ScratchBudget::from_bytes(1024);
        assert!(matches!(
            TileConfig::default_for(tiny),
            Err(Error::NoLegalTileConfig)
        ));
    }

    #[test]
    fn ordering_is_lexicographic_in_sweep_order() {
        let b = ScratchBudget::default();
        let a = TileConfig::new(32, 128, 64, 64, b).unwrap();
        let c = TileConfig::new(64, 16, 16, 16, b).unwrap();
        assert!(a < c, "t_n dominates the sweep order");
        let d = TileConfig::new(32, 128, 64, 128, b).unwrap();
        assert!(a < d, "t_q is the final tie-breaker");
    }
}
