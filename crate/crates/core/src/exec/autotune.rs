//! Empirical tile-config selection.
//!
//! Candidate configs are tried once each on the real workload and the
//! fastest wins; results are memoized per (path, output mode, shape) so a
//! benchmark sweep tunes each distinct workload exactly once.

use std::collections::HashMap;
use std::time::Instant;

use super::{forward, ExecSettings, OutputMode, PathId};
use crate::error::{Error, Result};
use crate::formats::Factors;
use crate::tensor::Tensor;
use crate::tile::{ScratchBudget, TileConfig};

type Key = (PathId, OutputMode, usize, usize, usize, usize, usize, usize);

/// One timed trial from a tuning sweep.
#[derive(Debug, Clone)]
pub struct TuneRecord {
    pub tile: TileConfig,
    pub seconds: f64,
}

/// Outcome of a full sweep: the winner plus every trial that ran.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best: TileConfig,
    pub trials: Vec<TuneRecord>,
}

pub struct Autotuner {
    budget: ScratchBudget,
    mode: OutputMode,
    elem_bytes: u32,
    cache: HashMap<Key, TileConfig>,
}

impl Autotuner {
    pub fn new(budget: ScratchBudget, mode: OutputMode, elem_bytes: u32) -> Self {
        Autotuner {
            budget,
            mode,
            elem_bytes,
            cache: HashMap::new(),
        }
    }

    /// The fixed candidate ladder, smallest first, pre-filtered against the
    /// scratch budget. Listed as (t_n, t_r, t_p, t_q).
    pub fn candidates(budget: ScratchBudget) -> Vec<TileConfig> {
        [
            (32, 32, 32, 32),
            (64, 64, 64, 64),
            (128, 64, 128, 64),
            (128, 128, 128, 128),
        ]
        .iter()
        .filter_map(|&(t_n, t_r, t_p, t_q)| TileConfig::new(t_n, t_r, t_p, t_q, budget).ok())
        .collect()
    }

    pub fn settings(&self, tile: TileConfig) -> ExecSettings {
        ExecSettings {
            tile,
            budget: self.budget,
            mode: self.mode,
            elem_bytes: self.elem_bytes,
        }
    }

    /// Pick (or recall) the fastest legal tile config for this workload.
    pub fn tune(&mut self, path: PathId, x: &Tensor, factors: &Factors) -> Result<TileConfig> {
        let key = self.key(path, x, factors);
        if let Some(&tile) = self.cache.get(&key) {
            return Ok(tile);
        }
        let best = self.sweep(path, x, factors)?.best;
        self.cache.insert(key, best);
        Ok(best)
    }

    /// Run the sweep unconditionally and return every trial (used by the
    /// CLI to show its work). Does not consult the cache but does fill it.
    pub fn sweep(&mut self, path: PathId, x: &Tensor, factors: &Factors) -> Result<TuneOutcome> {
        let mut trials = Vec::new();
        let mut best: Option<(f64, TileConfig)> = None;
        for tile in Self::candidates(self.budget) {
            let st = self.settings(tile);
            let t0 = Instant::now();
            match forward(path, x, factors, &st) {
                Ok(_) => {
                    let secs = t0.elapsed().as_secs_f64();
                    trials.push(TuneRecord {
                        tile,
                        seconds: secs,
                    });
                    // Strict comparison: ties keep the earliest (smallest)
                    // candidate, so results are stable run to run.
                    if best.map_or(true, |(b, _)| secs < b) {
                        best = Some((secs, tile));
                    }
                }
                Err(Error::ScratchBudgetExceeded { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let (_, tile) = best.ok_or(Error::NoLegalTileConfig)?;
        let key = self.key(path, x, factors);
        self.cache.insert(key, tile);
        Ok(TuneOutcome { best: tile, trials })
    }

    fn key(&self, path: PathId, x: &Tensor, factors: &Factors) -> Key {
        let n = x.shape()[0];
        let (r, b1, b2) = match factors {
            Factors::Dense(_) => (0, 0, 0),
            Factors::LowRank(f) => (f.rank(), 0, 0),
            Factors::Monarch(f) => (f.r(), f.b1(), f.b2()),
            Factors::Blast(f) => (f.r(), f.b1(), f.b2()),
        };
        (path, self.mode, n, factors.i(), factors.o(), r, b1, b2)
    }
}
