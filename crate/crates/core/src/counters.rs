//! FLOP and data-movement instrumentation shared by every execution path.
//!
//! Counters keep two byte ledgers at different granularities, because the two
//! questions they answer are different and conflating them gives wrong
//! numbers for one or the other:
//!
//! * **Transfer ledger** — one count per tile-region load/store between a
//!   global array and tile scratch. Re-loading the same weight region from a
//!   different tile task counts again. This is the view in which fusing two
//!   stages can *increase* traffic (redundant operand loads), which is
//!   exactly the effect that bounds how far fusion can be pushed.
//! * **Stage ledger** — whole-array granularity: each kernel stage counts its
//!   operands as read once and its product as written once, no matter how
//!   the stage was tiled. This is the accounting in which statements like
//!   "the baseline moves 8bnr intermediate elements" are exact.
//!
//! Elements are the primitive unit; bytes are derived as
//! `elements × elem_bytes` with a configurable element width (default 2,
//! matching half-precision deployment accounting; compute itself is f32).
//! Scratch sizing is always done at 4 bytes/element and never uses
//! `elem_bytes`.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArrayRole {
    Input,
    Weight,
    Intermediate,
    Output,
}

impl ArrayRole {
    pub const ALL: [ArrayRole; 4] = [
        ArrayRole::Input,
        ArrayRole::Weight,
        ArrayRole::Intermediate,
        ArrayRole::Output,
    ];

    fn idx(self) -> usize {
        match self {
            ArrayRole::Input => 0,
            ArrayRole::Weight => 1,
            ArrayRole::Intermediate => 2,
            ArrayRole::Output => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArrayRole::Input => "input",
            ArrayRole::Weight => "weight",
            ArrayRole::Intermediate => "intermediate",
            ArrayRole::Output => "output",
        }
    }
}

/// Default modeled element width in bytes (half-precision accounting).
pub const DEFAULT_ELEM_BYTES: u32 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counters {
    elem_bytes: u32,
    flops: u64,
    transfer_read: [u64; 4],
    transfer_write: [u64; 4],
    stage_read: [u64; 4],
    stage_write: [u64; 4],
}

impl Default for Counters {
    fn default() -> Self {
        Counters::new(DEFAULT_ELEM_BYTES)
    }
}

impl Counters {
    pub fn new(elem_bytes: u32) -> Counters {
        assert!(elem_bytes > 0, "element width must be positive");
        Counters {
            elem_bytes,
            flops: 0,
            transfer_read: [0; 4],
            transfer_write: [0; 4],
            stage_read: [0; 4],
            stage_write: [0; 4],
        }
    }

    pub fn elem_bytes(&self) -> u32 {
        self.elem_bytes
    }

    pub fn add_flops(&mut self, n: u64) {
        self.flops += n;
    }

    /// Record a tile-region load from a global array into scratch.
    pub fn transfer_read(&mut self, role: ArrayRole, elems: u64) {
        self.transfer_read[role.idx()] += elems;
    }

    /// Record a tile-region store from scratch back to a global array.
    pub fn transfer_write(&mut self, role: ArrayRole, elems: u64) {
        self.transfer_write[role.idx()] += elems;
    }

    /// Record that a kernel stage consumed `elems` of an array (counted once
    /// per stage regardless of tiling).
    pub fn stage_read(&mut self, role: ArrayRole, elems: u64) {
        self.stage_read[role.idx()] += elems;
    }

    /// Record that a kernel stage produced `elems` of an array.
    pub fn stage_write(&mut self, role: ArrayRole, elems: u64) {
        self.stage_write[role.idx()] += elems;
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn transfer_read_elems(&self, role: ArrayRole) -> u64 {
        self.transfer_read[role.idx()]
    }

    pub fn transfer_write_elems(&self, role: ArrayRole) -> u64 {
        self.transfer_write[role.idx()]
    }

    /// Bytes moved global -> scratch, all roles, transfer granularity.
    pub fn global_bytes_read(&self) -> u64 {
        self.transfer_read.iter().sum::<u64>() * self.elem_bytes as u64
    }

    /// Bytes moved scratch -> global, all roles, transfer granularity.
    pub fn global_bytes_written(&self) -> u64 {
        self.transfer_write.iter().sum::<u64>() * self.elem_bytes as u64
    }

    pub fn stage_read_elems(&self, role: ArrayRole) -> u64 {
        self.stage_read[role.idx()]
    }

    pub fn stage_write_elems(&self, role: ArrayRole) -> u64 {
        self.stage_write[role.idx()]
    }

    /// Stage-granularity element traffic (reads + writes) of arrays that
    /// exist only between kernel stages. This is the quantity the fused
    /// paths shrink and the exact-traffic contracts are stated against.
    pub fn intermediate_elements(&self) -> u64 {
        self.stage_read[ArrayRole::Intermediate.idx()]
            + self.stage_write[ArrayRole::Intermediate.idx()]
    }

    pub fn intermediate_bytes(&self) -> u64 {
        self.intermediate_elements() * self.elem_bytes as u64
    }

    /// Transfer-granularity intermediate traffic, for comparison against the
    /// stage-granularity figure (redundant tile re-reads show up here).
    pub fn intermediate_transfer_elements(&self) -> u64 {
        self.transfer_read[ArrayRole::Intermediate.idx()]
            + self.transfer_write[ArrayRole::Intermediate.idx()]
    }

    /// Stage-granularity bytes summed over every role (reads + writes).
    pub fn stage_total_bytes(&self) -> u64 {
        let elems: u64 =
            self.stage_read.iter().sum::<u64>() + self.stage_write.iter().sum::<u64>();
        elems * self.elem_bytes as u64
    }

    pub fn reset(&mut self) {
        let eb = self.elem_bytes;
        *self = Counters::new(eb);
    }

    /// Fold another counter set into this one. Tile tasks each own a private
    /// `Counters`; merging is associative and commutative, so aggregation
    /// order never changes totals.
    pub fn merge(&mut self, other: &Counters) {
        assert_eq!(
            self.elem_bytes, other.elem_bytes,
            "cannot merge counters with different element widths"
        );
        self.flops += other.flops;
        for i in 0..4 {
            self.transfer_read[i] += other.transfer_read[i];
            self.transfer_write[i] += other.transfer_write[i];
            self.stage_read[i] += other.stage_read[i];
            self.stage_write[i] += other.stage_write[i];
        }
    }
}
