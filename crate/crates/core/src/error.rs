//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index space extent must be positive")]
    EmptySpace,

    #[error("subrange {start}..{end} of subspace '{name}' is out of bounds {lo}..{hi}")]
    SubrangeOutOfBounds {
        name: String,
        start: usize,
        end: usize,
        lo: usize,
        hi: usize,
    },

    #[error("subspace '{name}' has overlapping or empty subranges")]
    BadSubranges { name: String },

    #[error("unknown subspace '{name}'")]
    UnknownSubspace { name: String },

    #[error("spin attributes must cover every index exactly once")]
    IncompleteSpinCover,

    #[error("tile size must be at least 1")]
    InvalidTileSize,

    #[error("tile sizes sum to {got}, expected the space extent {expected}")]
    TileCoverage { expected: usize, got: usize },

    #[error("cannot tile a non-contiguous index space directly")]
    NonContiguousSpace,

    #[error("tile {start}..{end} straddles a spin boundary")]
    TileStraddlesSpin { start: usize, end: usize },

    #[error("tile {start}..{end} straddles the boundary of subspace '{name}'")]
    TileStraddlesSubspace {
        name: String,
        start: usize,
        end: usize,
    },

    #[error("tensor '{tensor}' has {dims} dimensions but {labels} labels were given")]
    LabelArity {
        tensor: String,
        dims: usize,
        labels: usize,
    },

    #[error("label '{label}' is not a sub-label of dimension {dim} of tensor '{tensor}'")]
    IncompatibleLabel {
        tensor: String,
        label: String,
        dim: usize,
    },

    #[error("label '{label}' appears more than once on one operand of tensor '{tensor}'")]
    RepeatedLabel { tensor: String, label: String },

    #[error("labels of '{lhs}' and '{rhs}' are not a permutation of each other")]
    LabelMismatch { lhs: String, rhs: String },

    #[error("label '{label}' appears on the right-hand side only once and not on the left")]
    DanglingLabel { label: String },

    #[error("label '{label}' appears on the left and on both right-hand operands")]
    AmbiguousLabel { label: String },

    #[error("operand tensor '{tensor}' aliases the output tensor of the operation")]
    AliasedOperand { tensor: String },

    #[error("tensor '{tensor}' is not allocated in this execution context")]
    Unallocated { tensor: String },

    #[error("tensor '{tensor}' is already allocated in this execution context")]
    AlreadyAllocated { tensor: String },

    #[error("tensor '{tensor}' was deallocated earlier in the queue")]
    UseAfterDeallocate { tensor: String },

    #[error("block {block:?} is outside the block grid of tensor '{tensor}'")]
    BlockOutOfRange { tensor: String, block: Vec<usize> },

    #[error("block data has {got} elements, expected {expected}")]
    BlockExtentMismatch { expected: usize, got: usize },

    #[error("write into predicate-zero block {block:?} of tensor '{tensor}'")]
    ZeroBlockWrite { tensor: String, block: Vec<usize> },

    #[error("rank {rank} is outside the process group of size {nranks}")]
    RankOutOfRange { rank: usize, nranks: usize },

    #[error("process group must contain at least one rank")]
    EmptyProcessGroup,

    #[error("matrix is not positive semidefinite: pivot {pivot:.3e} at step {step}")]
    NotPositiveSemidefinite { pivot: f64, step: usize },

    #[error("spin-conserving predicate requires an even tensor order, got {order}")]
    OddSpinOrder { order: usize },

    #[error("every dimension of a spin tensor needs spin attributes, dimension {dim} has none")]
    MissingSpin { dim: usize },

    #[error("orbital energy denominator is zero for a triple")]
    ZeroDenominator,

    #[error("index triple must be strictly increasing")]
    UnorderedTriple,

    #[error("sizes must satisfy {need}, got n_o = {n_o}, n_u = {n_u}")]
    BadSystemSize {
        need: &'static str,
        n_o: usize,
        n_u: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
