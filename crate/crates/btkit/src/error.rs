//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BtError {
    #[error("bit width mismatch: expected {expected} bits, got {got}")]
    WidthMismatch { expected: u32, got: u32 },

    #[error("raw value {raw:#x} does not fit in {width} bits")]
    RawOutOfRange { raw: u32, width: u32 },

    #[error("non-finite value cannot be bit-encoded")]
    NonFinite,

    #[error("count {count} exceeds word width {width}")]
    CountOutOfRange { count: u32, width: u32 },

    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("multiset size {0} is odd; two equal flits cannot be formed")]
    OddMultiset(usize),

    #[error("instance size {size} exceeds brute-force limit {limit}")]
    InstanceTooLarge { size: usize, limit: usize },

    #[error("values per flit must be even, got {0}")]
    OddValuesPerFlit(usize),

    #[error("flit has {0} words; cannot split into input/weight halves")]
    MalformedHalves(usize),

    #[error("permutation of length {0} is not a bijection")]
    NotAPermutation(usize),

    #[error("permutation length {perm} does not match slot count {slots}")]
    PermLengthMismatch { perm: usize, slots: usize },

    #[error("invalid mesh config: {0}")]
    InvalidMesh(String),

    #[error("coordinate ({x},{y}) out of bounds for {cols}x{rows} mesh")]
    OutOfBounds { x: u16, y: u16, cols: u16, rows: u16 },

    #[error("simulation exceeded cycle cap {0}")]
    CycleCapExceeded(u64),

    #[error("invalid layer geometry: {0}")]
    InvalidLayer(String),

    #[error("weight file error: {0}")]
    WeightFile(String),

    #[error("tensor shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("reduction rate undefined: baseline bit-transition count is zero")]
    UndefinedRate,

    #[error("need at least two flits to compare, got {0}")]
    InsufficientFlits(usize),

    #[error("invalid power parameter: {0}")]
    InvalidPowerParam(&'static str),

    #[error("no processing elements available in mesh")]
    NoPes,
}

pub type Result<T> = std::result::Result<T, BtError>;
