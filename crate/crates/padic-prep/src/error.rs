use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PadicError {
    #[error("zero denominator")]
    ZeroDenominator,

    /// Cancellation consumed every tracked digit without being provably exact.
    #[error("precision exhausted: fewer than one significant digit survives")]
    PrecisionExhausted,

    /// All digits known at full tracked precision cancelled.
    #[error("full cancellation at tracked precision")]
    FullCancellation,

    #[error("requested level {level} exceeds tracked precision {precision}")]
    LevelExceedsPrecision { level: u32, precision: u32 },

    #[error("field context mismatch: p = {0} vs p = {1}")]
    ContextMismatch(u64, u64),

    #[error("valuation {val} not divisible by root degree {degree}")]
    ValuationNotDivisible { val: i64, degree: u32 },

    #[error("no root on the requested branch")]
    NoRootOnBranch,

    #[error("branch residue class does not single out a root")]
    AmbiguousBranch,

    #[error("branch data inconsistent with monomial value")]
    BranchInconsistent,

    #[error("cell is empty: {0}")]
    EmptyCell(String),

    #[error("point is not in the cell")]
    NotInCell,

    #[error("operation requires a 1-cell")]
    NotAOneCell,

    #[error("derivative pole at t = {0}")]
    DerivativePole(String),

    #[error("point t = {0} is outside the function domain")]
    OutsideDomain(String),

    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("guards overlap at t = {0}")]
    OverlappingGuards(String),

    #[error("empty sample: window does not meet the region")]
    EmptySample,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("engine failure: {0}")]
    Engine(String),

    /// A verified hypothesis was contradicted during iteration. Never a retry.
    #[error("internal error: {0}")]
    Internal(String),
}
