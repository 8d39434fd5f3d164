use thiserror::Error;

/// Errors surfaced by the identification and simulation routines.
///
/// Variants are grouped by where they arise: data problems (degenerate
/// instrument, empty sub-cells), identification failures (no first stage,
/// moments that reject the model), and invalid construction inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("instrument degenerate in cell {cell}: z takes a single value")]
    DegenerateInstrument { cell: u32 },

    #[error("empty sub-cell (T={t}, z={z}) in cell {cell}")]
    EmptySubCell { cell: u32, t: u8, z: u8 },

    #[error("cell {cell} not present in sample")]
    UnknownCell { cell: u32 },

    #[error("no first stage: Cov(T,z) = 0")]
    NoFirstStage,

    #[error("degenerate observed treatment arm: p = {p}")]
    DegenerateTreatmentArm { p: f64 },

    #[error("infeasible: inconsistent system at k = {k}")]
    InconsistentSystem { k: u8 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("moments inconsistent with model: {0}")]
    MomentsInconsistent(String),

    #[error("one-sided restriction rejected by moments: implied {name} = {value}")]
    OneSidedRejected { name: &'static str, value: f64 },

    #[error("difference unidentified at beta = 0 (theta1 = 0)")]
    BetaZeroUnidentified,

    #[error("infeasible moment triple for cell ({t}, {k}): {reason}")]
    InfeasibleMomentTriple { t: u8, k: u8, reason: String },

    #[error("weak identification: |theta1| = {theta1} below {band} (3 standard errors)")]
    WeakIdentification { theta1: f64, band: f64 },

    #[error("internal invariant breach: {0}")]
    InvariantBreach(String),
}

pub type Result<T> = std::result::Result<T, Error>;
