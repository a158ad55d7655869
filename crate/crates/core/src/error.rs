use thiserror::Error;

/// Errors produced by the sampling engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cell (event {event}, oeoff {oeoff_idx}, decel {decel_idx}) is outside the grid")]
    CellOutOfBounds {
        event: usize,
        oeoff_idx: usize,
        decel_idx: usize,
    },

    #[error("simulation fault: {0}")]
    SimulationFault(String),

    #[error("prototype event {event} cannot crash at the extreme cell after {attempts} attempts")]
    NonCrashablePrototype { event: usize, attempts: usize },

    #[error("monotonicity violation at flat cell {cell}: {detail}")]
    MonotonicityViolation { cell: usize, detail: String },

    #[error("no samplable cells remain")]
    ExhaustedSpace,

    #[error("severity sampling requires maximum impact speeds for every event")]
    InitializationRequired,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
