use thiserror::Error;

/// Errors surfaced by the library. Infeasibility of an optimization
/// candidate is a value (`None` / [`crate::profile::SolveOutcome`]), not an
/// error; these variants are real faults.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("simulation fault: {0}")]
    Sim(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("unknown figure key: {0}")]
    UnknownFigure(String),

    #[error("plot schema mismatch: {0}")]
    PlotSchema(String),

    #[error("unknown fuel preset: {0}")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
