use std::path::PathBuf;

use crate::model::ScenarioError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {}", join(.0))]
    InvalidScenario(Vec<ScenarioError>),

    #[error("could not place {entity} #{index} after {attempts} attempts (scenario too crowded)")]
    Placement {
        entity: &'static str,
        index: usize,
        attempts: usize,
    },

    #[error("length mismatch: expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("agent index {index} out of range for {n} agents")]
    AgentIndex { index: usize, n: usize },

    #[error("exhaustive search over 2^{n} configurations exceeds the cap of {cap} agents")]
    ConfigCap { n: usize, cap: usize },

    #[error("weights file: {0}")]
    Weights(String),

    #[error("policy input dimension {found} does not match scenario observation size {expected}")]
    WeightsDimension { expected: usize, found: usize },

    #[error("no episode records to aggregate")]
    EmptyRecords,

    #[error("trace {path}: line {line}: {msg}")]
    Trace { path: PathBuf, line: usize, msg: String },

    #[error("scenario file: {0}")]
    ScenarioFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join(errs: &[ScenarioError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
