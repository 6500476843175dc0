use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, attached to errors raised inside [`crate::bicluster::bicluster_pipeline`]
/// and the CLI so failures can be traced to the step that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Preprocess,
    FactorNumbers,
    GlobalLoadings,
    ClusterLoadings,
    Clustering,
    Simulation,
    Evaluation,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::FactorNumbers => "factor-numbers",
            Stage::GlobalLoadings => "global-loadings",
            Stage::ClusterLoadings => "cluster-loadings",
            Stage::Clustering => "clustering",
            Stage::Simulation => "simulation",
            Stage::Evaluation => "evaluation",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    Symmetry { asymmetry: f64, tolerance: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("columns are not orthonormal (max |VᵀV − I| = {0:e})")]
    Orthonormality(f64),

    #[error("matrix is rank deficient (singular value ratio {0:e})")]
    Rank(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("autoregressive coefficient {0} is not stationary (|coeff| must be < 1)")]
    Stability(f64),

    #[error("lag {lag} out of range for series of length {len}")]
    Lag { lag: usize, len: usize },

    #[error("eigenvalues are not sorted in descending order at index {0}")]
    Order(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid input series: {0}")]
    InvalidSeries(String),

    #[error("ingest failed: {0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            // keep the innermost stage tag
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Extension for tagging a `Result` with the stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
