use std::path::PathBuf;

use npclab_core::train::TrainError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const INSUFFICIENT_DATA: i32 = 4;
    pub const GRADCHECK: i32 = 5;
    /// IO and anything else unexpected.
    pub const OTHER: i32 = 1;
}

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    ConfigParse {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("loss diverged at iteration {iteration} (epoch {epoch}); partial artifacts kept in {}", out.display())]
    Diverged {
        iteration: usize,
        epoch: usize,
        out: PathBuf,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(npclab_core::Error),
    #[error("gradient check failed: max relative error {max_error:e} at {coordinate}")]
    GradCheck { max_error: f64, coordinate: String },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Core(npclab_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::ConfigParse { .. } | LabError::Config(_) => exit::CONFIG,
            LabError::Diverged { .. } => exit::DIVERGED,
            LabError::InsufficientData(_) => exit::INSUFFICIENT_DATA,
            LabError::GradCheck { .. } => exit::GRADCHECK,
            LabError::Core(e) if is_config_error(e) => exit::CONFIG,
            _ => exit::OTHER,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        LabError::Io {
            context: context.into(),
            source,
        }
    }
}

fn is_config_error(e: &npclab_core::Error) -> bool {
    use npclab_core::Error::*;
    matches!(
        e,
        InvalidConfig(_) | ConfigMismatch(_) | InfeasibleCrowding { .. } | InfeasiblePairCount { .. }
    )
}

impl From<npclab_core::Error> for LabError {
    fn from(e: npclab_core::Error) -> Self {
        use npclab_core::Error::*;
        match e {
            InsufficientSamples { .. } | DegenerateVariance(_) | EmptyPartition(_) | InsufficientPairs { .. } => {
                LabError::InsufficientData(e)
            }
            e => LabError::Core(e),
        }
    }
}

/// Divergence is reported by the caller, which knows where artifacts went.
pub fn from_train(e: TrainError) -> Result<(usize, usize, npclab_core::train::TrainingLog), LabError> {
    match e {
        TrainError::Invalid(e) => Err(e.into()),
        TrainError::Diverged { iteration, epoch, log } => Ok((iteration, epoch, log)),
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
