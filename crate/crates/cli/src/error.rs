use simdim_core::decomp::DecompError;
use simdim_core::entropy::EntropyError;
use simdim_core::measure::MeasureError;
use simdim_core::prob::ProbError;
use simdim_core::semigroup::SemigroupError;
use simdim_core::walk::WalkError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_SUITE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("budget exceeded in {stage}: {detail}")]
    Budget { stage: String, detail: String },
    #[error("{stage}: {detail}")]
    Stage { stage: String, detail: String },
    #[error("{0}")]
    SuiteFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn field(field: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("field `{field}`: {msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Budget { .. } => EXIT_BUDGET,
            CliError::SuiteFailed(_) => EXIT_SUITE,
            CliError::Stage { .. } | CliError::Io(_) => EXIT_IO,
        }
    }
}

/// Attributes a module error to a pipeline stage and picks its exit class.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T, CliError>;
}

fn budget(stage: &str, detail: String) -> CliError {
    CliError::Budget {
        stage: stage.to_string(),
        detail,
    }
}

fn config(stage: &str, detail: String) -> CliError {
    CliError::Config(format!("{stage}: {detail}"))
}

impl<T> StageExt<T> for Result<T, SemigroupError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| match e {
            SemigroupError::BudgetExceeded { .. } => budget(stage, e.to_string()),
            _ => config(stage, e.to_string()),
        })
    }
}

impl<T> StageExt<T> for Result<T, WalkError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| match e {
            WalkError::StoppingCapExceeded { .. } => budget(stage, e.to_string()),
            WalkError::BadKappa(_) => config(stage, e.to_string()),
        })
    }
}

impl<T> StageExt<T> for Result<T, EntropyError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| config(stage, e.to_string()))
    }
}

impl<T> StageExt<T> for Result<T, ProbError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| config(stage, e.to_string()))
    }
}

impl<T> StageExt<T> for Result<T, MeasureError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| config(stage, e.to_string()))
    }
}

impl<T> StageExt<T> for Result<T, DecompError> {
    fn stage(self, stage: &str) -> Result<T, CliError> {
        self.map_err(|e| match e {
            DecompError::BlockPlanInfeasible(_) | DecompError::Walk(WalkError::StoppingCapExceeded { .. }) => {
                budget(stage, e.to_string())
            }
            DecompError::BadParameter(_)
            | DecompError::PreconditionViolation(_)
            | DecompError::ScaleMismatch { .. } => config(stage, e.to_string()),
            _ => CliError::Stage {
                stage: stage.to_string(),
                detail: e.to_string(),
            },
        })
    }
}
