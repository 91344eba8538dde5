use thiserror::Error;

use crate::explainer::ExplainError;
use crate::gateway::GatewayError;
use crate::grid::GridError;
use crate::prompt::PromptError;
use crate::rubric::RubricError;
use crate::sandbox::SandboxError;
use crate::store::StoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error; every module error converts into it.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
