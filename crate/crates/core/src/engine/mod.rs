//! The fuzzing loop: target execution, mutation and campaign orchestration.

use thiserror::Error;

use crate::coverage::CoverageError;
use crate::energy::EnergyError;

pub mod campaign;
pub mod fixtures;
pub mod mutate;
pub mod target;

pub use campaign::{
    fuzz_one, run_campaign, run_campaign_with_seeds, CampaignConfig, CampaignReport, FuzzHeuristics, HavocParams,
    ScheduleStep, StopCondition,
};
pub use mutate::{havoc_mutate, splice, DEFAULT_MAX_INPUT_LEN};
pub use target::{execute, ExecResult, ExecStatus, InputMode, Target, TargetKind, TargetSpec, TRACE_ENV};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown synthetic model `{0}`")]
    UnknownModel(String),
    #[error("failed to spawn target: {0}")]
    Spawn(String),
    #[error("bad trace from target: {0}")]
    Trace(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}
