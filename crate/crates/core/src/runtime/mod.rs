//! Master and worker agents over the tuple space.
//!
//! Masters put the task set, workers loop take → execute → complete, and every
//! surviving master merges the stored results. Which redundant-master setups
//! are sound depends on the application's [`StabilityClass`].

pub mod apps;
mod engine;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::granularity::{GranularityError, TaskSpec};
use crate::report::RunStatus;
use crate::transport::fault::FaultPlanError;
use crate::tuple_space::{AppId, WorkerId};

pub use engine::run;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkerSpec {
    pub worker_id: WorkerId,
    /// Work units per tick.
    pub speed_factor: f64,
    /// One-way message latency in ticks.
    #[serde(default)]
    pub link_delay: u64,
}

impl WorkerSpec {
    pub fn new(id: u32, speed_factor: f64, link_delay: u64) -> Self {
        Self { worker_id: WorkerId(id), speed_factor, link_delay }
    }

    /// Ticks spent computing a task of `units`.
    pub fn service_ticks(&self, units: u64) -> u64 {
        ((units as f64 / self.speed_factor).ceil() as u64).max(1)
    }
}

/// Run-level knobs shared by every agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    pub run_seed: u64,
    /// The run is abandoned as `Timeout` past this tick.
    pub tick_budget: u64,
    /// Shadow lease; defaults to four mean task service times.
    pub lease_len: Option<u64>,
    /// Latency added to every worker link.
    pub base_delay: u64,
}

impl RunSettings {
    pub fn new(run_seed: u64, tick_budget: u64) -> Self {
        Self { run_seed, tick_budget, lease_len: None, base_delay: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterSpec {
    pub master_id: u32,
    /// Number of concurrent masters, ids `master_id..master_id + redundancy`.
    pub redundancy: u32,
}

impl MasterSpec {
    pub fn single() -> Self {
        Self { master_id: 0, redundancy: 1 }
    }

    pub fn redundant(k: u32) -> Self {
        Self { master_id: 0, redundancy: k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StabilityClass {
    DetInDetOut,
    DetInNonDetOut,
    NonDetInDetOut,
    NonDetInNonDetOut,
}

impl StabilityClass {
    pub const ALL: [StabilityClass; 4] = [
        StabilityClass::DetInDetOut,
        StabilityClass::DetInNonDetOut,
        StabilityClass::NonDetInDetOut,
        StabilityClass::NonDetInNonDetOut,
    ];

    /// Whether checkpoint-free redundant masters are sound for this class.
    pub fn supports_redundant_masters(self) -> bool {
        self != StabilityClass::NonDetInDetOut
    }

    pub fn deterministic_output(self) -> bool {
        matches!(self, StabilityClass::DetInDetOut | StabilityClass::NonDetInDetOut)
    }
}

impl fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a worker knows while executing one task.
#[derive(Debug, Clone, Copy)]
pub struct ExecContext {
    pub run_seed: u64,
    /// Derived from `(run_seed, task_id)`; independent of the assignment.
    pub task_seed: u64,
    pub worker: WorkerId,
    /// Tick at which the task reached the worker.
    pub now: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TaskResult<'a> {
    pub task: TaskSpec,
    pub payload: &'a [u8],
    pub completed_at: u64,
}

pub trait Application: Send + Sync {
    fn app_id(&self) -> AppId;

    fn stability(&self) -> StabilityClass;

    /// Total work units `N`.
    fn total_work(&self) -> u64;

    fn decompose(&self, grain: u64) -> Result<Vec<TaskSpec>, GranularityError> {
        crate::granularity::decompose(self.total_work(), grain)
    }

    fn execute(&self, task: &TaskSpec, ctx: &ExecContext) -> Vec<u8>;

    /// Combines results, given in task-id order.
    fn merge(&self, results: &[TaskResult<'_>]) -> Vec<u8>;

    fn verify(&self, answer: &[u8]) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AcceptDecision {
    Accepted(Vec<u8>),
    Mismatch,
    Unsupported,
}

/// Decides which of the masters' answers (in master-id order) to accept.
///
/// Deterministic-output answers must agree byte for byte. Non-deterministic
/// output may diverge; the first master's answer is taken. The
/// non-deterministic-input, deterministic-output class would need
/// checkpointing and is refused.
pub fn accept_policy(class: StabilityClass, answers: &[Vec<u8>]) -> AcceptDecision {
    let Some(first) = answers.first() else {
        return AcceptDecision::Mismatch;
    };
    match class {
        StabilityClass::NonDetInDetOut => AcceptDecision::Unsupported,
        StabilityClass::DetInDetOut => {
            if answers.iter().all(|a| a == first) {
                AcceptDecision::Accepted(first.clone())
            } else {
                AcceptDecision::Mismatch
            }
        }
        StabilityClass::DetInNonDetOut | StabilityClass::NonDetInNonDetOut => {
            AcceptDecision::Accepted(first.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("{class} applications cannot run with {masters} checkpoint-free masters")]
    UnsupportedStability { class: StabilityClass, masters: u32 },
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("at least one master is required")]
    NoMasters,
    #[error("worker {0} is listed twice")]
    DuplicateWorker(WorkerId),
    #[error("worker {0} has a non-positive speed factor")]
    InvalidSpeed(WorkerId),
    #[error("lease length must be positive")]
    InvalidLease,
    #[error("invalid application parameters: {0}")]
    InvalidApp(String),
    #[error(transparent)]
    Granularity(#[from] GranularityError),
    #[error(transparent)]
    FaultPlan(#[from] FaultPlanError),
    #[error("run ended with status {0}")]
    Unsuccessful(RunStatus),
}
