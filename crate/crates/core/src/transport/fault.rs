use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tuple_space::WorkerId;

/// Scheduled outage of one worker. `recover_tick: None` means it never returns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashEvent {
    pub worker_id: WorkerId,
    pub crash_tick: u64,
    #[serde(default)]
    pub recover_tick: Option<u64>,
}

/// Permanent failure of one redundant master.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterCrash {
    pub master_id: u32,
    pub tick: u64,
}

/// Seeded schedule of message losses and crashes. Two runs with equal plans
/// see exactly the same faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    pub seed: u64,
    #[serde(default)]
    pub msg_loss_prob: f64,
    #[serde(default)]
    pub crash_events: Vec<CrashEvent>,
    /// Chance that a worker crashes while executing any one task.
    #[serde(default)]
    pub per_step_crash_prob: f64,
    /// Downtime after a random crash; `None` keeps the worker down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover_after: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub master_crashes: Vec<MasterCrash>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultPlanError {
    #[error("{field} = {value} is not a probability")]
    Probability { field: &'static str, value: f64 },
    #[error("worker {worker} recovers at {recover} before crashing at {crash}")]
    RecoverBeforeCrash { worker: WorkerId, crash: u64, recover: u64 },
    #[error("recover_after must be positive")]
    ZeroDowntime,
}

impl FaultPlan {
    /// A plan that injects nothing.
    pub fn none(seed: u64) -> Self {
        Self {
            seed,
            msg_loss_prob: 0.0,
            crash_events: Vec::new(),
            per_step_crash_prob: 0.0,
            recover_after: None,
            master_crashes: Vec::new(),
        }
    }

    pub fn with_loss(seed: u64, p: f64) -> Self {
        Self { msg_loss_prob: p, ..Self::none(seed) }
    }

    pub fn validate(&self) -> Result<(), FaultPlanError> {
        for (field, value) in [
            ("msg_loss_prob", self.msg_loss_prob),
            ("per_step_crash_prob", self.per_step_crash_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FaultPlanError::Probability { field, value });
            }
        }
        for c in &self.crash_events {
            if let Some(r) = c.recover_tick {
                if r <= c.crash_tick {
                    return Err(FaultPlanError::RecoverBeforeCrash {
                        worker: c.worker_id,
                        crash: c.crash_tick,
                        recover: r,
                    });
                }
            }
        }
        if self.recover_after == Some(0) {
            return Err(FaultPlanError::ZeroDowntime);
        }
        Ok(())
    }

    pub fn is_fault_free(&self) -> bool {
        self.msg_loss_prob == 0.0
            && self.crash_events.is_empty()
            && self.per_step_crash_prob == 0.0
            && self.master_crashes.is_empty()
    }
}
