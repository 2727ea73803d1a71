use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::transport::sim::TransportStats;
use crate::tuple_space::{Snapshot, WorkerId};

/// Header of the run-report CSV, shared by SMC and virtual-circuit rows.
pub const RUN_CSV_HEADER: &str =
    "run_id,mode,seed,workers,tasks,grain,status,makespan,retransmissions,result_digest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Timeout,
    /// Redundant masters disagreed on a deterministic-output answer, or a
    /// duplicate completion carried a different payload.
    Mismatch,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Success => "success",
            RunStatus::Timeout => "timeout",
            RunStatus::Mismatch => "mismatch",
        })
    }
}

/// One successful `take`, in dispatch order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatch {
    pub tick: u64,
    pub worker: WorkerId,
    pub task_id: u64,
    pub units: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub status: RunStatus,
    /// Ticks from the first task put to the last accepted result.
    pub makespan: u64,
    /// Arrival tick of each worker's last result; workers that returned
    /// nothing are absent.
    pub per_worker_finish: BTreeMap<WorkerId, u64>,
    pub per_worker_units: BTreeMap<WorkerId, u64>,
    /// Tasks re-exposed by shadow expiry.
    pub retransmissions: u64,
    /// Hex SHA-256 of the accepted answer; empty if none was accepted.
    pub result_digest: String,
    pub masters_used: u32,
    pub answer: Vec<u8>,
    pub verified: bool,
    pub total_units: u64,
    pub tasks: u64,
    pub grain: u64,
    pub workers: usize,
    pub run_seed: u64,
    pub dispatches: Vec<Dispatch>,
    pub transport: TransportStats,
    /// Worker requests resent after a reply timeout.
    pub resends: u64,
    pub duplicate_conflicts: u64,
    pub final_snapshot: Snapshot,
}

impl RunReport {
    pub fn units_executed(&self) -> u64 {
        self.per_worker_units.values().sum()
    }

    pub fn csv_row(&self, run_id: &str) -> String {
        format!(
            "{run_id},smc,{},{},{},{},{},{},{},{}",
            self.run_seed,
            self.workers,
            self.tasks,
            self.grain,
            self.status,
            self.makespan,
            self.retransmissions,
            self.result_digest
        )
    }
}
