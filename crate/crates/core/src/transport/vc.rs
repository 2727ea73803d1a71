//! Virtual-circuit baseline: the master holds one persistent circuit per
//! worker, feeds it the worker's static N/P share chunk by chunk, and has no
//! retransmission. The first lost message or crashed endpoint halts the run.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sim::{Event, EventKind, Node, Simulator};
use super::FaultPlan;
use crate::config::AppConfig;
use crate::granularity::{self, GrainMode, TaskSpec};
use crate::runtime::{RunError, WorkerSpec};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcStatus {
    Success,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltCause {
    MessageLoss,
    WorkerCrash,
    MasterCrash,
}

impl fmt::Display for VcStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VcStatus::Success => "success",
            VcStatus::Halted => "halted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcRunOutcome {
    pub status: VcStatus,
    /// Set exactly when `status` is `Halted`.
    pub halt_cause: Option<HaltCause>,
    /// Tick of the last result on success, of the halting event otherwise.
    pub elapsed: u64,
    pub messages_sent: u64,
    pub chunks: u64,
    pub grain: u64,
    pub workers: usize,
    pub run_seed: u64,
}

impl VcRunOutcome {
    pub fn is_success(&self) -> bool {
        self.status == VcStatus::Success
    }

    /// A run-report CSV row. Circuits never retransmit and carry no digest.
    pub fn csv_row(&self, run_id: &str) -> String {
        format!(
            "{run_id},vc,{},{},{},{},{},{},0,",
            self.run_seed, self.workers, self.chunks, self.grain, self.status, self.elapsed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Msg {
    Chunk(usize),
    Result(usize),
}

struct Circuit {
    spec: WorkerSpec,
    delay: u64,
    chunks: Vec<TaskSpec>,
    next: usize,
    done: bool,
}

fn circuits(app_cfg: &AppConfig) -> Result<Vec<Circuit>, RunError> {
    let workers = app_cfg.worker_specs();
    if workers.is_empty() {
        return Err(RunError::NoWorkers);
    }
    let shares = granularity::static_np_partition(app_cfg.n, workers.len() as u64)?;
    workers
        .into_iter()
        .zip(shares)
        .map(|(spec, share)| {
            let chunks = match app_cfg.grain_mode {
                GrainMode::FixedGrain { grain } => granularity::decompose(share.units, grain)?
                    .into_iter()
                    .map(|c| TaskSpec { task_id: c.task_id, start: share.start + c.start, units: c.units })
                    .collect(),
                GrainMode::StaticNp | GrainMode::Tuned => vec![share],
            };
            Ok(Circuit {
                spec,
                delay: app_cfg.base_delay + spec.link_delay,
                chunks,
                next: 0,
                done: false,
            })
        })
        .collect()
}

/// Messages a fault-free run sends: one chunk and one result per chunk.
pub fn vc_message_count(app_cfg: &AppConfig) -> Result<u64, RunError> {
    Ok(2 * circuits(app_cfg)?.iter().map(|c| c.chunks.len() as u64).sum::<u64>())
}

/// Runs the configured workload over per-worker virtual circuits.
pub fn vc_run(app_cfg: &AppConfig, fault_plan: &FaultPlan) -> Result<VcRunOutcome, RunError> {
    fault_plan.validate()?;
    let mut circuits = circuits(app_cfg)?;
    let master = Node::Master(0);
    let mut sim: Simulator<Msg> = Simulator::new(fault_plan.msg_loss_prob, fault_plan.seed);
    let mut crash_rng = seed::rng(fault_plan.seed, seed::stream::CRASH);

    for c in &fault_plan.crash_events {
        sim.schedule(Event::new(c.crash_tick, EventKind::Crash(Node::Worker(c.worker_id))))
            .expect("tick is not in the past");
    }
    for m in fault_plan.master_crashes.iter().filter(|m| m.master_id == 0) {
        sim.schedule(Event::new(m.tick, EventKind::Crash(master))).expect("tick is not in the past");
    }

    for (w, c) in circuits.iter().enumerate() {
        sim.send(master, Node::Worker(c.spec.worker_id), Msg::Chunk(w), c.delay);
    }

    let chunks: u64 = circuits.iter().map(|c| c.chunks.len() as u64).sum();
    let grain = circuits.iter().flat_map(|c| &c.chunks).map(|t| t.units).max().unwrap_or(0);
    let mut outcome = VcRunOutcome {
        status: VcStatus::Success,
        halt_cause: None,
        elapsed: 0,
        messages_sent: 0,
        chunks,
        grain,
        workers: circuits.len(),
        run_seed: app_cfg.run_seed,
    };
    let mut remaining = circuits.len();

    while remaining > 0 {
        let Some(event) = sim.pop() else { break };
        let halt = match event.kind {
            EventKind::Drop(..) => Some(HaltCause::MessageLoss),
            EventKind::Crash(Node::Master(_)) => Some(HaltCause::MasterCrash),
            EventKind::Crash(Node::Worker(id)) => circuits
                .iter()
                .any(|c| c.spec.worker_id == id && !c.done)
                .then_some(HaltCause::WorkerCrash),
            EventKind::Deliver(env) => match env.msg {
                Msg::Chunk(w) => {
                    let c = &circuits[w];
                    let ticks = c.spec.service_ticks(c.chunks[c.next].units);
                    let node = Node::Worker(c.spec.worker_id);
                    sim.wake_at(node, w as u64, event.at + ticks);
                    let p = fault_plan.per_step_crash_prob;
                    if p > 0.0 && crash_rng.gen_bool(p) {
                        let at = event.at + crash_rng.gen_range(0..ticks);
                        sim.schedule(Event::new(at, EventKind::Crash(node))).expect("not in the past");
                    }
                    None
                }
                Msg::Result(w) => {
                    let c = &mut circuits[w];
                    c.next += 1;
                    if c.next == c.chunks.len() {
                        c.done = true;
                        remaining -= 1;
                        outcome.elapsed = outcome.elapsed.max(event.at);
                    } else {
                        sim.send(master, Node::Worker(c.spec.worker_id), Msg::Chunk(w), c.delay);
                    }
                    None
                }
            },
            EventKind::Wake { node, token, .. } => {
                let w = token as usize;
                sim.send(node, master, Msg::Result(w), circuits[w].delay);
                None
            }
            EventKind::Crash(Node::Space) | EventKind::Recover(_) | EventKind::LeaseCheck => None,
        };
        if let Some(cause) = halt {
            outcome.status = VcStatus::Halted;
            outcome.halt_cause = Some(cause);
            outcome.elapsed = event.at;
            break;
        }
    }
    outcome.messages_sent = sim.stats().sent;
    Ok(outcome)
}
