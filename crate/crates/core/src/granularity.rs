//! Task decomposition and grain-size tuning.
//!
//! A static N/P partition pins one block per worker and ignores how fast each
//! worker returns data. Pull scheduling with smaller tasks lets fast workers
//! take more, at the price of one round trip per task. [`tune`] sweeps grains
//! geometrically and keeps the one with the shortest makespan.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, ExecMode};
use crate::report::{RunReport, RunStatus};
use crate::runtime::{run, Application, MasterSpec, RunError, RunSettings, WorkerSpec};
use crate::transport::FaultPlan;

/// A contiguous block `[start, start + units)` of the work range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u64,
    pub start: u64,
    pub units: u64,
}

impl TaskSpec {
    pub const ENCODED_LEN: usize = 24;

    pub fn end(&self) -> u64 {
        self.start + self.units
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend_from_slice(&self.task_id.to_le_bytes());
        out.extend_from_slice(&self.start.to_le_bytes());
        out.extend_from_slice(&self.units.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return None;
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
        Some(Self { task_id: word(0), start: word(1), units: word(2) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrainMode {
    /// One block per worker, pinned; no multiplexing.
    StaticNp,
    FixedGrain { grain: u64 },
    /// Sweep grains first, then run with the best one.
    Tuned,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GranularityError {
    #[error("cannot split {n} units over {p} workers")]
    InvalidPartition { n: u64, p: u64 },
    #[error("grain {grain} outside 1..={n}")]
    InvalidGrain { n: u64, grain: u64 },
    #[error("equilibrium is only defined for successful runs (got {0})")]
    NotSuccessful(RunStatus),
    #[error("oracle instance too large: {tasks} tasks on {workers} workers")]
    OracleTooLarge { tasks: usize, workers: usize },
    #[error("oracle needs at least one worker with a positive speed")]
    OracleNoWorkers,
}

/// Splits `n` units into `p` blocks; the first `n mod p` get one extra unit.
pub fn static_np_partition(n: u64, p: u64) -> Result<Vec<TaskSpec>, GranularityError> {
    if p == 0 || p > n {
        return Err(GranularityError::InvalidPartition { n, p });
    }
    let (base, extra) = (n / p, n % p);
    let mut start = 0;
    Ok((0..p)
        .map(|task_id| {
            let units = base + u64::from(task_id < extra);
            let t = TaskSpec { task_id, start, units };
            start += units;
            t
        })
        .collect())
}

/// Cuts `[0, n)` into `ceil(n / grain)` blocks; the last may be short.
pub fn decompose(n: u64, grain: u64) -> Result<Vec<TaskSpec>, GranularityError> {
    if grain == 0 || grain > n {
        return Err(GranularityError::InvalidGrain { n, grain });
    }
    Ok((0..n.div_ceil(grain))
        .map(|task_id| {
            let start = task_id * grain;
            TaskSpec { task_id, start, units: grain.min(n - start) }
        })
        .collect())
}

/// Normalised gap between the first and last worker to finish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumMetric {
    pub spread: f64,
}

pub fn measure_equilibrium(report: &RunReport) -> Result<EquilibriumMetric, GranularityError> {
    if report.status != RunStatus::Success {
        return Err(GranularityError::NotSuccessful(report.status));
    }
    let finishes = report.per_worker_finish.values();
    let (Some(&min), Some(&max)) = (finishes.clone().min(), finishes.max()) else {
        return Ok(EquilibriumMetric { spread: 0.0 });
    };
    if report.makespan == 0 {
        return Ok(EquilibriumMetric { spread: 0.0 });
    }
    Ok(EquilibriumMetric { spread: (max - min) as f64 / report.makespan as f64 })
}

/// Candidate grains `ceil(N/P), ceil(N/2P), ceil(N/4P), ..., 1`, deduplicated.
pub fn candidate_grains(n: u64, p: u64) -> Vec<u64> {
    let mut grains = Vec::new();
    let mut divisor = p.max(1);
    loop {
        let g = n.div_ceil(divisor).max(1);
        if grains.last() != Some(&g) {
            grains.push(g);
        }
        if g == 1 {
            break;
        }
        divisor = divisor.saturating_mul(2);
    }
    grains
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunePoint {
    pub grain: u64,
    pub makespan: u64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_grain: u64,
    pub best_makespan: u64,
    pub best_spread: f64,
    pub curve: Vec<TunePoint>,
    pub static_np_makespan: u64,
    pub static_np_spread: f64,
    pub improvement_vs_np: f64,
}

impl TuneResult {
    pub const CSV_HEADER: &'static str = "grain,makespan,spread";

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::CSV_HEADER).unwrap();
        for p in &self.curve {
            writeln!(out, "{},{},{:.6}", p.grain, p.makespan, p.spread).unwrap();
        }
        writeln!(
            out,
            "# best_grain={} best_makespan={} static_np_makespan={} static_np_spread={:.6} improvement_vs_np={:.6}",
            self.best_grain,
            self.best_makespan,
            self.static_np_makespan,
            self.static_np_spread,
            self.improvement_vs_np
        )
        .unwrap();
        out
    }
}

fn successful(report: RunReport) -> Result<RunReport, RunError> {
    match report.status {
        RunStatus::Success => Ok(report),
        status => Err(RunError::Unsuccessful(status)),
    }
}

/// Sweeps candidate grains in pull mode under identical seeds and compares
/// the best against the pinned N/P partition.
pub fn tune(
    app: &dyn Application,
    workers: &[WorkerSpec],
    fault_plan: &FaultPlan,
    settings: &RunSettings,
    exec: ExecMode,
) -> Result<TuneResult, RunError> {
    let n = app.total_work();
    let p = workers.len() as u64;
    let master = MasterSpec::single();

    let baseline = successful(run(app, workers, master, GrainMode::StaticNp, fault_plan, settings)?)?;
    let static_np_spread = measure_equilibrium(&baseline)?.spread;

    let grains = candidate_grains(n, p);
    let runs = par::map_ordered(exec, &grains, |&grain| {
        let report = run(app, workers, master, GrainMode::FixedGrain { grain }, fault_plan, settings)?;
        let report = successful(report)?;
        let spread = measure_equilibrium(&report)?.spread;
        Ok::<_, RunError>(TunePoint { grain, makespan: report.makespan, spread })
    });
    let curve = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    // Grains are descending, so the first minimum is the largest grain.
    let best = *curve
        .iter()
        .min_by_key(|pt| pt.makespan)
        .expect("at least one candidate grain");

    Ok(TuneResult {
        best_grain: best.grain,
        best_makespan: best.makespan,
        best_spread: best.spread,
        improvement_vs_np: 1.0 - best.makespan as f64 / baseline.makespan as f64,
        static_np_makespan: baseline.makespan,
        static_np_spread,
        curve,
    })
}

const ORACLE_MAX_TASKS: usize = 20;
const ORACLE_MAX_WORKERS: usize = 4;

fn check_oracle_size(tasks: usize, speeds: &[f64], delays: &[u64]) -> Result<(), GranularityError> {
    if speeds.is_empty() || speeds.len() != delays.len() || speeds.iter().any(|s| *s <= 0.0) {
        return Err(GranularityError::OracleNoWorkers);
    }
    if tasks > ORACLE_MAX_TASKS || speeds.len() > ORACLE_MAX_WORKERS {
        return Err(GranularityError::OracleTooLarge { tasks, workers: speeds.len() });
    }
    Ok(())
}

/// Greedy list schedule: tasks in the given order, each to the worker that
/// frees up first (lowest index on ties). A task costs
/// `ceil(size / speed) + 2 * delay` on its worker.
pub fn oracle_makespan(sizes: &[u64], speeds: &[f64], delays: &[u64]) -> Result<u64, GranularityError> {
    check_oracle_size(sizes.len(), speeds, delays)?;
    let mut free_at = vec![0u64; speeds.len()];
    for &size in sizes {
        let (w, _) = free_at
            .iter()
            .enumerate()
            .min_by_key(|&(i, t)| (*t, i))
            .expect("non-empty");
        free_at[w] += (size as f64 / speeds[w]).ceil() as u64 + 2 * delays[w];
    }
    Ok(free_at.into_iter().max().unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExhaustiveSummary {
    pub min: u64,
    /// Every makespan some assignment achieves.
    pub achievable: BTreeSet<u64>,
}

/// Enumerates every task-to-worker assignment.
pub fn exhaustive_makespans(
    sizes: &[u64],
    speeds: &[f64],
    delays: &[u64],
) -> Result<ExhaustiveSummary, GranularityError> {
    check_oracle_size(sizes.len(), speeds, delays)?;
    let p = speeds.len();
    let combos = (p as u64).checked_pow(sizes.len() as u32).filter(|&c| c <= 1 << 20);
    let Some(combos) = combos else {
        return Err(GranularityError::OracleTooLarge { tasks: sizes.len(), workers: p });
    };
    let mut achievable = BTreeSet::new();
    for code in 0..combos {
        let mut load = vec![0u64; p];
        let mut c = code;
        for &size in sizes {
            let w = (c % p as u64) as usize;
            c /= p as u64;
            load[w] += (size as f64 / speeds[w]).ceil() as u64 + 2 * delays[w];
        }
        achievable.insert(load.into_iter().max().unwrap_or(0));
    }
    Ok(ExhaustiveSummary { min: *achievable.first().unwrap_or(&0), achievable })
}
