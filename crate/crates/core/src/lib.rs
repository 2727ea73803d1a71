//! Statistic-multiplexed computing (SMC) over a tuple switching network.
//!
//! Masters and workers never talk to each other directly. Tasks, results and
//! shared state travel as keyed tuples through a [`tuple_space::TupleSpace`];
//! any ready worker pulls any ready task. A task handed to a worker is kept
//! as a *shadow tuple* under a lease, and an expired lease puts the task back
//! into circulation, which makes workers checkpoint-free.
//!
//! The crate is organised as:
//!
//! - [`tuple_space`]: the switching fabric and shadow-tuple lifecycle.
//! - [`transport`]: deterministic discrete-event message layer with seeded
//!   fault injection, plus the virtual-circuit baseline.
//! - [`runtime`]: master/worker agents, built-in applications and the
//!   redundant-master acceptance policy.
//! - [`granularity`]: N/P partitioning, grain decomposition and tuning.
//! - [`reliability`]: Monte Carlo sweeps of circuit survival vs SMC completion.
//! - [`config`] and [`cli`]: JSON configuration and the `smc` command line.
//!
//! All time is logical (ticks) and every random choice flows from an explicit
//! seed, so identical inputs give byte-identical outputs.

pub mod cli;
pub mod config;
pub mod granularity;
pub mod live;
pub mod par;
pub mod reliability;
pub mod report;
pub mod runtime;
pub mod seed;
pub mod transport;
pub mod tuple_space;

pub use granularity::{decompose, static_np_partition, GrainMode, TaskSpec};
pub use report::{RunReport, RunStatus};
pub use runtime::{run, AcceptDecision, Application, MasterSpec, RunError, StabilityClass, WorkerSpec};
pub use transport::{smc_run, vc_run, FaultPlan, VcRunOutcome};
pub use tuple_space::{AcceptOutcome, Pattern, TupleKey, TupleKind, TupleSpace};
