//! The tuple switching fabric.
//!
//! A [`TupleSpace`] stores task, result and state tuples keyed by
//! `(app_id, kind, task_id)`. Tasks move through a three-state lifecycle:
//!
//! ```text
//!            take                 complete
//!  Pending ────────▶ Shadowed ─────────────▶ Completed
//!     ▲                 │                        ▲
//!     └──── expire ─────┘                        │
//!     └──────────────── complete (stale) ────────┘
//! ```
//!
//! `take` hands a uniformly random pending task to the caller and keeps a
//! shadow copy under a lease. `expire` re-exposes every shadow whose lease has
//! run out, bumping the task's attempt counter. The first `complete` for a task
//! wins; every later one is ignored and leaves the stored result untouched.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(pub String);

impl AppId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TupleKind {
    Task,
    Result,
    State,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TupleKey {
    pub app_id: AppId,
    pub kind: TupleKind,
    pub task_id: u64,
    /// Retransmission generation. Starts at 0 and only grows through expiry.
    pub attempt: u32,
}

impl TupleKey {
    pub fn task(app_id: AppId, task_id: u64) -> Self {
        Self { app_id, kind: TupleKind::Task, task_id, attempt: 0 }
    }

    pub fn result(app_id: AppId, task_id: u64) -> Self {
        Self { app_id, kind: TupleKind::Result, task_id, attempt: 0 }
    }

    pub fn state(app_id: AppId, slot: u64) -> Self {
        Self { app_id, kind: TupleKind::State, task_id: slot, attempt: 0 }
    }
}

/// A keyed, immutable payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuple {
    key: TupleKey,
    payload: Vec<u8>,
    created_at: u64,
}

impl Tuple {
    pub fn new(key: TupleKey, payload: Vec<u8>, created_at: u64) -> Self {
        Self { key, payload, created_at }
    }

    pub fn key(&self) -> &TupleKey {
        &self.key
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowRecord {
    pub task: Tuple,
    pub worker_id: WorkerId,
    pub lease_expiry: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskLifecycle {
    Pending,
    Shadowed,
    Completed,
}

/// Exact-field match on `(app_id, kind[, task_id])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub app_id: AppId,
    pub kind: TupleKind,
    pub task_id: Option<u64>,
}

impl Pattern {
    pub fn any_task(app_id: AppId) -> Self {
        Self { app_id, kind: TupleKind::Task, task_id: None }
    }

    pub fn any_result(app_id: AppId) -> Self {
        Self { app_id, kind: TupleKind::Result, task_id: None }
    }

    pub fn with_task_id(mut self, task_id: u64) -> Self {
        self.task_id = Some(task_id);
        self
    }

    fn admits(&self, task_id: u64) -> bool {
        self.task_id.is_none_or(|t| t == task_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Stored,
    /// A result for an already-completed task, or a repeated state tuple.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptOutcome {
    AcceptedFirst,
    DuplicateIgnored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Snapshot {
    pub pending: u64,
    pub shadowed: u64,
    pub completed: u64,
    /// Number of successful takes, i.e. task dispatches including reissues.
    pub total_attempts: u64,
}

impl Snapshot {
    pub const CSV_HEADER: &'static str = "tick,pending,shadowed,completed,attempts";

    pub fn csv_row(&self, tick: u64) -> String {
        format!(
            "{tick},{},{},{},{}",
            self.pending, self.shadowed, self.completed, self.total_attempts
        )
    }

    pub fn total(&self) -> u64 {
        self.pending + self.shadowed + self.completed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("task {task_id} of app {app_id} was already put")]
    DuplicateTask { app_id: AppId, task_id: u64 },
    #[error("task {task_id} of app {app_id} was never put")]
    UnknownTask { app_id: AppId, task_id: u64 },
    #[error("lease length must be positive")]
    InvalidLease,
}

#[derive(Debug, Clone)]
struct TaskEntry {
    tuple: Tuple,
    state: TaskLifecycle,
}

#[derive(Debug, Clone)]
struct StoredResult {
    tuple: Tuple,
    digest: [u8; 32],
}

#[derive(Debug, Clone, Copy, Default)]
struct AppCounts {
    total: u64,
    completed: u64,
}

type Slot = (AppId, u64);

/// Linearizable tuple store. Callers serialize access (`&mut self`); see
/// [`crate::live::SharedSpace`] for a thread-safe wrapper.
#[derive(Debug, Clone)]
pub struct TupleSpace {
    tasks: BTreeMap<Slot, TaskEntry>,
    pending: BTreeMap<AppId, BTreeSet<u64>>,
    shadows: BTreeMap<Slot, ShadowRecord>,
    results: BTreeMap<Slot, StoredResult>,
    states: BTreeMap<Slot, Tuple>,
    counts: BTreeMap<AppId, AppCounts>,
    snapshot: Snapshot,
    duplicate_conflicts: u64,
    rng: ChaCha8Rng,
}

impl TupleSpace {
    /// Creates an empty space whose `take` choices are driven by `seed`.
    pub fn new(seed: u64) -> Self {
        Self {
            tasks: BTreeMap::new(),
            pending: BTreeMap::new(),
            shadows: BTreeMap::new(),
            results: BTreeMap::new(),
            states: BTreeMap::new(),
            counts: BTreeMap::new(),
            snapshot: Snapshot::default(),
            duplicate_conflicts: 0,
            rng: seed::rng(seed, seed::stream::TAKE),
        }
    }

    pub fn put(&mut self, tuple: Tuple) -> Result<Ack, SpaceError> {
        let slot = (tuple.key.app_id.clone(), tuple.key.task_id);
        match tuple.key.kind {
            TupleKind::Task => {
                if self.tasks.contains_key(&slot) {
                    return Err(SpaceError::DuplicateTask { app_id: slot.0, task_id: slot.1 });
                }
                let mut tuple = tuple;
                tuple.key.attempt = 0;
                self.pending.entry(slot.0.clone()).or_default().insert(slot.1);
                self.counts.entry(slot.0.clone()).or_default().total += 1;
                self.tasks.insert(slot, TaskEntry { tuple, state: TaskLifecycle::Pending });
                self.snapshot.pending += 1;
                Ok(Ack::Stored)
            }
            TupleKind::Result => {
                let now = tuple.created_at;
                match self.complete_inner(&slot.0, slot.1, tuple.payload, now)? {
                    AcceptOutcome::AcceptedFirst => Ok(Ack::Stored),
                    AcceptOutcome::DuplicateIgnored => Ok(Ack::Ignored),
                }
            }
            TupleKind::State => match self.states.entry(slot) {
                Entry::Occupied(_) => Ok(Ack::Ignored),
                Entry::Vacant(v) => {
                    v.insert(tuple);
                    Ok(Ack::Stored)
                }
            },
        }
    }

    /// Hands one matching pending task to `worker`, chosen uniformly at random,
    /// and shadows it until `now + lease_len`.
    pub fn take(
        &mut self,
        pattern: &Pattern,
        worker: WorkerId,
        now: u64,
        lease_len: u64,
    ) -> Result<Option<Tuple>, SpaceError> {
        if lease_len == 0 {
            return Err(SpaceError::InvalidLease);
        }
        if pattern.kind != TupleKind::Task {
            return Ok(None);
        }
        let Some(pending) = self.pending.get_mut(&pattern.app_id) else {
            return Ok(None);
        };
        let task_id = match pattern.task_id {
            Some(id) if pending.contains(&id) => id,
            Some(_) => return Ok(None),
            None if pending.is_empty() => return Ok(None),
            None => {
                let idx = self.rng.gen_range(0..pending.len());
                *pending.iter().nth(idx).expect("index within bounds")
            }
        };
        pending.remove(&task_id);

        let slot = (pattern.app_id.clone(), task_id);
        let entry = self.tasks.get_mut(&slot).expect("pending task has an entry");
        entry.state = TaskLifecycle::Shadowed;
        let task = entry.tuple.clone();
        self.shadows.insert(
            slot,
            ShadowRecord {
                attempt: task.key.attempt,
                task: task.clone(),
                worker_id: worker,
                lease_expiry: now + lease_len,
            },
        );
        self.snapshot.pending -= 1;
        self.snapshot.shadowed += 1;
        self.snapshot.total_attempts += 1;
        Ok(Some(task))
    }

    /// Records the result of `task_id`. Only the first call per task counts.
    pub fn complete(
        &mut self,
        app_id: &AppId,
        task_id: u64,
        payload: Vec<u8>,
        now: u64,
    ) -> Result<AcceptOutcome, SpaceError> {
        self.complete_inner(app_id, task_id, payload, now)
    }

    fn complete_inner(
        &mut self,
        app_id: &AppId,
        task_id: u64,
        payload: Vec<u8>,
        now: u64,
    ) -> Result<AcceptOutcome, SpaceError> {
        let slot = (app_id.clone(), task_id);
        let Some(entry) = self.tasks.get_mut(&slot) else {
            return Err(SpaceError::UnknownTask { app_id: app_id.clone(), task_id });
        };
        let digest: [u8; 32] = Sha256::digest(&payload).into();
        match entry.state {
            TaskLifecycle::Completed => {
                let stored = &self.results[&slot];
                if stored.digest != digest {
                    self.duplicate_conflicts += 1;
                }
                return Ok(AcceptOutcome::DuplicateIgnored);
            }
            TaskLifecycle::Pending => {
                self.pending.get_mut(app_id).expect("app has a pending set").remove(&task_id);
                self.snapshot.pending -= 1;
            }
            TaskLifecycle::Shadowed => {
                self.shadows.remove(&slot);
                self.snapshot.shadowed -= 1;
            }
        }
        entry.state = TaskLifecycle::Completed;
        let mut key = TupleKey::result(app_id.clone(), task_id);
        key.attempt = entry.tuple.key.attempt;
        self.results.insert(slot, StoredResult { tuple: Tuple::new(key, payload, now), digest });
        self.counts.get_mut(app_id).expect("app has counts").completed += 1;
        self.snapshot.completed += 1;
        Ok(AcceptOutcome::AcceptedFirst)
    }

    /// Re-exposes every shadow whose lease ran out by `now`. Returns the
    /// reissued task keys (with their new attempt) in ascending order.
    pub fn expire(&mut self, now: u64) -> Vec<TupleKey> {
        let due: Vec<Slot> = self
            .shadows
            .iter()
            .filter(|(_, s)| s.lease_expiry <= now)
            .map(|(slot, _)| slot.clone())
            .collect();
        let mut reissued = Vec::with_capacity(due.len());
        for slot in due {
            self.shadows.remove(&slot);
            let entry = self.tasks.get_mut(&slot).expect("shadowed task has an entry");
            entry.state = TaskLifecycle::Pending;
            entry.tuple.key.attempt += 1;
            self.pending.entry(slot.0.clone()).or_default().insert(slot.1);
            reissued.push(entry.tuple.key.clone());
        }
        self.snapshot.shadowed -= reissued.len() as u64;
        self.snapshot.pending += reissued.len() as u64;
        reissued
    }

    /// Non-destructive lookup. Prefers completed, then pending, then shadowed
    /// tuples; lowest task id first within each group.
    pub fn read(&self, pattern: &Pattern) -> Option<Tuple> {
        let in_app = |slot: &&Slot| slot.0 == pattern.app_id && pattern.admits(slot.1);
        match pattern.kind {
            TupleKind::Result => self
                .results
                .iter()
                .find(|(slot, _)| in_app(slot))
                .map(|(_, r)| r.tuple.clone()),
            TupleKind::State => {
                self.states.iter().find(|(slot, _)| in_app(slot)).map(|(_, t)| t.clone())
            }
            TupleKind::Task => [TaskLifecycle::Completed, TaskLifecycle::Pending, TaskLifecycle::Shadowed]
                .into_iter()
                .find_map(|want| {
                    self.tasks
                        .iter()
                        .find(|(slot, e)| e.state == want && in_app(slot))
                        .map(|(_, e)| e.tuple.clone())
                }),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snapshot
    }

    pub fn lifecycle(&self, app_id: &AppId, task_id: u64) -> Option<TaskLifecycle> {
        self.tasks.get(&(app_id.clone(), task_id)).map(|e| e.state)
    }

    pub fn attempt(&self, app_id: &AppId, task_id: u64) -> Option<u32> {
        self.tasks.get(&(app_id.clone(), task_id)).map(|e| e.tuple.key.attempt)
    }

    pub fn shadow(&self, app_id: &AppId, task_id: u64) -> Option<&ShadowRecord> {
        self.shadows.get(&(app_id.clone(), task_id))
    }

    pub fn task(&self, app_id: &AppId, task_id: u64) -> Option<&Tuple> {
        self.tasks.get(&(app_id.clone(), task_id)).map(|e| &e.tuple)
    }

    /// Stored results of `app_id` in task-id order.
    pub fn results(&self, app_id: &AppId) -> impl Iterator<Item = &Tuple> + '_ {
        let app_id = app_id.clone();
        self.results
            .range((app_id.clone(), 0)..=(app_id, u64::MAX))
            .map(|(_, r)| &r.tuple)
    }

    pub fn is_complete(&self, app_id: &AppId) -> bool {
        self.counts.get(app_id).is_some_and(|c| c.completed == c.total)
    }

    /// Duplicate completes whose payload differed from the stored result.
    pub fn duplicate_conflicts(&self) -> u64 {
        self.duplicate_conflicts
    }
}
