//! Event-driven execution of one application run.
//!
//! Workers talk to the space only through simulated messages. A worker's
//! result travels with its next take request; the space serves all take
//! requests that arrived during a tick at the end of that tick, in worker
//! order. A worker resends a request whose reply has not arrived one tick
//! after it was due. Lost tasks and results come back through shadow expiry.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{accept_policy, AcceptDecision, Application, ExecContext, MasterSpec, RunError, RunSettings,
    StabilityClass, TaskResult, WorkerSpec};
use crate::granularity::{self, GrainMode, TaskSpec};
use crate::par::ExecMode;
use crate::report::{Dispatch, RunReport, RunStatus};
use crate::seed;
use crate::transport::sim::{Event, EventKind, Node, Simulator};
use crate::transport::FaultPlan;
use crate::tuple_space::{AppId, Pattern, Tuple, TupleKey, TupleSpace, WorkerId};

const POLL_INTERVAL: u64 = 1;

const WAKE_COMPUTE: u64 = 0;
const WAKE_TIMEOUT: u64 = 1;
const WAKE_POLL: u64 = 2;

fn token(seq: u64, kind: u64) -> u64 {
    (seq << 2) | kind
}

#[derive(Debug, Clone)]
struct Finished {
    task_id: u64,
    payload: Vec<u8>,
}

#[derive(Debug, Clone)]
enum Msg {
    /// Take request, optionally carrying the previous task's result.
    Request { seq: u64, done: Option<Finished> },
    Reply { seq: u64, task: Option<Tuple> },
}

#[derive(Debug)]
struct Computing {
    spec: TaskSpec,
    arrived: u64,
    seq: u64,
}

#[derive(Debug)]
struct WorkerAgent {
    spec: WorkerSpec,
    delay: u64,
    up: bool,
    pinned_task: Option<u64>,
    awaiting: Option<(u64, Option<Finished>)>,
    computing: Option<Computing>,
    next_seq: u64,
    units: u64,
}

impl WorkerAgent {
    fn node(&self) -> Node {
        Node::Worker(self.spec.worker_id)
    }

    fn fresh_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }
}

struct Engine<'a> {
    app: &'a dyn Application,
    app_id: AppId,
    settings: &'a RunSettings,
    plan: &'a FaultPlan,
    sim: Simulator<Msg>,
    space: TupleSpace,
    workers: Vec<WorkerAgent>,
    index_of: HashMap<WorkerId, usize>,
    waiting: Vec<(usize, u64)>,
    crash_rng: ChaCha8Rng,
    lease_len: u64,
    lease_interval: u64,
    masters_alive: BTreeMap<u32, bool>,
    pending_recoveries: u64,
    per_worker_finish: BTreeMap<WorkerId, u64>,
    retransmissions: u64,
    resends: u64,
    dispatches: Vec<Dispatch>,
}

fn validate(
    app: &dyn Application,
    workers: &[WorkerSpec],
    masters: MasterSpec,
    fault_plan: &FaultPlan,
    settings: &RunSettings,
) -> Result<(), RunError> {
    if workers.is_empty() {
        return Err(RunError::NoWorkers);
    }
    let mut seen = HashSet::new();
    for w in workers {
        if !seen.insert(w.worker_id) {
            return Err(RunError::DuplicateWorker(w.worker_id));
        }
        if !(w.speed_factor.is_finite() && w.speed_factor > 0.0) {
            return Err(RunError::InvalidSpeed(w.worker_id));
        }
    }
    if masters.redundancy == 0 {
        return Err(RunError::NoMasters);
    }
    let class = app.stability();
    if masters.redundancy > 1 && !class.supports_redundant_masters() {
        return Err(RunError::UnsupportedStability { class, masters: masters.redundancy });
    }
    if settings.lease_len == Some(0) {
        return Err(RunError::InvalidLease);
    }
    fault_plan.validate()?;
    Ok(())
}

/// Runs `app` on `workers` with `masters.redundancy` concurrent masters under
/// `fault_plan`.
///
/// Unsupported stability/redundancy combinations are refused before any task
/// is put. A run that cannot finish within the tick budget reports
/// [`RunStatus::Timeout`].
pub fn run(
    app: &dyn Application,
    workers: &[WorkerSpec],
    masters: MasterSpec,
    grain: GrainMode,
    fault_plan: &FaultPlan,
    settings: &RunSettings,
) -> Result<RunReport, RunError> {
    validate(app, workers, masters, fault_plan, settings)?;

    let n = app.total_work();
    let (tasks, pinned) = match grain {
        GrainMode::StaticNp => (granularity::static_np_partition(n, workers.len() as u64)?, true),
        GrainMode::FixedGrain { grain } => (app.decompose(grain)?, false),
        GrainMode::Tuned => {
            let tuned = granularity::tune(app, workers, fault_plan, settings, ExecMode::Parallel)?;
            (app.decompose(tuned.best_grain)?, false)
        }
    };

    let mut engine = Engine::new(app, workers, masters, &tasks, pinned, fault_plan, settings);
    Ok(engine.drive(&tasks))
}

impl<'a> Engine<'a> {
    fn new(
        app: &'a dyn Application,
        workers: &[WorkerSpec],
        masters: MasterSpec,
        tasks: &[TaskSpec],
        pinned: bool,
        plan: &'a FaultPlan,
        settings: &'a RunSettings,
    ) -> Self {
        let app_id = app.app_id();
        let max_units = tasks.iter().map(|t| t.units).max().unwrap_or(1);
        let agents: Vec<WorkerAgent> = workers
            .iter()
            .enumerate()
            .map(|(i, spec)| WorkerAgent {
                spec: *spec,
                delay: settings.base_delay + spec.link_delay,
                up: true,
                pinned_task: pinned.then_some(i as u64),
                awaiting: None,
                computing: None,
                next_seq: 0,
                units: 0,
            })
            .collect();

        let lease_len = settings.lease_len.unwrap_or_else(|| {
            let mean = agents
                .iter()
                .map(|a| (a.spec.service_ticks(max_units) + 2 * a.delay) as f64)
                .sum::<f64>()
                / agents.len() as f64;
            ((4.0 * mean).ceil() as u64).max(1)
        });

        let mut space = TupleSpace::new(settings.run_seed);
        for _master in 0..masters.redundancy {
            for t in tasks {
                let tuple = Tuple::new(TupleKey::task(app_id.clone(), t.task_id), t.to_bytes(), 0);
                // every master after the first is turned away per task
                let _ = space.put(tuple);
            }
        }

        let masters_alive = (masters.master_id..masters.master_id + masters.redundancy)
            .map(|m| (m, true))
            .collect();

        Self {
            app,
            app_id,
            settings,
            plan,
            sim: Simulator::new(plan.msg_loss_prob, plan.seed),
            space,
            index_of: agents.iter().enumerate().map(|(i, a)| (a.spec.worker_id, i)).collect(),
            workers: agents,
            waiting: Vec::new(),
            crash_rng: seed::rng(plan.seed, seed::stream::CRASH),
            lease_len,
            lease_interval: (lease_len / 2).max(1),
            masters_alive,
            pending_recoveries: 0,
            per_worker_finish: BTreeMap::new(),
            retransmissions: 0,
            resends: 0,
            dispatches: Vec::new(),
        }
    }

    fn schedule(&mut self, at: u64, kind: EventKind<Msg>) {
        self.sim.schedule(Event::new(at, kind)).expect("scheduled in the future");
    }

    fn drive(&mut self, tasks: &[TaskSpec]) -> RunReport {
        for c in &self.plan.crash_events {
            if self.index_of.contains_key(&c.worker_id) {
                self.schedule(c.crash_tick, EventKind::Crash(Node::Worker(c.worker_id)));
                if let Some(r) = c.recover_tick {
                    self.schedule(r, EventKind::Recover(Node::Worker(c.worker_id)));
                    self.pending_recoveries += 1;
                }
            }
        }
        for m in &self.plan.master_crashes {
            if self.masters_alive.contains_key(&m.master_id) {
                self.schedule(m.tick, EventKind::Crash(Node::Master(m.master_id)));
            }
        }
        self.schedule(self.lease_interval, EventKind::LeaseCheck);

        // Workers start registered: their first request is already at the space.
        for w in 0..self.workers.len() {
            let agent = &mut self.workers[w];
            let seq = agent.fresh_seq();
            agent.awaiting = Some((seq, None));
            let (node, delay) = (agent.node(), agent.delay);
            self.sim.wake_at(node, token(seq, WAKE_TIMEOUT), delay + 1);
            self.waiting.push((w, seq));
        }

        let mut tick = 0;
        let status = loop {
            while self.sim.peek_time() == Some(tick) {
                let event = self.sim.pop().expect("peeked");
                self.handle(event);
            }
            self.dispatch(tick);

            if self.space.is_complete(&self.app_id) {
                break RunStatus::Success;
            }
            if self.sim.peek_time() == Some(tick) {
                continue;
            }
            if !self.masters_alive.values().any(|&alive| alive) {
                break RunStatus::Timeout;
            }
            if self.pending_recoveries == 0 && !self.workers.iter().any(|w| w.up) {
                break RunStatus::Timeout;
            }
            match self.sim.peek_time() {
                Some(next) if next <= self.settings.tick_budget => tick = next,
                _ => break RunStatus::Timeout,
            }
        };

        self.finish(status, tasks)
    }

    fn handle(&mut self, event: Event<Msg>) {
        let now = event.at;
        match event.kind {
            EventKind::Deliver(env) => match (env.to, env.msg) {
                (Node::Space, Msg::Request { seq, done }) => {
                    let Node::Worker(id) = env.from else { return };
                    let w = self.index_of[&id];
                    if let Some(f) = done {
                        self.space
                            .complete(&self.app_id, f.task_id, f.payload, now)
                            .expect("task was put by a master");
                        self.per_worker_finish.insert(id, now);
                    }
                    self.waiting.push((w, seq));
                }
                (Node::Worker(id), Msg::Reply { seq, task }) => {
                    let w = self.index_of[&id];
                    if self.workers[w].awaiting.as_ref().map(|a| a.0) != Some(seq) {
                        return;
                    }
                    self.workers[w].awaiting = None;
                    match task {
                        Some(t) => self.start_compute(w, &t, now),
                        None => {
                            let node = self.workers[w].node();
                            let seq = self.workers[w].fresh_seq();
                            self.sim.wake_at(node, token(seq, WAKE_POLL), now + POLL_INTERVAL);
                        }
                    }
                }
                _ => {}
            },
            EventKind::Drop(..) => {}
            EventKind::Wake { node: Node::Worker(id), token: tok, .. } => {
                let w = self.index_of[&id];
                let seq = tok >> 2;
                match tok & 3 {
                    WAKE_COMPUTE => self.finish_compute(w, seq, now),
                    WAKE_TIMEOUT => {
                        if self.workers[w].awaiting.as_ref().map(|a| a.0) == Some(seq) {
                            let done = self.workers[w].awaiting.take().and_then(|a| a.1);
                            self.resends += 1;
                            self.send_request(w, done, now);
                        }
                    }
                    _ => {
                        let agent = &self.workers[w];
                        if agent.awaiting.is_none() && agent.computing.is_none() {
                            self.send_request(w, None, now);
                        }
                    }
                }
            }
            EventKind::Wake { .. } => {}
            EventKind::Crash(Node::Worker(id)) => {
                let agent = &mut self.workers[self.index_of[&id]];
                if agent.up {
                    agent.up = false;
                    agent.awaiting = None;
                    agent.computing = None;
                }
            }
            EventKind::Recover(Node::Worker(id)) => {
                self.pending_recoveries -= 1;
                let w = self.index_of[&id];
                if !self.workers[w].up {
                    self.workers[w].up = true;
                    self.send_request(w, None, now);
                }
            }
            EventKind::Crash(Node::Master(m)) => {
                self.masters_alive.insert(m, false);
            }
            EventKind::Crash(_) | EventKind::Recover(_) => {}
            EventKind::LeaseCheck => {
                self.retransmissions += self.space.expire(now).len() as u64;
                self.schedule(now + self.lease_interval, EventKind::LeaseCheck);
            }
        }
    }

    fn send_request(&mut self, w: usize, done: Option<Finished>, now: u64) {
        let agent = &mut self.workers[w];
        let seq = agent.fresh_seq();
        let (node, delay) = (agent.node(), agent.delay);
        agent.awaiting = Some((seq, done.clone()));
        self.sim.send(node, Node::Space, Msg::Request { seq, done }, delay);
        self.sim.wake_at(node, token(seq, WAKE_TIMEOUT), now + 2 * delay + 1);
    }

    fn start_compute(&mut self, w: usize, task: &Tuple, now: u64) {
        let spec = TaskSpec::from_bytes(task.payload()).expect("task payload is a TaskSpec");
        let agent = &mut self.workers[w];
        let ticks = agent.spec.service_ticks(spec.units);
        let seq = agent.fresh_seq();
        let node = agent.node();
        agent.computing = Some(Computing { spec, arrived: now, seq });
        self.sim.wake_at(node, token(seq, WAKE_COMPUTE), now + ticks);

        let p = self.plan.per_step_crash_prob;
        if p > 0.0 && self.crash_rng.gen_bool(p) {
            let at = now + self.crash_rng.gen_range(0..ticks);
            self.schedule(at, EventKind::Crash(node));
            if let Some(down) = self.plan.recover_after {
                self.schedule(at + down, EventKind::Recover(node));
                self.pending_recoveries += 1;
            }
        }
    }

    fn finish_compute(&mut self, w: usize, seq: u64, now: u64) {
        let agent = &mut self.workers[w];
        let Some(job) = agent.computing.take_if(|c| c.seq == seq) else {
            return;
        };
        let ctx = ExecContext {
            run_seed: self.settings.run_seed,
            task_seed: seed::task_seed(self.settings.run_seed, job.spec.task_id),
            worker: agent.spec.worker_id,
            now: job.arrived,
        };
        let payload = self.app.execute(&job.spec, &ctx);
        agent.units += job.spec.units;
        self.send_request(w, Some(Finished { task_id: job.spec.task_id, payload }), now);
    }

    /// Serves the take requests that arrived this tick, in worker order.
    fn dispatch(&mut self, now: u64) {
        if self.waiting.is_empty() {
            return;
        }
        let mut waiting = std::mem::take(&mut self.waiting);
        waiting.sort_by_key(|&(w, seq)| (w, seq));
        for (w, seq) in waiting {
            let agent = &self.workers[w];
            let mut pattern = Pattern::any_task(self.app_id.clone());
            if let Some(t) = agent.pinned_task {
                pattern = pattern.with_task_id(t);
            }
            let (id, node, delay) = (agent.spec.worker_id, agent.node(), agent.delay);
            let task = self
                .space
                .take(&pattern, id, now, self.lease_len)
                .expect("lease length is positive");
            if let Some(t) = &task {
                let spec = TaskSpec::from_bytes(t.payload()).expect("task payload is a TaskSpec");
                self.dispatches.push(Dispatch {
                    tick: now,
                    worker: id,
                    task_id: spec.task_id,
                    units: spec.units,
                    attempt: t.key().attempt,
                });
            }
            self.sim.send(Node::Space, node, Msg::Reply { seq, task }, delay);
        }
    }

    fn finish(&mut self, status: RunStatus, tasks: &[TaskSpec]) -> RunReport {
        let grain = tasks.iter().map(|t| t.units).max().unwrap_or(0);
        let mut report = RunReport {
            status,
            makespan: self.settings.tick_budget,
            per_worker_finish: self.per_worker_finish.clone(),
            per_worker_units: self
                .workers
                .iter()
                .filter(|a| a.units > 0)
                .map(|a| (a.spec.worker_id, a.units))
                .collect(),
            retransmissions: self.retransmissions,
            result_digest: String::new(),
            masters_used: 0,
            answer: Vec::new(),
            verified: false,
            total_units: self.app.total_work(),
            tasks: tasks.len() as u64,
            grain,
            workers: self.workers.len(),
            run_seed: self.settings.run_seed,
            dispatches: std::mem::take(&mut self.dispatches),
            transport: self.sim.stats(),
            resends: self.resends,
            duplicate_conflicts: self.space.duplicate_conflicts(),
            final_snapshot: self.space.snapshot(),
        };
        if status != RunStatus::Success {
            return report;
        }
        report.makespan = self.per_worker_finish.values().copied().max().unwrap_or(0);

        let results: Vec<TaskResult<'_>> = self
            .space
            .results(&self.app_id)
            .map(|r| {
                let task = self.space.task(&self.app_id, r.key().task_id).expect("result has a task");
                TaskResult {
                    task: TaskSpec::from_bytes(task.payload()).expect("task payload is a TaskSpec"),
                    payload: r.payload(),
                    completed_at: r.created_at(),
                }
            })
            .collect();
        let answers: Vec<Vec<u8>> = self
            .masters_alive
            .values()
            .filter(|&&alive| alive)
            .map(|_| self.app.merge(&results))
            .collect();
        report.masters_used = answers.len() as u32;

        let class = self.app.stability();
        let decision = match (class, answers.as_slice()) {
            // a lone master needs no agreement, whatever its class
            (StabilityClass::NonDetInDetOut, [only]) => AcceptDecision::Accepted(only.clone()),
            _ => accept_policy(class, &answers),
        };
        let leaked = class.deterministic_output() && report.duplicate_conflicts > 0;
        match decision {
            AcceptDecision::Accepted(answer) if !leaked => {
                report.result_digest = hex::encode(Sha256::digest(&answer));
                report.verified = self.app.verify(&answer);
                report.answer = answer;
            }
            _ => report.status = RunStatus::Mismatch,
        }
        report
    }
}
