//! Deterministic discrete-event message layer.
//!
//! Events execute in `(at, insertion order)`. Message loss is sampled from a
//! seeded generator when a delivery comes due, and a message never reaches a
//! node that was down when it was sent or crashed while it was in flight.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seed;
use crate::tuple_space::WorkerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Space,
    Master(u32),
    Worker(WorkerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct LogicalClock {
    tick: u64,
}

impl LogicalClock {
    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn advance_to(&mut self, at: u64) {
        debug_assert!(at >= self.tick, "clock moved backwards");
        self.tick = at;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<M> {
    pub from: Node,
    pub to: Node,
    pub sent_at: u64,
    /// Incarnation of `to` at send time, `None` if it was down.
    dest_incarnation: Option<u64>,
    pub msg: M,
}

impl<M> Envelope<M> {
    pub fn new(from: Node, to: Node, msg: M) -> Self {
        Self { from, to, sent_at: 0, dest_incarnation: Some(0), msg }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    Loss,
    DeadDestination,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<M> {
    Deliver(Envelope<M>),
    Drop(Envelope<M>, DropCause),
    Crash(Node),
    Recover(Node),
    LeaseCheck,
    /// Local timer of `node`; discarded if the node crashed since scheduling.
    Wake { node: Node, token: u64, incarnation: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<M> {
    pub at: u64,
    pub kind: EventKind<M>,
}

impl<M> Event<M> {
    pub fn new(at: u64, kind: EventKind<M>) -> Self {
        Self { at, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event at tick {at} is in the past (now = {now})")]
    PastEvent { at: u64, now: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TransportStats {
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub dead_letters: u64,
}

#[derive(Debug, Clone, Copy)]
struct Liveness {
    up: bool,
    incarnation: u64,
}

impl Default for Liveness {
    fn default() -> Self {
        Self { up: true, incarnation: 0 }
    }
}

/// Single-threaded event loop. Not safe for concurrent callers.
#[derive(Debug)]
pub struct Simulator<M> {
    clock: LogicalClock,
    seq: u64,
    queue: BTreeMap<(u64, u64), EventKind<M>>,
    loss_prob: f64,
    loss_rng: ChaCha8Rng,
    nodes: HashMap<Node, Liveness>,
    stats: TransportStats,
}

impl<M> Simulator<M> {
    /// `loss_prob` must lie in `[0, 1]`.
    pub fn new(loss_prob: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&loss_prob), "loss probability out of range");
        Self {
            clock: LogicalClock::default(),
            seq: 0,
            queue: BTreeMap::new(),
            loss_prob,
            loss_rng: seed::rng(seed, seed::stream::LOSS),
            nodes: HashMap::new(),
            stats: TransportStats::default(),
        }
    }

    pub fn now(&self) -> u64 {
        self.clock.tick()
    }

    pub fn clock(&self) -> LogicalClock {
        self.clock
    }

    pub fn stats(&self) -> TransportStats {
        self.stats
    }

    pub fn is_up(&self, node: Node) -> bool {
        self.nodes.get(&node).copied().unwrap_or_default().up
    }

    pub fn incarnation(&self, node: Node) -> u64 {
        self.nodes.get(&node).copied().unwrap_or_default().incarnation
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.queue.keys().next().map(|&(at, _)| at)
    }

    pub fn schedule(&mut self, event: Event<M>) -> Result<(), SimError> {
        let now = self.now();
        if event.at < now {
            return Err(SimError::PastEvent { at: event.at, now });
        }
        self.queue.insert((event.at, self.seq), event.kind);
        self.seq += 1;
        Ok(())
    }

    /// Sends `msg` from `from` to `to`, arriving `delay` ticks from now.
    pub fn send(&mut self, from: Node, to: Node, msg: M, delay: u64) {
        let dest = self.nodes.get(&to).copied().unwrap_or_default();
        let envelope = Envelope {
            from,
            to,
            sent_at: self.now(),
            dest_incarnation: dest.up.then_some(dest.incarnation),
            msg,
        };
        self.stats.sent += 1;
        let at = self.now() + delay;
        self.schedule(Event::new(at, EventKind::Deliver(envelope))).expect("future event");
    }

    /// Arms a timer for `node`, firing at absolute tick `at`.
    pub fn wake_at(&mut self, node: Node, token: u64, at: u64) {
        let incarnation = self.incarnation(node);
        self.schedule(Event::new(at, EventKind::Wake { node, token, incarnation }))
            .expect("timer in the future");
    }

    /// Executes the earliest queued event and returns it as it resolved:
    /// a due `Deliver` may come back as a `Drop`.
    pub fn pop(&mut self) -> Option<Event<M>> {
        loop {
            let ((at, _), kind) = self.queue.pop_first()?;
            self.clock.advance_to(at);
            let kind = match kind {
                EventKind::Deliver(env) => self.resolve_delivery(env),
                EventKind::Drop(env, cause) => {
                    match cause {
                        DropCause::Loss => self.stats.lost += 1,
                        DropCause::DeadDestination => self.stats.dead_letters += 1,
                    }
                    EventKind::Drop(env, cause)
                }
                EventKind::Crash(node) => {
                    let l = self.nodes.entry(node).or_default();
                    if l.up {
                        l.up = false;
                        l.incarnation += 1;
                    }
                    EventKind::Crash(node)
                }
                EventKind::Recover(node) => {
                    self.nodes.entry(node).or_default().up = true;
                    EventKind::Recover(node)
                }
                EventKind::Wake { node, token, incarnation } => {
                    let l = self.nodes.get(&node).copied().unwrap_or_default();
                    if !l.up || l.incarnation != incarnation {
                        continue;
                    }
                    EventKind::Wake { node, token, incarnation }
                }
                EventKind::LeaseCheck => EventKind::LeaseCheck,
            };
            return Some(Event::new(at, kind));
        }
    }

    fn resolve_delivery(&mut self, env: Envelope<M>) -> EventKind<M> {
        if self.loss_prob > 0.0 && self.loss_rng.gen_bool(self.loss_prob) {
            self.stats.lost += 1;
            return EventKind::Drop(env, DropCause::Loss);
        }
        let dest = self.nodes.get(&env.to).copied().unwrap_or_default();
        if !dest.up || env.dest_incarnation != Some(dest.incarnation) {
            self.stats.dead_letters += 1;
            return EventKind::Drop(env, DropCause::DeadDestination);
        }
        self.stats.delivered += 1;
        EventKind::Deliver(env)
    }

    /// Executes every event queued for the next tick.
    pub fn step(&mut self) -> Vec<Event<M>> {
        let Some(at) = self.peek_time() else {
            return Vec::new();
        };
        let mut executed = Vec::new();
        while self.peek_time() == Some(at) {
            if let Some(ev) = self.pop() {
                executed.push(ev);
            }
        }
        executed
    }

    /// Drains the queue and returns the final tick.
    pub fn run_until_idle(&mut self) -> u64 {
        while !self.is_idle() {
            self.step();
        }
        self.now()
    }
}
