//! A tuple space shared between OS threads.
//!
//! Not used by the simulator; it lets agents run on real threads against the
//! same space operations. Time is still supplied by the caller.

use std::sync::Arc;

use parking_lot::Mutex;

use crate::tuple_space::{AcceptOutcome, Ack, AppId, Pattern, Snapshot, SpaceError, Tuple, TupleKey, TupleSpace, WorkerId};

#[derive(Debug, Clone)]
pub struct SharedSpace {
    inner: Arc<Mutex<TupleSpace>>,
}

impl SharedSpace {
    pub fn new(seed: u64) -> Self {
        Self { inner: Arc::new(Mutex::new(TupleSpace::new(seed))) }
    }

    pub fn put(&self, tuple: Tuple) -> Result<Ack, SpaceError> {
        self.inner.lock().put(tuple)
    }

    pub fn take(
        &self,
        pattern: &Pattern,
        worker: WorkerId,
        now: u64,
        lease_len: u64,
    ) -> Result<Option<Tuple>, SpaceError> {
        self.inner.lock().take(pattern, worker, now, lease_len)
    }

    pub fn complete(
        &self,
        app_id: &AppId,
        task_id: u64,
        payload: Vec<u8>,
        now: u64,
    ) -> Result<AcceptOutcome, SpaceError> {
        self.inner.lock().complete(app_id, task_id, payload, now)
    }

    pub fn expire(&self, now: u64) -> Vec<TupleKey> {
        self.inner.lock().expire(now)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.inner.lock().snapshot()
    }

    pub fn is_complete(&self, app_id: &AppId) -> bool {
        self.inner.lock().is_complete(app_id)
    }

    /// Runs `f` with exclusive access.
    pub fn with<R>(&self, f: impl FnOnce(&mut TupleSpace) -> R) -> R {
        f(&mut self.inner.lock())
    }
}
