//! JSON run configuration.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::granularity::GrainMode;
use crate::runtime::apps::{self, AppName, AppOptions};
use crate::runtime::{Application, MasterSpec, RunError, RunSettings, WorkerSpec};
use crate::seed;
use crate::transport::FaultPlan;

fn default_masters() -> u32 {
    1
}

fn default_budget() -> u64 {
    1_000_000
}

/// `count` workers with speeds uniform in `[1, 2]` and link delays in `{0, 1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorkers {
    pub count: u32,
    pub seed: u64,
}

impl SyntheticWorkers {
    pub fn generate(&self) -> Vec<WorkerSpec> {
        let mut rng = seed::rng(self.seed, seed::stream::WORKERS);
        (0..self.count)
            .map(|i| {
                let speed = rng.gen_range(1.0..=2.0);
                let delay = rng.gen_range(0..=2);
                WorkerSpec::new(i, speed, delay)
            })
            .collect()
    }
}

/// Application, workers and scheduling: everything but the fault plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub app: AppName,
    #[serde(default, skip_serializing_if = "is_default")]
    pub app_options: AppOptions,
    /// Total work units.
    #[serde(rename = "N", alias = "n")]
    pub n: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<WorkerSpec>,
    /// Used when `workers` is empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_workers: Option<SyntheticWorkers>,
    #[serde(default = "default_masters")]
    pub masters_k: u32,
    pub grain_mode: GrainMode,
    pub run_seed: u64,
    #[serde(default = "default_budget")]
    pub tick_budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_len: Option<u64>,
    #[serde(default)]
    pub base_delay: u64,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("configure either `workers` or `synthetic_workers`, not both")]
    AmbiguousWorkers,
    #[error("no workers configured")]
    NoWorkers,
    #[error("masters_k must be at least 1")]
    NoMasters,
    #[error("grain must be between 1 and N = {n}, got {grain}")]
    Grain { grain: u64, n: u64 },
    #[error("N = {n} is smaller than the worker count {p} required by static_np")]
    Partition { n: u64, p: u64 },
    #[error("tick_budget must be positive")]
    Budget,
    #[error(transparent)]
    Run(#[from] RunError),
}

impl AppConfig {
    pub fn worker_specs(&self) -> Vec<WorkerSpec> {
        match (&self.synthetic_workers, self.workers.is_empty()) {
            (Some(s), true) => s.generate(),
            _ => self.workers.clone(),
        }
    }

    pub fn masters(&self) -> MasterSpec {
        MasterSpec::redundant(self.masters_k)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            run_seed: self.run_seed,
            tick_budget: self.tick_budget,
            lease_len: self.lease_len,
            base_delay: self.base_delay,
        }
    }

    pub fn build_app(&self) -> Result<Box<dyn Application>, RunError> {
        apps::builtin(self.app, self.n, &self.app_options, self.run_seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.workers.is_empty() && self.synthetic_workers.is_some() {
            return Err(ConfigError::AmbiguousWorkers);
        }
        let workers = self.worker_specs();
        if workers.is_empty() {
            return Err(ConfigError::NoWorkers);
        }
        if self.masters_k == 0 {
            return Err(ConfigError::NoMasters);
        }
        if self.tick_budget == 0 {
            return Err(ConfigError::Budget);
        }
        if self.lease_len == Some(0) {
            return Err(RunError::InvalidLease.into());
        }
        for w in &workers {
            if !(w.speed_factor.is_finite() && w.speed_factor > 0.0) {
                return Err(RunError::InvalidSpeed(w.worker_id).into());
            }
        }
        match self.grain_mode {
            GrainMode::FixedGrain { grain } if grain == 0 || grain > self.n => {
                return Err(ConfigError::Grain { grain, n: self.n });
            }
            GrainMode::StaticNp if (workers.len() as u64) > self.n => {
                return Err(ConfigError::Partition { n: self.n, p: workers.len() as u64 });
            }
            _ => {}
        }
        self.build_app()?;
        Ok(())
    }
}

/// A single `run` (or `tune`) invocation: an [`AppConfig`] plus the fault
/// plan and output location, as one flat JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub app: AppName,
    #[serde(default, skip_serializing_if = "is_default")]
    pub app_options: AppOptions,
    #[serde(rename = "N", alias = "n")]
    pub n: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<WorkerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_workers: Option<SyntheticWorkers>,
    #[serde(default = "default_masters")]
    pub masters_k: u32,
    pub grain_mode: GrainMode,
    pub fault_plan: FaultPlan,
    pub run_seed: u64,
    #[serde(default = "default_budget")]
    pub tick_budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease_len: Option<u64>,
    #[serde(default)]
    pub base_delay: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Also append a virtual-circuit row for the same workload.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub compare_vc: bool,
}

impl RunConfig {
    pub fn app_config(&self) -> AppConfig {
        AppConfig {
            app: self.app,
            app_options: self.app_options.clone(),
            n: self.n,
            workers: self.workers.clone(),
            synthetic_workers: self.synthetic_workers,
            masters_k: self.masters_k,
            grain_mode: self.grain_mode,
            run_seed: self.run_seed,
            tick_budget: self.tick_budget,
            lease_len: self.lease_len,
            base_delay: self.base_delay,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fault_plan.validate().map_err(RunError::from)?;
        self.app_config().validate()
    }

    /// Replaces both the run seed and the fault seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.run_seed = seed;
        self.fault_plan.seed = seed;
    }
}
