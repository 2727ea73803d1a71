//! Circuit survival against tuple-space completion as the machine grows.
//!
//! Each scale runs `trials` paired experiments: the same workload and the same
//! fault plan go through [`vc_run`] and [`smc_run`]. Work per worker is fixed,
//! so the message count grows linearly with the worker count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AppConfig;
use crate::granularity::GrainMode;
use crate::par::{self, ExecMode};
use crate::report::RunStatus;
use crate::runtime::apps::AppName;
use crate::runtime::{RunError, WorkerSpec};
use crate::seed;
use crate::transport::{smc_run, vc_message_count, vc_run, FaultPlan};

fn default_work_per_worker() -> u64 {
    8
}

fn default_grain() -> u64 {
    2
}

fn default_speed() -> f64 {
    1.0
}

fn default_link_delay() -> u64 {
    1
}

fn default_budget() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliabilityProfile {
    /// Worker counts, strictly increasing.
    pub scales: Vec<u32>,
    pub per_msg_loss_prob: f64,
    pub trials: u32,
    pub base_seed: u64,
    #[serde(default = "default_budget")]
    pub tick_budget: u64,
    #[serde(default = "default_work_per_worker")]
    pub work_per_worker: u64,
    #[serde(default = "default_grain")]
    pub grain: u64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default = "default_link_delay")]
    pub link_delay: u64,
    /// Optional crash sweep on top of message loss.
    #[serde(default)]
    pub per_step_crash_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReliabilityError {
    #[error("scales must be non-empty and strictly increasing")]
    Scales,
    #[error("trials must be positive")]
    Trials,
    #[error("grain must be between 1 and work_per_worker")]
    Grain,
    #[error(transparent)]
    Run(#[from] RunError),
}

impl ReliabilityProfile {
    pub fn validate(&self) -> Result<(), ReliabilityError> {
        if self.scales.is_empty() || self.scales[0] == 0 || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReliabilityError::Scales);
        }
        if self.trials == 0 {
            return Err(ReliabilityError::Trials);
        }
        if self.grain == 0 || self.grain > self.work_per_worker {
            return Err(ReliabilityError::Grain);
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(RunError::InvalidSpeed(crate::tuple_space::WorkerId(0)).into());
        }
        self.fault_plan(0).validate().map_err(RunError::from)?;
        Ok(())
    }

    /// Workload at one scale for one trial.
    pub fn app_config(&self, scale: u32, run_seed: u64) -> AppConfig {
        AppConfig {
            app: AppName::MonteCarloPi,
            app_options: Default::default(),
            n: scale as u64 * self.work_per_worker,
            workers: (0..scale).map(|i| WorkerSpec::new(i, self.speed, self.link_delay)).collect(),
            synthetic_workers: None,
            masters_k: 1,
            grain_mode: GrainMode::FixedGrain { grain: self.grain },
            run_seed,
            tick_budget: self.tick_budget,
            lease_len: None,
            base_delay: 0,
        }
    }

    pub fn fault_plan(&self, seed: u64) -> FaultPlan {
        FaultPlan {
            per_step_crash_prob: self.per_step_crash_prob,
            recover_after: self.recover_after,
            ..FaultPlan::with_loss(seed, self.per_msg_loss_prob)
        }
    }

    pub fn trial_seed(&self, scale: u32, trial: u32) -> u64 {
        seed::mix3(self.base_seed, scale as u64, trial as u64)
    }
}

/// `(1 - p)^M`: the chance that none of `M` independently lossy messages drops.
pub fn vc_success_analytic(message_count: u64, p: f64) -> f64 {
    (1.0 - p).powf(message_count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub vc_success: bool,
    pub smc_success: bool,
    pub smc_makespan: u64,
    pub vc_elapsed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub scale: u32,
    pub messages: u64,
    pub vc_success: f64,
    pub smc_success: f64,
    pub vc_analytic: f64,
    pub mean_smc_makespan: f64,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityCurve {
    pub per_msg_loss_prob: f64,
    pub trials: u32,
    pub rows: Vec<CurveRow>,
}

impl ReliabilityCurve {
    pub const CSV_HEADER: &'static str = "scale,vc_success,smc_success,vc_analytic,mean_smc_makespan";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.scale, r.vc_success, r.smc_success, r.vc_analytic, r.mean_smc_makespan
            ));
        }
        out
    }

    /// Pairs of scales whose empirical circuit success rises by more than
    /// `sigmas` standard errors of the difference.
    pub fn monotonicity_violations(&self, sigmas: f64) -> Vec<(u32, u32)> {
        let n = self.trials as f64;
        let mut bad = Vec::new();
        for (i, a) in self.rows.iter().enumerate() {
            for b in &self.rows[i + 1..] {
                let var = a.vc_analytic * (1.0 - a.vc_analytic) / n + b.vc_analytic * (1.0 - b.vc_analytic) / n;
                if b.vc_success - a.vc_success > sigmas * var.sqrt() {
                    bad.push((a.scale, b.scale));
                }
            }
        }
        bad
    }
}

fn trial(profile: &ReliabilityProfile, scale: u32, index: u32) -> Result<Trial, RunError> {
    let seed = profile.trial_seed(scale, index);
    let cfg = profile.app_config(scale, seed);
    let plan = profile.fault_plan(seed);
    let vc = vc_run(&cfg, &plan)?;
    let smc = smc_run(&cfg, &plan)?;
    Ok(Trial {
        vc_success: vc.is_success(),
        smc_success: smc.status == RunStatus::Success,
        smc_makespan: smc.makespan,
        vc_elapsed: vc.elapsed,
    })
}

/// Runs every trial of every scale. Trials are independent and merged by
/// index, so the curve does not depend on `exec`.
pub fn sweep(profile: &ReliabilityProfile, exec: ExecMode) -> Result<ReliabilityCurve, ReliabilityError> {
    profile.validate()?;
    let mut rows = Vec::with_capacity(profile.scales.len());
    for &scale in &profile.scales {
        let messages = vc_message_count(&profile.app_config(scale, profile.base_seed))?;
        let trials = par::map_range(exec, profile.trials as usize, |i| trial(profile, scale, i as u32))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let n = trials.len() as f64;
        let frac = |f: fn(&Trial) -> bool| trials.iter().filter(|t| f(t)).count() as f64 / n;
        rows.push(CurveRow {
            scale,
            messages,
            vc_success: frac(|t| t.vc_success),
            smc_success: frac(|t| t.smc_success),
            vc_analytic: vc_success_analytic(messages, profile.per_msg_loss_prob),
            mean_smc_makespan: trials.iter().map(|t| t.smc_makespan as f64).sum::<f64>() / n,
            trials,
        });
    }
    Ok(ReliabilityCurve { per_msg_loss_prob: profile.per_msg_loss_prob, trials: profile.trials, rows })
}
