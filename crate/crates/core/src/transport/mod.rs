//! Message layer: the deterministic simulator, fault plans, and the two ways
//! of running a configured workload over it.

pub mod fault;
pub mod sim;
mod vc;

pub use fault::{CrashEvent, FaultPlan, FaultPlanError, MasterCrash};
pub use vc::{vc_message_count, vc_run, HaltCause, VcRunOutcome, VcStatus};

use crate::config::AppConfig;
use crate::report::RunReport;
use crate::runtime::{self, RunError};

/// Runs the configured workload through the tuple space.
pub fn smc_run(app_cfg: &AppConfig, fault_plan: &FaultPlan) -> Result<RunReport, RunError> {
    let app = app_cfg.build_app()?;
    runtime::run(
        app.as_ref(),
        &app_cfg.worker_specs(),
        app_cfg.masters(),
        app_cfg.grain_mode,
        fault_plan,
        &app_cfg.settings(),
    )
}
