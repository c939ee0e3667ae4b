use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CompiledPlan;
use crate::document::canonical;
use crate::framework::{RoleRegistry, RoleResult, RoleStatus, Simulation, StageRecord};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Replaces the plan's base seed.
    pub seed_override: Option<u64>,
    /// Dispatch independent runs on the rayon pool.
    pub parallel: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Every role terminated without failing (aborts included).
    Succeeded,
    /// A role failed, or the run hit a deadlock or time limit.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u64,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Simulated seconds at the end of the last stage.
    pub sim_end_time: f64,
    pub wall_clock_seconds: f64,
    pub events_dispatched: u64,
    pub classical_messages: u64,
    pub disclosed_parities: u64,
    pub qubits_sent: u64,
    pub qubits_lost: u64,
    pub stages: Vec<StageRecord>,
    pub role_results: Vec<RoleResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub engine: String,
    pub document_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRecord>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    /// Copy with every wall-clock field zeroed, for determinism comparisons.
    pub fn normalized(&self) -> Self {
        let mut report = self.clone();
        report.wall_clock_seconds = 0.0;
        for run in &mut report.runs {
            run.wall_clock_seconds = 0.0;
        }
        report
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("reports hold only finite numbers")
    }

    /// True when every run succeeded.
    pub fn succeeded(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Succeeded)
    }
}

fn execute(plan: &CompiledPlan, roles: &RoleRegistry, run_index: u64, seed: u64) -> RunRecord {
    let started = Instant::now();
    let outcome = Simulation::new(roles, plan.network(), seed)
        .with_max_sim_time(plan.run_config.max_sim_time)
        .run(&plan.groups);
    let failed_roles: Vec<&str> = outcome
        .results
        .iter()
        .filter(|r| r.status == RoleStatus::Failed)
        .map(|r| r.instance_id.as_str())
        .collect();
    let error = match (&outcome.error, failed_roles.is_empty()) {
        (Some(e), _) => Some(e.clone()),
        (None, false) => Some(format!("roles failed: {}", failed_roles.join(", "))),
        (None, true) => None,
    };
    RunRecord {
        run_index,
        seed,
        status: if error.is_none() {
            RunStatus::Succeeded
        } else {
            RunStatus::Failed
        },
        error,
        sim_end_time: outcome.end_time,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        events_dispatched: outcome.events_dispatched,
        classical_messages: outcome.trace.messages.len() as u64,
        disclosed_parities: outcome.trace.disclosed_parities(),
        qubits_sent: outcome.trace.qubits_sent,
        qubits_lost: outcome.trace.qubits_lost,
        stages: outcome.stages,
        role_results: outcome.results,
    }
}

/// Executes every run of `plan`. Run `i` uses seed `base + i`; a failing run
/// never affects its siblings.
pub fn run_plan(plan: &CompiledPlan, roles: &RoleRegistry, options: &RunOptions) -> RunReport {
    let started = Instant::now();
    let base = options.seed_override.unwrap_or(plan.run_config.seed);
    let seeds: Vec<u64> = (0..plan.run_config.runs)
        .map(|i| base.wrapping_add(i))
        .collect();
    let runs: Vec<RunRecord> = if options.parallel {
        seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| execute(plan, roles, i as u64, seed))
            .collect()
    } else {
        seeds
            .iter()
            .enumerate()
            .map(|(i, &seed)| execute(plan, roles, i as u64, seed))
            .collect()
    };
    RunReport {
        name: plan.name.clone(),
        engine: plan.engine.clone(),
        document_hash: plan.document_hash.clone(),
        seeds,
        runs,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    }
}
