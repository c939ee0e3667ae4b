//! Protocol execution on top of the event queue.
//!
//! A role is an `async` function over a [`RoleContext`]. Roles never see the
//! scheduler directly: receives suspend the role in simulated time and event
//! dispatch resumes it. Groups run in order, stages within a group run in
//! order behind a barrier, and the roles of one stage interleave.

mod context;
mod params;
mod registry;
mod runtime;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkError;
use crate::quantum::QuantumError;

pub use context::{QubitArrival, RoleContext};
pub use params::{resolve_params, Bound, ParamIssue, ParamKind, ParamSpec, ParamValue, Params};
pub use registry::{RegistryError, RoleFactory, RoleFuture, RoleRegistry, RoleSchema, RoleSpec};
pub use runtime::{run_groups, MessageRecord, RunOutcome, Simulation, StageRecord, Trace};

/// A role instance bound to a node, with fully resolved parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub instance_id: String,
    pub node_id: String,
    pub role: String,
    pub params: Params,
    /// Key of the role's random substream, combined with the run seed.
    pub rng_key: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub name: String,
    /// Stages in execution order; roles within a stage run concurrently.
    pub stages: Vec<Vec<Binding>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleStatus {
    Completed,
    Aborted,
    Failed,
}

/// How a role ended when it did not fail.
#[derive(Clone, Debug, PartialEq)]
pub enum RoleExit {
    Completed,
    Aborted(String),
}

#[derive(Debug, Error)]
pub enum RoleError {
    #[error("no connection between {from} and {to}")]
    NoConnection { from: String, to: String },
    #[error("cannot pick a peer for node {node}: {reason}")]
    Peer { node: String, reason: String },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("missing input {0:?} on the node blackboard")]
    MissingInput(String),
    #[error("malformed message from {peer}: {detail}")]
    Message { peer: String, detail: String },
    #[error("{0}")]
    Protocol(String),
}

/// Outcome of one role binding in one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleResult {
    pub instance_id: String,
    pub role: String,
    pub node_id: String,
    pub group: usize,
    pub stage: usize,
    pub status: RoleStatus,
    pub started_at: f64,
    pub finished_at: f64,
    pub metrics: BTreeMap<String, f64>,
    pub outputs: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}
