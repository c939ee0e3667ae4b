//! The portable simulation document (`.qnsim.json`) and everything built on it:
//! validation, canonical export/import, compilation to a plan
//! (`.qnplan.json`) and plan execution.

pub mod bundle;
pub mod canonical;
mod compile;
mod run;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::framework::{ParamValue, RoleRegistry};

pub use bundle::Bundle;
pub use compile::{
    compile, BackendDescriptor, BackendRegistry, CompileError, CompiledPlan, PlanConnection,
    PlanRunConfig, NATIVE_ENGINE, PLAN_VERSION,
};
pub use run::{run_plan, RunOptions, RunRecord, RunReport, RunStatus};
pub use validate::{validate, ErrorCode, ValidationError};

/// The only schema version this build reads and writes.
pub const SCHEMA_VERSION: &str = "1";

/// Key under `extensions` where editors keep node layout; ignored by validation.
pub const LAYOUT_EXTENSION: &str = "x-layout";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDocument {
    pub schema_version: String,
    pub name: String,
    pub engine: String,
    pub topology: TopologyDoc,
    #[serde(default)]
    pub protocol_groups: Vec<GroupDoc>,
    #[serde(default)]
    pub run_config: RunConfigDoc,
    /// Vendor extensions (editor layout and the like). Never interpreted.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extensions: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    #[serde(default)]
    pub nodes: Vec<NodeDoc>,
    #[serde(default)]
    pub connections: Vec<ConnectionDoc>,
}

/// A quantum node. Omitted hardware parameters take documented defaults at compile time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_slots: Option<i64>,
    /// Seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    /// Seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_fidelity: Option<f64>,
    /// Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_frequency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionDoc {
    pub id: String,
    pub endpoint_a: String,
    pub endpoint_b: String,
    pub length_km: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation_db_per_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_depolarizing_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical_latency: Option<Latency>,
}

/// One-way classical delay: `"auto"` (time of flight) or seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Latency {
    Auto(AutoLatency),
    Seconds(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoLatency {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub name: String,
    pub stages: Vec<StageDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDoc {
    pub roles: Vec<BindingDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingDoc {
    pub instance_id: String,
    pub node_id: String,
    pub role: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigDoc {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub runs: i64,
    /// Seconds; absent means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sim_time: Option<f64>,
}

fn one() -> i64 {
    1
}

impl Default for RunConfigDoc {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 1,
            max_sim_time: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {found:?} (expected {SCHEMA_VERSION:?})")]
    Version { found: String },
}

impl ImportError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ImportError::Malformed(_) => ErrorCode::Malformed,
            ImportError::Version { .. } => ErrorCode::SchemaVersion,
        }
    }

    pub fn to_validation_error(&self) -> ValidationError {
        ValidationError {
            code: self.code(),
            path: if matches!(self, ImportError::Version { .. }) {
                "/schema_version".into()
            } else {
                String::new()
            },
            message: self.to_string(),
        }
    }
}

/// Canonical bytes of a document.
pub fn export(doc: &SimulationDocument) -> Vec<u8> {
    canonical::to_canonical_bytes(doc).expect("documents hold only finite numbers")
}

/// Parses document bytes. The schema version is checked before the structure.
pub fn import(bytes: &[u8]) -> Result<SimulationDocument, ImportError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| ImportError::Malformed(e.to_string()))?;
    match value.get("schema_version") {
        Some(Value::String(v)) if v == SCHEMA_VERSION => {}
        Some(Value::String(v)) => return Err(ImportError::Version { found: v.clone() }),
        Some(other) => {
            return Err(ImportError::Version {
                found: other.to_string(),
            })
        }
        None => return Err(ImportError::Malformed("missing schema_version".into())),
    }
    serde_json::from_value(value).map_err(|e| ImportError::Malformed(e.to_string()))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a document's canonical bytes.
pub fn document_hash(doc: &SimulationDocument) -> String {
    sha256_hex(&export(doc))
}

/// Role and backend registries bundled for the common operations.
#[derive(Clone)]
pub struct Toolkit {
    pub roles: RoleRegistry,
    pub backends: BackendRegistry,
}

impl Default for Toolkit {
    fn default() -> Self {
        Self::standard()
    }
}

impl Toolkit {
    /// Stock roles and the native backend.
    pub fn standard() -> Self {
        let roles = RoleRegistry::standard();
        let backends = BackendRegistry::with_native(&roles);
        Self { roles, backends }
    }

    pub fn validate(&self, doc: &SimulationDocument) -> Result<(), Vec<ValidationError>> {
        validate(doc, &self.roles, &self.backends)
    }

    pub fn compile(&self, doc: &SimulationDocument) -> Result<CompiledPlan, CompileError> {
        compile(doc, &self.roles, &self.backends)
    }

    pub fn run_plan(&self, plan: &CompiledPlan, options: &RunOptions) -> RunReport {
        run_plan(plan, &self.roles, options)
    }
}
