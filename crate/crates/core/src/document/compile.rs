use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{document_hash, Latency, SimulationDocument, ValidationError};
use crate::document::canonical;
use crate::document::validate;
use crate::framework::{resolve_params, Binding, GroupPlan, RoleRegistry};
use crate::network::{
    propagation_delay_km, survival_probability, Connection, Network, Node,
    DEFAULT_ATTENUATION_DB_PER_KM, DEFAULT_EMISSION_FREQUENCY, DEFAULT_MEMORY_SLOTS,
    DEFAULT_NOISE_P, DEFAULT_SOURCE_FIDELITY, DEFAULT_T1, DEFAULT_T2,
};
use crate::rng::stream_key;

/// Id of the built-in engine.
pub const NATIVE_ENGINE: &str = "native";
/// Format version of compiled plans.
pub const PLAN_VERSION: &str = "1";

/// What an engine can simulate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub engine: String,
    /// Noise channel kinds the engine implements (`loss`, `depolarizing`, ...).
    pub channel_kinds: BTreeSet<String>,
    pub roles: BTreeSet<String>,
}

impl BackendDescriptor {
    /// The native engine: every channel kind and every role in `roles`.
    pub fn native(roles: &RoleRegistry) -> Self {
        Self {
            engine: NATIVE_ENGINE.into(),
            channel_kinds: ["loss", "depolarizing", "dephasing", "amplitude_damping"]
                .into_iter()
                .map(String::from)
                .collect(),
            roles: roles.names().map(String::from).collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, BackendDescriptor>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_native(roles: &RoleRegistry) -> Self {
        let mut registry = Self::empty();
        registry.register(BackendDescriptor::native(roles));
        registry
    }

    /// Adds or replaces a backend.
    pub fn register(&mut self, descriptor: BackendDescriptor) {
        self.backends.insert(descriptor.engine.clone(), descriptor);
    }

    pub fn get(&self, engine: &str) -> Option<&BackendDescriptor> {
        self.backends.get(engine)
    }

    pub fn engines(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("unknown engine {0:?}")]
    UnknownEngine(String),
    #[error("document is invalid ({} errors)", .0.len())]
    Invalid(Vec<ValidationError>),
    #[error("engine {engine:?} lacks required capabilities: {}", missing.join(", "))]
    CapabilityGap { engine: String, missing: Vec<String> },
}

impl CompileError {
    /// The failure as validation errors, for uniform reporting.
    pub fn errors(&self) -> Vec<ValidationError> {
        use crate::document::ErrorCode;
        match self {
            CompileError::UnknownEngine(engine) => vec![ValidationError {
                code: ErrorCode::EngineUnknown,
                path: "/engine".into(),
                message: format!("engine {engine:?} is not registered"),
            }],
            CompileError::Invalid(errors) => errors.clone(),
            CompileError::CapabilityGap { engine, missing } => missing
                .iter()
                .map(|m| ValidationError {
                    code: ErrorCode::Capability,
                    path: "/engine".into(),
                    message: format!("engine {engine:?} does not support {m}"),
                })
                .collect(),
        }
    }
}

/// A connection with every parameter resolved, plus derived physics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConnection {
    #[serde(flatten)]
    pub connection: Connection,
    /// One-way time of flight, s.
    pub propagation_delay: f64,
    pub survival_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRunConfig {
    pub seed: u64,
    pub runs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sim_time: Option<f64>,
}

/// The self-contained runnable artifact (`.qnplan.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompiledPlan {
    pub plan_version: String,
    pub name: String,
    pub engine: String,
    /// SHA-256 of the source document's canonical bytes.
    pub document_hash: String,
    pub nodes: Vec<Node>,
    pub connections: Vec<PlanConnection>,
    pub groups: Vec<GroupPlan>,
    pub run_config: PlanRunConfig,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CompiledPlan {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(self).expect("plans hold only finite numbers")
    }

    pub fn network(&self) -> Network {
        Network::new(
            self.nodes.clone(),
            self.connections.iter().map(|c| c.connection.clone()).collect(),
        )
    }
}

/// Channel kinds and roles the document needs from its engine.
fn required_capabilities(doc: &SimulationDocument) -> (BTreeSet<&'static str>, BTreeSet<&str>) {
    let mut channels = BTreeSet::new();
    if !doc.topology.connections.is_empty() {
        channels.insert("loss");
    }
    if doc
        .topology
        .connections
        .iter()
        .any(|c| c.noise_depolarizing_p.unwrap_or(DEFAULT_NOISE_P) > 0.0)
        || doc
            .topology
            .nodes
            .iter()
            .any(|n| n.source_fidelity.unwrap_or(DEFAULT_SOURCE_FIDELITY) < 1.0)
    {
        channels.insert("depolarizing");
    }
    if doc
        .topology
        .nodes
        .iter()
        .any(|n| n.memory_slots.unwrap_or(i64::from(DEFAULT_MEMORY_SLOTS)) > 0)
    {
        channels.insert("amplitude_damping");
        channels.insert("dephasing");
    }
    let roles = doc
        .protocol_groups
        .iter()
        .flat_map(|g| &g.stages)
        .flat_map(|s| &s.roles)
        .map(|b| b.role.as_str())
        .collect();
    (channels, roles)
}

/// Validates `doc` and resolves it into a plan for its engine.
pub fn compile(
    doc: &SimulationDocument,
    roles: &RoleRegistry,
    backends: &BackendRegistry,
) -> Result<CompiledPlan, CompileError> {
    let backend = backends
        .get(&doc.engine)
        .ok_or_else(|| CompileError::UnknownEngine(doc.engine.clone()))?;
    validate(doc, roles, backends).map_err(CompileError::Invalid)?;

    let (channels, needed_roles) = required_capabilities(doc);
    let mut missing: Vec<String> = channels
        .into_iter()
        .filter(|c| !backend.channel_kinds.contains(*c))
        .map(|c| format!("channel:{c}"))
        .collect();
    missing.extend(
        needed_roles
            .into_iter()
            .filter(|r| !backend.roles.contains(*r))
            .map(|r| format!("role:{r}")),
    );
    if !missing.is_empty() {
        return Err(CompileError::CapabilityGap {
            engine: doc.engine.clone(),
            missing,
        });
    }

    let nodes = doc
        .topology
        .nodes
        .iter()
        .map(|n| Node {
            id: n.id.clone(),
            label: n.label.clone().unwrap_or_else(|| n.id.clone()),
            memory_slots: n
                .memory_slots
                .map_or(DEFAULT_MEMORY_SLOTS, |s| u32::try_from(s).unwrap_or(0)),
            t1: n.t1.unwrap_or(DEFAULT_T1),
            t2: n.t2.unwrap_or(DEFAULT_T2),
            source_fidelity: n.source_fidelity.unwrap_or(DEFAULT_SOURCE_FIDELITY),
            emission_frequency: n.emission_frequency.unwrap_or(DEFAULT_EMISSION_FREQUENCY),
        })
        .collect();

    let connections = doc
        .topology
        .connections
        .iter()
        .map(|c| {
            let connection = Connection {
                id: c.id.clone(),
                endpoint_a: c.endpoint_a.clone(),
                endpoint_b: c.endpoint_b.clone(),
                length_km: c.length_km,
                attenuation_db_per_km: c
                    .attenuation_db_per_km
                    .unwrap_or(DEFAULT_ATTENUATION_DB_PER_KM),
                noise_depolarizing_p: c.noise_depolarizing_p.unwrap_or(DEFAULT_NOISE_P),
                classical_latency: match c.classical_latency {
                    Some(Latency::Seconds(s)) => s,
                    Some(Latency::Auto(_)) | None => propagation_delay_km(c.length_km),
                },
            };
            PlanConnection {
                propagation_delay: propagation_delay_km(connection.length_km),
                survival_probability: survival_probability(&connection),
                connection,
            }
        })
        .collect();

    let mut warnings = Vec::new();
    let mut groups = Vec::with_capacity(doc.protocol_groups.len());
    for group in &doc.protocol_groups {
        let mut stages = Vec::with_capacity(group.stages.len());
        for (s, stage) in group.stages.iter().enumerate() {
            let mut seen = BTreeMap::new();
            let mut bindings = Vec::with_capacity(stage.roles.len());
            for b in &stage.roles {
                if let Some(previous) = seen.insert(b.node_id.as_str(), b.instance_id.as_str()) {
                    warnings.push(format!(
                        "group {:?} stage {s}: node {} hosts both {previous} and {}",
                        group.name, b.node_id, b.instance_id
                    ));
                }
                let spec = roles.get(&b.role).expect("validated role");
                let params =
                    resolve_params(&spec.params, &b.params).expect("validated parameters");
                bindings.push(Binding {
                    instance_id: b.instance_id.clone(),
                    node_id: b.node_id.clone(),
                    role: b.role.clone(),
                    params,
                    rng_key: stream_key(&b.instance_id),
                });
            }
            stages.push(bindings);
        }
        groups.push(GroupPlan {
            name: group.name.clone(),
            stages,
        });
    }

    Ok(CompiledPlan {
        plan_version: PLAN_VERSION.into(),
        name: doc.name.clone(),
        engine: doc.engine.clone(),
        document_hash: document_hash(doc),
        nodes,
        connections,
        groups,
        run_config: PlanRunConfig {
            seed: doc.run_config.seed,
            runs: doc.run_config.runs as u64,
            max_sim_time: doc.run_config.max_sim_time,
        },
        warnings,
    })
}
