use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Latency, SimulationDocument, SCHEMA_VERSION};
use crate::document::BackendRegistry;
use crate::framework::{resolve_params, RoleRegistry};
use crate::network::{DEFAULT_T1, DEFAULT_T2};

/// Stable validation error codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "E_MALFORMED")]
    Malformed,
    #[serde(rename = "E_SCHEMA_VERSION")]
    SchemaVersion,
    #[serde(rename = "E_ENGINE_UNKNOWN")]
    EngineUnknown,
    #[serde(rename = "E_DUPLICATE_ID")]
    DuplicateId,
    #[serde(rename = "E_TOPOLOGY")]
    Topology,
    #[serde(rename = "E_NODE_PARAM")]
    NodeParam,
    #[serde(rename = "E_CONNECTION_PARAM")]
    ConnectionParam,
    #[serde(rename = "E_ROLE_UNKNOWN")]
    RoleUnknown,
    #[serde(rename = "E_ROLE_NODE")]
    RoleNode,
    #[serde(rename = "E_ROLE_PARAM")]
    RoleParam,
    #[serde(rename = "E_RUN_CONFIG")]
    RunConfig,
    #[serde(rename = "E_CAPABILITY")]
    Capability,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 12] = [
        ErrorCode::Malformed,
        ErrorCode::SchemaVersion,
        ErrorCode::EngineUnknown,
        ErrorCode::DuplicateId,
        ErrorCode::Topology,
        ErrorCode::NodeParam,
        ErrorCode::ConnectionParam,
        ErrorCode::RoleUnknown,
        ErrorCode::RoleNode,
        ErrorCode::RoleParam,
        ErrorCode::RunConfig,
        ErrorCode::Capability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Malformed => "E_MALFORMED",
            ErrorCode::SchemaVersion => "E_SCHEMA_VERSION",
            ErrorCode::EngineUnknown => "E_ENGINE_UNKNOWN",
            ErrorCode::DuplicateId => "E_DUPLICATE_ID",
            ErrorCode::Topology => "E_TOPOLOGY",
            ErrorCode::NodeParam => "E_NODE_PARAM",
            ErrorCode::ConnectionParam => "E_CONNECTION_PARAM",
            ErrorCode::RoleUnknown => "E_ROLE_UNKNOWN",
            ErrorCode::RoleNode => "E_ROLE_NODE",
            ErrorCode::RoleParam => "E_ROLE_PARAM",
            ErrorCode::RunConfig => "E_RUN_CONFIG",
            ErrorCode::Capability => "E_CAPABILITY",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One violation, located by a JSON pointer into the document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationError {
    pub code: ErrorCode,
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.path, self.message)
    }
}

struct Collector(Vec<ValidationError>);

impl Collector {
    fn push(&mut self, code: ErrorCode, path: String, message: impl Into<String>) {
        self.0.push(ValidationError {
            code,
            path,
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, code: ErrorCode, path: String, message: impl Into<String>) {
        if !ok {
            self.push(code, path, message);
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn probability(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

/// Checks every document invariant and returns all violations.
pub fn validate(
    doc: &SimulationDocument,
    roles: &RoleRegistry,
    backends: &BackendRegistry,
) -> Result<(), Vec<ValidationError>> {
    let mut errs = Collector(Vec::new());
    errs.check(
        doc.schema_version == SCHEMA_VERSION,
        ErrorCode::SchemaVersion,
        "/schema_version".into(),
        format!("unsupported schema_version {:?}", doc.schema_version),
    );
    errs.check(
        backends.get(&doc.engine).is_some(),
        ErrorCode::EngineUnknown,
        "/engine".into(),
        format!("engine {:?} is not registered", doc.engine),
    );

    let mut node_ids = HashSet::new();
    for (i, node) in doc.topology.nodes.iter().enumerate() {
        let base = format!("/topology/nodes/{i}");
        errs.check(
            !node.id.is_empty(),
            ErrorCode::NodeParam,
            format!("{base}/id"),
            "node id must not be empty",
        );
        errs.check(
            node_ids.insert(node.id.as_str()),
            ErrorCode::DuplicateId,
            format!("{base}/id"),
            format!("duplicate node id {:?}", node.id),
        );
        if let Some(slots) = node.memory_slots {
            errs.check(
                (0..=1024).contains(&slots),
                ErrorCode::NodeParam,
                format!("{base}/memory_slots"),
                format!("memory_slots must be in [0, 1024], got {slots}"),
            );
        }
        for (field, value) in [
            ("t1", node.t1),
            ("t2", node.t2),
            ("emission_frequency", node.emission_frequency),
        ] {
            if let Some(x) = value {
                errs.check(
                    positive(x),
                    ErrorCode::NodeParam,
                    format!("{base}/{field}"),
                    format!("{field} must be > 0, got {x}"),
                );
            }
        }
        let t1 = node.t1.unwrap_or(DEFAULT_T1);
        let t2 = node.t2.unwrap_or(DEFAULT_T2);
        if positive(t1) && positive(t2) {
            errs.check(
                t2 <= 2.0 * t1,
                ErrorCode::NodeParam,
                format!("{base}/t2"),
                format!("t2 ({t2}) must not exceed 2 * t1 ({t1})"),
            );
        }
        if let Some(f) = node.source_fidelity {
            errs.check(
                f.is_finite() && f > 0.5 && f <= 1.0,
                ErrorCode::NodeParam,
                format!("{base}/source_fidelity"),
                format!("source_fidelity must be in (0.5, 1], got {f}"),
            );
        }
    }

    let mut connection_ids = HashSet::new();
    for (i, c) in doc.topology.connections.iter().enumerate() {
        let base = format!("/topology/connections/{i}");
        errs.check(
            connection_ids.insert(c.id.as_str()),
            ErrorCode::DuplicateId,
            format!("{base}/id"),
            format!("duplicate connection id {:?}", c.id),
        );
        for (field, endpoint) in [("endpoint_a", &c.endpoint_a), ("endpoint_b", &c.endpoint_b)] {
            errs.check(
                node_ids.contains(endpoint.as_str()),
                ErrorCode::Topology,
                format!("{base}/{field}"),
                format!("unknown node {endpoint:?}"),
            );
        }
        errs.check(
            c.endpoint_a != c.endpoint_b,
            ErrorCode::Topology,
            format!("{base}/endpoint_b"),
            "a connection must join two distinct nodes",
        );
        errs.check(
            non_negative(c.length_km),
            ErrorCode::ConnectionParam,
            format!("{base}/length_km"),
            format!("length_km must be >= 0, got {}", c.length_km),
        );
        if let Some(a) = c.attenuation_db_per_km {
            errs.check(
                non_negative(a),
                ErrorCode::ConnectionParam,
                format!("{base}/attenuation_db_per_km"),
                format!("attenuation_db_per_km must be >= 0, got {a}"),
            );
        }
        if let Some(p) = c.noise_depolarizing_p {
            errs.check(
                probability(p),
                ErrorCode::ConnectionParam,
                format!("{base}/noise_depolarizing_p"),
                format!("noise_depolarizing_p must be in [0, 1], got {p}"),
            );
        }
        if let Some(Latency::Seconds(s)) = c.classical_latency {
            errs.check(
                non_negative(s),
                ErrorCode::ConnectionParam,
                format!("{base}/classical_latency"),
                format!("classical_latency must be >= 0 or \"auto\", got {s}"),
            );
        }
    }

    let mut instance_ids = HashSet::new();
    for (g, group) in doc.protocol_groups.iter().enumerate() {
        for (s, stage) in group.stages.iter().enumerate() {
            for (r, binding) in stage.roles.iter().enumerate() {
                let base = format!("/protocol_groups/{g}/stages/{s}/roles/{r}");
                errs.check(
                    instance_ids.insert(binding.instance_id.as_str()),
                    ErrorCode::DuplicateId,
                    format!("{base}/instance_id"),
                    format!("duplicate instance_id {:?}", binding.instance_id),
                );
                errs.check(
                    node_ids.contains(binding.node_id.as_str()),
                    ErrorCode::RoleNode,
                    format!("{base}/node_id"),
                    format!("unknown node {:?}", binding.node_id),
                );
                let Some(spec) = roles.get(&binding.role) else {
                    errs.push(
                        ErrorCode::RoleUnknown,
                        format!("{base}/role"),
                        format!("role {:?} is not registered", binding.role),
                    );
                    continue;
                };
                if let Err(issues) = resolve_params(&spec.params, &binding.params) {
                    for issue in issues {
                        errs.push(
                            ErrorCode::RoleParam,
                            format!("{base}/params/{}", issue.param),
                            issue.message,
                        );
                    }
                }
                if let Some(peer) = binding.params.get("peer").and_then(|p| p.as_str()) {
                    let linked = doc.topology.connections.iter().any(|c| {
                        (c.endpoint_a == binding.node_id && c.endpoint_b == peer)
                            || (c.endpoint_b == binding.node_id && c.endpoint_a == peer)
                    });
                    errs.check(
                        linked,
                        ErrorCode::RoleParam,
                        format!("{base}/params/peer"),
                        format!("no connection between {:?} and {peer:?}", binding.node_id),
                    );
                }
            }
        }
    }

    errs.check(
        (1..=10_000).contains(&doc.run_config.runs),
        ErrorCode::RunConfig,
        "/run_config/runs".into(),
        format!("runs must be in [1, 10000], got {}", doc.run_config.runs),
    );
    if let Some(t) = doc.run_config.max_sim_time {
        errs.check(
            positive(t),
            ErrorCode::RunConfig,
            "/run_config/max_sim_time".into(),
            format!("max_sim_time must be > 0, got {t}"),
        );
    }

    if errs.0.is_empty() {
        Ok(())
    } else {
        Err(errs.0)
    }
}
