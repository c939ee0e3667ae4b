//! Topology, fiber physics and quantum memories.
//!
//! All quantities here are already resolved: defaults filled and units
//! converted to seconds, Hz, km and dB/km. The document compiler produces
//! these types; nothing in this module reads documents.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::des::{EventQueue, ScheduleError};
use crate::quantum::{NoiseChannel, QuantumError, QuantumState, QubitId};
use crate::rng::RandomStream;

/// Signal speed in fiber, m/s (refractive index about 1.5).
pub const FIBER_SIGNAL_SPEED: f64 = 2.0e8;

pub const DEFAULT_ATTENUATION_DB_PER_KM: f64 = 0.2;
pub const DEFAULT_NOISE_P: f64 = 0.0;
pub const DEFAULT_MEMORY_SLOTS: u32 = 8;
pub const DEFAULT_T1: f64 = 1.0;
pub const DEFAULT_T2: f64 = 1.0;
pub const DEFAULT_SOURCE_FIDELITY: f64 = 1.0;
pub const DEFAULT_EMISSION_FREQUENCY: f64 = 1.0e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub label: String,
    pub memory_slots: u32,
    /// Energy relaxation time, s.
    pub t1: f64,
    /// Dephasing time, s.
    pub t2: f64,
    pub source_fidelity: f64,
    /// Hz.
    pub emission_frequency: f64,
}

impl Node {
    /// Depolarizing probability that makes the emitted state's expected
    /// fidelity equal `source_fidelity`.
    pub fn emission_depolarizing_p(&self) -> f64 {
        (1.5 * (1.0 - self.source_fidelity)).clamp(0.0, 1.0)
    }

    pub fn emission_period(&self) -> f64 {
        1.0 / self.emission_frequency
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub id: String,
    pub endpoint_a: String,
    pub endpoint_b: String,
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Depolarizing probability applied once per transit.
    pub noise_depolarizing_p: f64,
    /// One-way classical delay, s.
    pub classical_latency: f64,
}

impl Connection {
    pub fn connects(&self, a: &str, b: &str) -> bool {
        (self.endpoint_a == a && self.endpoint_b == b) || (self.endpoint_a == b && self.endpoint_b == a)
    }

    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.endpoint_a == node {
            Some(&self.endpoint_b)
        } else if self.endpoint_b == node {
            Some(&self.endpoint_a)
        } else {
            None
        }
    }
}

/// Probability a photon survives the fiber: `10^(-alpha * L / 10)`.
pub fn survival_probability(c: &Connection) -> f64 {
    10f64.powf(-c.attenuation_db_per_km * c.length_km / 10.0)
}

/// One-way time of flight, s.
pub fn propagation_delay(c: &Connection) -> f64 {
    propagation_delay_km(c.length_km)
}

pub fn propagation_delay_km(length_km: f64) -> f64 {
    length_km * 1000.0 / FIBER_SIGNAL_SPEED
}

/// Result of pushing a qubit into a fiber.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transit {
    /// Delivery scheduled; carries the event sequence and arrival time.
    Delivered { sequence: u64, arrival: f64 },
    /// The photon was absorbed; a notification is still scheduled at `arrival`.
    Lost { sequence: u64, arrival: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("memory of node {node} is full ({capacity} slots)")]
    MemoryFull { node: String, capacity: u32 },
    #[error("qubit {qubit} is not stored in the memory of node {node}")]
    NotStored { node: String, qubit: QubitId },
}

/// Sends `q` through `c`.
///
/// With probability `1 - survival_probability` the qubit is destroyed;
/// otherwise transit depolarizing noise is applied. Either way an event built
/// by `payload` (with `Some(q)` on delivery, `None` on loss) is scheduled
/// after the propagation delay.
pub fn transmit_qubit<T>(
    c: &Connection,
    state: &mut QuantumState,
    q: QubitId,
    rng: &mut RandomStream,
    queue: &mut EventQueue<T>,
    payload: impl FnOnce(Option<QubitId>) -> T,
) -> Result<Transit, NetworkError> {
    if !state.is_alive(q) {
        return Err(QuantumError::DeadQubit(q).into());
    }
    let p_loss = 1.0 - survival_probability(c);
    let alive = state.apply_channel(q, NoiseChannel::Loss { p_loss }, rng)?;
    let delay = propagation_delay(c);
    if !alive {
        let sequence = queue.schedule(delay, payload(None))?;
        return Ok(Transit::Lost {
            sequence,
            arrival: queue.now() + delay,
        });
    }
    state.apply_channel(
        q,
        NoiseChannel::Depolarizing {
            p: c.noise_depolarizing_p,
        },
        rng,
    )?;
    let sequence = queue.schedule(delay, payload(Some(q)))?;
    Ok(Transit::Delivered {
        sequence,
        arrival: queue.now() + delay,
    })
}

/// Allocates `|bit>` and applies the node's source infidelity.
pub fn emit_qubit(
    node: &Node,
    bit: u8,
    state: &mut QuantumState,
    rng: &mut RandomStream,
) -> Result<QubitId, QuantumError> {
    let q = state.allocate(bit);
    state.apply_channel(
        q,
        NoiseChannel::Depolarizing {
            p: node.emission_depolarizing_p(),
        },
        rng,
    )?;
    Ok(q)
}

/// Enforces the minimum spacing between emissions from one source.
#[derive(Clone, Debug)]
pub struct EmissionClock {
    period: f64,
    next_free: f64,
}

impl EmissionClock {
    pub fn new(frequency: f64) -> Self {
        Self {
            period: 1.0 / frequency,
            next_free: 0.0,
        }
    }

    /// Reserves the earliest emission slot at or after `now`.
    pub fn reserve(&mut self, now: f64) -> f64 {
        let slot = now.max(self.next_free);
        self.next_free = slot + self.period;
        slot
    }
}

/// Fixed-capacity qubit store of one node.
#[derive(Clone, Debug)]
pub struct QuantumMemory {
    owner: String,
    capacity: u32,
    t1: f64,
    t2: f64,
    slots: Vec<Option<(QubitId, f64)>>,
}

impl QuantumMemory {
    pub fn new(node: &Node) -> Self {
        Self {
            owner: node.id.clone(),
            capacity: node.memory_slots,
            t1: node.t1,
            t2: node.t2,
            slots: vec![None; node.memory_slots as usize],
        }
    }

    pub fn occupancy(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Stores `q` at time `now`; returns the slot index.
    pub fn store(&mut self, q: QubitId, now: f64) -> Result<usize, NetworkError> {
        let slot = self
            .slots
            .iter()
            .position(Option::is_none)
            .ok_or_else(|| NetworkError::MemoryFull {
                node: self.owner.clone(),
                capacity: self.capacity,
            })?;
        self.slots[slot] = Some((q, now));
        Ok(slot)
    }

    pub fn contains(&self, q: QubitId) -> bool {
        self.slots.iter().flatten().any(|(s, _)| *s == q)
    }

    /// Removes `q`, applying amplitude damping and dephasing for the time it was held.
    pub fn retrieve(
        &mut self,
        q: QubitId,
        now: f64,
        state: &mut QuantumState,
        rng: &mut RandomStream,
    ) -> Result<QubitId, NetworkError> {
        let slot = self
            .slots
            .iter()
            .position(|s| matches!(s, Some((held, _)) if *held == q))
            .ok_or_else(|| NetworkError::NotStored {
                node: self.owner.clone(),
                qubit: q,
            })?;
        let (_, stored_at) = self.slots[slot].take().expect("slot occupied");
        let held_for = (now - stored_at).max(0.0);
        let gamma = 1.0 - (-held_for / self.t1).exp();
        let p = 1.0 - (-held_for / self.t2).exp();
        state.apply_channel(q, NoiseChannel::AmplitudeDamping { gamma }, rng)?;
        state.apply_channel(q, NoiseChannel::Dephasing { p }, rng)?;
        Ok(q)
    }

    /// Removes every stored qubit without applying noise.
    pub fn drain(&mut self) -> Vec<QubitId> {
        self.slots
            .iter_mut()
            .filter_map(|s| s.take().map(|(q, _)| q))
            .collect()
    }
}

/// Resolved topology with lookup helpers.
#[derive(Clone, Debug)]
pub struct Network {
    nodes: Vec<Node>,
    connections: Vec<Connection>,
    node_index: HashMap<String, usize>,
}

impl Network {
    pub fn new(nodes: Vec<Node>, connections: Vec<Connection>) -> Self {
        let node_index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        Self {
            nodes,
            connections,
            node_index,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.node_index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    /// First connection joining `a` and `b`, in document order.
    pub fn connection_between(&self, a: &str, b: &str) -> Option<&Connection> {
        self.connections.iter().find(|c| c.connects(a, b))
    }

    /// Nodes adjacent to `node`, in connection order.
    pub fn neighbors(&self, node: &str) -> Vec<&str> {
        self.connections
            .iter()
            .filter_map(|c| c.other_end(node))
            .collect()
    }
}
