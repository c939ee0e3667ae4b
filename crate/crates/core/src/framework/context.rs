use std::cell::RefCell;
use std::collections::BTreeMap;
use std::future::{poll_fn, Future};
use std::rc::Rc;
use std::task::Poll;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::runtime::{Event, MessageRecord, TaskId, WaitKey, World};
use super::{Binding, Params, RoleError};
use crate::network::{self, Connection};
use crate::quantum::{Basis, Gate, NoiseChannel, QubitId};
use crate::rng::RandomStream;

/// What arrives on the quantum side of a link: the qubit, or notice that the
/// photon with this pulse index was lost in the fiber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QubitArrival {
    pub pulse_index: u64,
    pub qubit: Option<QubitId>,
}

#[derive(Default)]
pub(super) struct Sink {
    pub(super) metrics: BTreeMap<String, f64>,
    pub(super) outputs: BTreeMap<String, Value>,
}

/// The only interface a role has to the simulated world.
pub struct RoleContext {
    world: Rc<RefCell<World>>,
    task: TaskId,
    node: usize,
    node_id: String,
    instance_id: String,
    params: Params,
    rng: RandomStream,
    sink: Rc<RefCell<Sink>>,
}

impl RoleContext {
    pub(super) fn new(
        world: Rc<RefCell<World>>,
        task: TaskId,
        node: usize,
        binding: &Binding,
        rng: RandomStream,
        sink: Rc<RefCell<Sink>>,
    ) -> Self {
        Self {
            world,
            task,
            node,
            node_id: binding.node_id.clone(),
            instance_id: binding.instance_id.clone(),
            params: binding.params.clone(),
            rng,
            sink,
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Current simulated time, s.
    pub fn now(&self) -> f64 {
        self.world.borrow().queue.now()
    }

    pub fn rng(&mut self) -> &mut RandomStream {
        &mut self.rng
    }

    /// Nodes directly connected to this one.
    pub fn neighbors(&self) -> Vec<String> {
        let world = self.world.borrow();
        world
            .network
            .neighbors(&self.node_id)
            .into_iter()
            .map(str::to_string)
            .collect()
    }

    /// The `peer` parameter if given, otherwise the single neighbor.
    pub fn peer(&self) -> Result<String, RoleError> {
        if let Some(peer) = self.params.str("peer") {
            return Ok(peer.to_string());
        }
        let mut neighbors = self.neighbors();
        neighbors.dedup();
        match neighbors.len() {
            1 => Ok(neighbors.remove(0)),
            0 => Err(RoleError::Peer {
                node: self.node_id.clone(),
                reason: "node has no connections".into(),
            }),
            n => Err(RoleError::Peer {
                node: self.node_id.clone(),
                reason: format!("{n} connections; set the \"peer\" parameter"),
            }),
        }
    }

    fn link(&self, peer: &str) -> Result<(usize, Connection), RoleError> {
        let world = self.world.borrow();
        let no_link = || RoleError::NoConnection {
            from: self.node_id.clone(),
            to: peer.to_string(),
        };
        let idx = world.network.node_index(peer).ok_or_else(no_link)?;
        let conn = world
            .network
            .connection_between(&self.node_id, peer)
            .ok_or_else(no_link)?
            .clone();
        Ok((idx, conn))
    }

    pub fn send_classical(&self, peer: &str, bytes: Vec<u8>) -> Result<(), RoleError> {
        self.send_classical_disclosing(peer, bytes, 0)
    }

    /// Sends a message that discloses `parities` parity bits; the runtime
    /// records the count in the message trace.
    pub fn send_classical_disclosing(
        &self,
        peer: &str,
        bytes: Vec<u8>,
        parities: u32,
    ) -> Result<(), RoleError> {
        let (to, conn) = self.link(peer)?;
        let mut world = self.world.borrow_mut();
        let now = world.queue.now();
        let record = world.trace.messages.len();
        world.trace.messages.push(MessageRecord {
            from: self.node_id.clone(),
            to: peer.to_string(),
            sender: self.instance_id.clone(),
            sent_at: now,
            delivered_at: None,
            bytes: bytes.len(),
            parities,
        });
        let event = Event::Classical {
            from: self.node,
            to,
            bytes,
            record,
        };
        world
            .queue
            .schedule(conn.classical_latency, event)
            .map_err(|e| RoleError::Protocol(e.to_string()))?;
        Ok(())
    }

    /// Suspends until the next message from `peer` arrives.
    pub async fn receive_classical(&self, peer: &str) -> Result<Vec<u8>, RoleError> {
        let (from, _) = self.link(peer)?;
        let key = WaitKey::Classical {
            from,
            to: self.node,
        };
        poll_fn(|_| {
            let mut world = self.world.borrow_mut();
            match world
                .classical_inbox
                .get_mut(&(from, self.node))
                .and_then(|q| q.pop_front())
            {
                Some(bytes) => {
                    world.stop_waiting(self.task);
                    Poll::Ready(Ok(bytes))
                }
                None => {
                    world.wait_on(self.task, key);
                    Poll::Pending
                }
            }
        })
        .await
    }

    pub fn send_json<T: Serialize>(&self, peer: &str, message: &T) -> Result<(), RoleError> {
        self.send_json_disclosing(peer, message, 0)
    }

    pub fn send_json_disclosing<T: Serialize>(
        &self,
        peer: &str,
        message: &T,
        parities: u32,
    ) -> Result<(), RoleError> {
        let bytes = serde_json::to_vec(message).map_err(|e| RoleError::Protocol(e.to_string()))?;
        self.send_classical_disclosing(peer, bytes, parities)
    }

    pub async fn receive_json<T: DeserializeOwned>(&self, peer: &str) -> Result<T, RoleError> {
        let bytes = self.receive_classical(peer).await?;
        serde_json::from_slice(&bytes).map_err(|e| RoleError::Message {
            peer: peer.to_string(),
            detail: e.to_string(),
        })
    }

    /// Suspends until simulated time `t` (no-op if already reached).
    pub fn wait_until(&self, t: f64) -> impl Future<Output = ()> + '_ {
        let mut scheduled = false;
        poll_fn(move |_| {
            let mut world = self.world.borrow_mut();
            if world.queue.now() >= t {
                return Poll::Ready(());
            }
            if !scheduled {
                world
                    .queue
                    .schedule_at(t, Event::Wake(self.task))
                    .expect("wake time is in the future");
                scheduled = true;
            }
            Poll::Pending
        })
    }

    pub async fn wait(&self, delay: f64) {
        let t = self.now() + delay.max(0.0);
        self.wait_until(t).await;
    }

    pub fn allocate_qubit(&self, bit: u8) -> QubitId {
        self.world.borrow_mut().quantum.allocate(bit)
    }

    /// Emits `|bit>` from this node's source, waiting for the next free
    /// emission slot and applying the source infidelity.
    pub async fn emit_qubit(&mut self, bit: u8) -> Result<QubitId, RoleError> {
        let slot = {
            let mut world = self.world.borrow_mut();
            let now = world.queue.now();
            world.emission[self.node].reserve(now)
        };
        self.wait_until(slot).await;
        let mut world = self.world.borrow_mut();
        let world = &mut *world;
        let node = &world.network.nodes()[self.node];
        Ok(network::emit_qubit(node, bit, &mut world.quantum, &mut self.rng)?)
    }

    /// Reserves the next emission slot and waits for it, without allocating.
    pub async fn await_emission_slot(&self) {
        let slot = {
            let mut world = self.world.borrow_mut();
            let now = world.queue.now();
            world.emission[self.node].reserve(now)
        };
        self.wait_until(slot).await;
    }

    /// Applies this node's source infidelity to `q`.
    pub fn apply_source_noise(&mut self, q: QubitId) -> Result<(), RoleError> {
        let p = {
            let world = self.world.borrow();
            world.network.nodes()[self.node].emission_depolarizing_p()
        };
        self.apply_channel(q, NoiseChannel::Depolarizing { p })?;
        Ok(())
    }

    pub fn apply_gate(&self, gate: Gate, targets: &[QubitId]) -> Result<(), RoleError> {
        Ok(self.world.borrow_mut().quantum.apply_gate(gate, targets)?)
    }

    pub fn apply_channel(&mut self, q: QubitId, channel: NoiseChannel) -> Result<bool, RoleError> {
        Ok(self
            .world
            .borrow_mut()
            .quantum
            .apply_channel(q, channel, &mut self.rng)?)
    }

    pub fn measure(&mut self, q: QubitId, basis: Basis) -> Result<u8, RoleError> {
        Ok(self
            .world
            .borrow_mut()
            .quantum
            .measure(q, basis, &mut self.rng)?)
    }

    pub fn discard(&mut self, q: QubitId) -> Result<(), RoleError> {
        Ok(self.world.borrow_mut().quantum.discard(q, &mut self.rng)?)
    }

    /// Puts `q` on the fiber to `peer`, tagged with `pulse_index`.
    pub fn send_qubit(&mut self, peer: &str, q: QubitId, pulse_index: u64) -> Result<(), RoleError> {
        let (to, conn) = self.link(peer)?;
        let mut world = self.world.borrow_mut();
        let world = &mut *world;
        let from = self.node;
        let transit = network::transmit_qubit(
            &conn,
            &mut world.quantum,
            q,
            &mut self.rng,
            &mut world.queue,
            |qubit| Event::Qubit {
                from,
                to,
                arrival: QubitArrival { pulse_index, qubit },
            },
        )?;
        world.trace.qubits_sent += 1;
        if let network::Transit::Lost { .. } = transit {
            world.trace.qubits_lost += 1;
            world
                .trace
                .lost_pulses
                .push((self.node_id.clone(), peer.to_string(), pulse_index));
        }
        Ok(())
    }

    /// Suspends until the next qubit (or loss notice) from `peer`.
    pub async fn receive_qubit(&self, peer: &str) -> Result<QubitArrival, RoleError> {
        let (from, _) = self.link(peer)?;
        let key = WaitKey::Quantum {
            from,
            to: self.node,
        };
        poll_fn(|_| {
            let mut world = self.world.borrow_mut();
            match world
                .quantum_inbox
                .get_mut(&(from, self.node))
                .and_then(|q| q.pop_front())
            {
                Some(arrival) => {
                    world.stop_waiting(self.task);
                    Poll::Ready(Ok(arrival))
                }
                None => {
                    world.wait_on(self.task, key);
                    Poll::Pending
                }
            }
        })
        .await
    }

    /// Stores `q` in this node's memory; returns the slot.
    pub fn store_qubit(&self, q: QubitId) -> Result<usize, RoleError> {
        let mut world = self.world.borrow_mut();
        if !world.quantum.is_alive(q) {
            return Err(crate::quantum::QuantumError::DeadQubit(q).into());
        }
        let now = world.queue.now();
        Ok(world.memories[self.node].store(q, now)?)
    }

    /// Takes `q` out of memory, applying decoherence for the storage time.
    pub fn retrieve_qubit(&mut self, q: QubitId) -> Result<QubitId, RoleError> {
        let mut world = self.world.borrow_mut();
        let world = &mut *world;
        let now = world.queue.now();
        Ok(world.memories[self.node].retrieve(q, now, &mut world.quantum, &mut self.rng)?)
    }

    pub fn memory_occupancy(&self) -> usize {
        self.world.borrow().memories[self.node].occupancy()
    }

    pub fn blackboard_get(&self, key: &str) -> Option<Value> {
        self.world.borrow().blackboards[self.node].get(key).cloned()
    }

    pub fn blackboard_put(&self, key: &str, value: Value) {
        self.world.borrow_mut().blackboards[self.node].insert(key.to_string(), value);
    }

    pub fn metric(&self, name: &str, value: f64) {
        self.sink.borrow_mut().metrics.insert(name.to_string(), value);
    }

    pub fn output(&self, name: &str, value: Value) {
        self.sink.borrow_mut().outputs.insert(name.to_string(), value);
    }
}
