use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::context::{QubitArrival, RoleContext, Sink};
use super::{GroupPlan, RoleExit, RoleFuture, RoleRegistry, RoleResult, RoleStatus};
use crate::des::EventQueue;
use crate::network::{EmissionClock, Network, QuantumMemory};
use crate::quantum::QuantumState;
use crate::rng::{stream_key, RandomStream};

pub(super) type TaskId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(super) enum WaitKey {
    Classical { from: usize, to: usize },
    Quantum { from: usize, to: usize },
}

pub(super) enum Event {
    Wake(TaskId),
    Classical {
        from: usize,
        to: usize,
        bytes: Vec<u8>,
        record: usize,
    },
    Qubit {
        from: usize,
        to: usize,
        arrival: QubitArrival,
    },
}

/// One classical message, as recorded by the runtime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub from: String,
    pub to: String,
    pub sender: String,
    pub sent_at: f64,
    pub delivered_at: Option<f64>,
    pub bytes: usize,
    /// Parity bits disclosed by this message.
    pub parities: u32,
}

/// Everything the runtime observed that roles do not report themselves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub messages: Vec<MessageRecord>,
    pub qubits_sent: u64,
    pub qubits_lost: u64,
    /// `(sender node, receiver node, pulse index)` of every photon lost in fiber.
    pub lost_pulses: Vec<(String, String, u64)>,
}

impl Trace {
    /// Total parity bits disclosed on classical channels.
    pub fn disclosed_parities(&self) -> u64 {
        self.messages.iter().map(|m| u64::from(m.parities)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub group: usize,
    pub stage: usize,
    pub started_at: f64,
    pub finished_at: f64,
    /// Instance ids in the order their roles terminated.
    pub completion_order: Vec<String>,
}

/// Result of executing a list of protocol groups once.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub results: Vec<RoleResult>,
    pub stages: Vec<StageRecord>,
    pub end_time: f64,
    pub events_dispatched: u64,
    /// Run-level failure (deadlock, time limit), if any.
    pub error: Option<String>,
    pub trace: Trace,
    pub blackboards: BTreeMap<String, BTreeMap<String, Value>>,
}

/// Mutable state of one run, shared by the runtime loop and role contexts.
pub(super) struct World {
    pub(super) queue: EventQueue<Event>,
    pub(super) quantum: QuantumState,
    pub(super) network: Rc<Network>,
    pub(super) classical_inbox: HashMap<(usize, usize), VecDeque<Vec<u8>>>,
    pub(super) quantum_inbox: HashMap<(usize, usize), VecDeque<QubitArrival>>,
    pub(super) waiters: HashMap<WaitKey, VecDeque<TaskId>>,
    pub(super) blocked_on: HashMap<TaskId, WaitKey>,
    pub(super) blackboards: Vec<BTreeMap<String, Value>>,
    pub(super) memories: Vec<QuantumMemory>,
    pub(super) emission: Vec<EmissionClock>,
    pub(super) trace: Trace,
}

impl World {
    pub(super) fn wait_on(&mut self, task: TaskId, key: WaitKey) {
        if self.blocked_on.insert(task, key) != Some(key) {
            self.waiters.entry(key).or_default().push_back(task);
        }
    }

    pub(super) fn stop_waiting(&mut self, task: TaskId) {
        if let Some(key) = self.blocked_on.remove(&task) {
            if let Some(q) = self.waiters.get_mut(&key) {
                q.retain(|t| *t != task);
            }
        }
    }

    fn first_waiter(&self, key: WaitKey) -> Option<TaskId> {
        self.waiters.get(&key).and_then(|q| q.front().copied())
    }
}

struct Task {
    future: Option<RoleFuture>,
    sink: Rc<RefCell<Sink>>,
    result_slot: usize,
}

/// Builder for a single simulation run.
pub struct Simulation<'r> {
    registry: &'r RoleRegistry,
    network: Network,
    seed: u64,
    max_sim_time: Option<f64>,
    preset: Vec<(String, String, Value)>,
}

impl<'r> Simulation<'r> {
    pub fn new(registry: &'r RoleRegistry, network: Network, seed: u64) -> Self {
        Self {
            registry,
            network,
            seed,
            max_sim_time: None,
            preset: Vec::new(),
        }
    }

    /// Events later than `limit` seconds are never dispatched.
    pub fn with_max_sim_time(mut self, limit: Option<f64>) -> Self {
        self.max_sim_time = limit;
        self
    }

    /// Seeds a node blackboard entry before the first group runs.
    pub fn with_blackboard(mut self, node: &str, key: &str, value: Value) -> Self {
        self.preset.push((node.to_string(), key.to_string(), value));
        self
    }

    pub fn run(self, groups: &[GroupPlan]) -> RunOutcome {
        Runner::new(self).run(groups)
    }
}

/// Runs `groups` on `network` with the given seed.
pub fn run_groups(
    groups: &[GroupPlan],
    network: Network,
    registry: &RoleRegistry,
    seed: u64,
) -> RunOutcome {
    Simulation::new(registry, network, seed).run(groups)
}

struct Runner<'r> {
    registry: &'r RoleRegistry,
    seed: u64,
    limit: f64,
    world: Rc<RefCell<World>>,
    tasks: Vec<Task>,
    results: Vec<RoleResult>,
    events: u64,
    housekeeping: RandomStream,
}

impl<'r> Runner<'r> {
    fn new(sim: Simulation<'r>) -> Self {
        let network = Rc::new(sim.network);
        let mut blackboards = vec![BTreeMap::new(); network.nodes().len()];
        for (node, key, value) in sim.preset {
            if let Some(i) = network.node_index(&node) {
                blackboards[i].insert(key, value);
            }
        }
        let world = World {
            queue: EventQueue::new(),
            quantum: QuantumState::new(),
            memories: network.nodes().iter().map(QuantumMemory::new).collect(),
            emission: network
                .nodes()
                .iter()
                .map(|n| EmissionClock::new(n.emission_frequency))
                .collect(),
            network,
            classical_inbox: HashMap::new(),
            quantum_inbox: HashMap::new(),
            waiters: HashMap::new(),
            blocked_on: HashMap::new(),
            blackboards,
            trace: Trace::default(),
        };
        Self {
            registry: sim.registry,
            seed: sim.seed,
            limit: sim.max_sim_time.unwrap_or(f64::INFINITY),
            world: Rc::new(RefCell::new(world)),
            tasks: Vec::new(),
            results: Vec::new(),
            events: 0,
            housekeeping: RandomStream::substream(sim.seed, stream_key("runtime")),
        }
    }

    fn now(&self) -> f64 {
        self.world.borrow().queue.now()
    }

    fn run(mut self, groups: &[GroupPlan]) -> RunOutcome {
        let mut stages = Vec::new();
        let mut errors = Vec::new();
        for (g, group) in groups.iter().enumerate() {
            for (s, stage) in group.stages.iter().enumerate() {
                let (record, error) = self.run_stage(g, s, stage);
                stages.push(record);
                errors.extend(error);
            }
        }
        let world = Rc::try_unwrap(self.world)
            .ok()
            .expect("role contexts dropped with their tasks")
            .into_inner();
        let blackboards = world
            .network
            .nodes()
            .iter()
            .zip(world.blackboards)
            .map(|(n, b)| (n.id.clone(), b))
            .collect();
        RunOutcome {
            results: self.results,
            stages,
            end_time: world.queue.now(),
            events_dispatched: self.events,
            error: if errors.is_empty() {
                None
            } else {
                Some(errors.join("; "))
            },
            trace: world.trace,
            blackboards,
        }
    }

    fn run_stage(
        &mut self,
        group: usize,
        stage: usize,
        bindings: &[super::Binding],
    ) -> (StageRecord, Option<String>) {
        let started_at = self.now();
        let first_task = self.tasks.len();
        let mut completion_order = Vec::new();

        for binding in bindings {
            let result_slot = self.results.len();
            self.results.push(RoleResult {
                instance_id: binding.instance_id.clone(),
                role: binding.role.clone(),
                node_id: binding.node_id.clone(),
                group,
                stage,
                status: RoleStatus::Failed,
                started_at,
                finished_at: started_at,
                metrics: BTreeMap::new(),
                outputs: BTreeMap::new(),
                error: None,
            });
            let node = self.world.borrow().network.node_index(&binding.node_id);
            let (Some(spec), Some(node)) = (self.registry.get(&binding.role), node) else {
                self.results[result_slot].error =
                    Some(format!("cannot bind role {:?} to node {:?}", binding.role, binding.node_id));
                completion_order.push(binding.instance_id.clone());
                continue;
            };
            let sink = Rc::new(RefCell::new(Sink::default()));
            let ctx = RoleContext::new(
                Rc::clone(&self.world),
                self.tasks.len(),
                node,
                binding,
                RandomStream::substream(self.seed, binding.rng_key),
                Rc::clone(&sink),
            );
            self.tasks.push(Task {
                future: Some((spec.factory)(ctx)),
                sink,
                result_slot,
            });
        }

        for task in first_task..self.tasks.len() {
            self.poll_task(task, &mut completion_order);
        }

        let mut error = None;
        while self.tasks[first_task..].iter().any(|t| t.future.is_some()) {
            let event = self.world.borrow_mut().queue.pop_until(self.limit);
            let Some(event) = event else {
                error = Some(self.fail_blocked(first_task, &mut completion_order));
                break;
            };
            self.events += 1;
            self.dispatch(event.payload, &mut completion_order);
        }

        self.cleanup_stage();
        let finished_at = self.now();
        (
            StageRecord {
                group,
                stage,
                started_at,
                finished_at,
                completion_order,
            },
            error,
        )
    }

    fn dispatch(&mut self, event: Event, completion_order: &mut Vec<String>) {
        let woken = {
            let mut world = self.world.borrow_mut();
            match event {
                Event::Wake(task) => Some(task),
                Event::Classical {
                    from,
                    to,
                    bytes,
                    record,
                } => {
                    let now = world.queue.now();
                    world.trace.messages[record].delivered_at = Some(now);
                    world
                        .classical_inbox
                        .entry((from, to))
                        .or_default()
                        .push_back(bytes);
                    world.first_waiter(WaitKey::Classical { from, to })
                }
                Event::Qubit { from, to, arrival } => {
                    world
                        .quantum_inbox
                        .entry((from, to))
                        .or_default()
                        .push_back(arrival);
                    world.first_waiter(WaitKey::Quantum { from, to })
                }
            }
        };
        if let Some(task) = woken {
            self.poll_task(task, completion_order);
        }
    }

    fn poll_task(&mut self, task: TaskId, completion_order: &mut Vec<String>) {
        let Some(mut future) = self.tasks[task].future.take() else {
            return;
        };
        let mut cx = Context::from_waker(Waker::noop());
        match future.as_mut().poll(&mut cx) {
            Poll::Pending => self.tasks[task].future = Some(future),
            Poll::Ready(outcome) => {
                drop(future);
                self.world.borrow_mut().stop_waiting(task);
                let now = self.now();
                let (status, error) = match outcome {
                    Ok(RoleExit::Completed) => (RoleStatus::Completed, None),
                    Ok(RoleExit::Aborted(reason)) => (RoleStatus::Aborted, Some(reason)),
                    Err(e) => (RoleStatus::Failed, Some(e.to_string())),
                };
                self.finish(task, status, error, now, completion_order);
            }
        }
    }

    fn finish(
        &mut self,
        task: TaskId,
        status: RoleStatus,
        error: Option<String>,
        now: f64,
        completion_order: &mut Vec<String>,
    ) {
        let sink = self.tasks[task].sink.take();
        let result = &mut self.results[self.tasks[task].result_slot];
        result.status = status;
        result.error = error;
        result.finished_at = now;
        result.metrics = sink.metrics;
        result.outputs = sink.outputs;
        completion_order.push(result.instance_id.clone());
    }

    /// Fails every unfinished role of the stage; returns the run-level report.
    fn fail_blocked(&mut self, first_task: usize, completion_order: &mut Vec<String>) -> String {
        let now = self.now();
        let exhausted = self.world.borrow().queue.is_empty();
        let mut blocked = Vec::new();
        for task in first_task..self.tasks.len() {
            if self.tasks[task].future.take().is_none() {
                continue;
            }
            let waiting = {
                let world = self.world.borrow();
                world.blocked_on.get(&task).map(|key| {
                    let (kind, from) = match *key {
                        WaitKey::Classical { from, .. } => ("classical message", from),
                        WaitKey::Quantum { from, .. } => ("qubit", from),
                    };
                    format!("{kind} from {}", world.network.nodes()[from].id)
                })
            };
            self.world.borrow_mut().stop_waiting(task);
            let instance = self.results[self.tasks[task].result_slot].instance_id.clone();
            let detail = if exhausted {
                format!(
                    "blocked waiting for {}",
                    waiting.unwrap_or_else(|| "an event".into())
                )
            } else {
                format!("simulated time limit {} s reached", self.limit)
            };
            blocked.push(format!("{instance} ({detail})"));
            self.finish(task, RoleStatus::Failed, Some(detail), now, completion_order);
        }
        if exhausted {
            format!("deadlock: blocked roles [{}]", blocked.join(", "))
        } else {
            format!("time limit reached: unfinished roles [{}]", blocked.join(", "))
        }
    }

    /// Drops in-flight traffic and frees qubits left behind by the stage.
    fn cleanup_stage(&mut self) {
        let mut world = self.world.borrow_mut();
        let mut orphans = Vec::new();
        for event in world.queue.drain() {
            if let Event::Qubit {
                arrival: QubitArrival {
                    qubit: Some(q), ..
                },
                ..
            } = event
            {
                orphans.push(q);
            }
        }
        for (_, inbox) in world.quantum_inbox.drain() {
            orphans.extend(inbox.into_iter().filter_map(|a| a.qubit));
        }
        world.classical_inbox.clear();
        world.waiters.clear();
        world.blocked_on.clear();
        for memory in &mut world.memories {
            orphans.extend(memory.drain());
        }
        for q in orphans {
            // Already-consumed handles are ignored.
            let _ = world.quantum.discard(q, &mut self.housekeeping);
        }
    }
}
