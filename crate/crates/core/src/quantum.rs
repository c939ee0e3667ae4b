//! Pure-state trajectory simulation of qubits.
//!
//! Qubits start in singleton entanglement groups. Multi-qubit gates merge the
//! groups of their targets; measurement, loss and discard remove a qubit from
//! its group. Noise channels are realised by sampling a single Kraus branch
//! per application, so statistics are recovered over many seeded shots.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomStream;

/// Largest number of qubits a single entanglement group may hold.
pub const MAX_GROUP_SIZE: usize = 16;

/// Amplitude-norm tolerance checked by [`QuantumState::check_invariants`].
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Opaque qubit handle. Ids are never reused within one [`QuantumState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QubitId(u64);

impl QubitId {
    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for QubitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    H,
    X,
    Y,
    Z,
    S,
    Cnot,
    Cz,
}

impl Gate {
    pub fn arity(self) -> usize {
        match self {
            Gate::Cnot | Gate::Cz => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Basis::Z
        } else {
            Basis::X
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Basis::Z => 'Z',
            Basis::X => 'X',
        }
    }
}

/// Single-qubit noise channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseChannel {
    /// Identity with probability `1 - p`; X, Y, Z each with probability `p / 3`.
    Depolarizing { p: f64 },
    /// Z with probability `p / 2`.
    Dephasing { p: f64 },
    /// K0 = diag(1, sqrt(1 - gamma)), K1 = sqrt(gamma) |0><1|.
    AmplitudeDamping { gamma: f64 },
    /// Qubit destroyed with probability `p_loss`.
    Loss { p_loss: f64 },
}

impl NoiseChannel {
    fn probability(&self) -> f64 {
        match *self {
            NoiseChannel::Depolarizing { p } | NoiseChannel::Dephasing { p } => p,
            NoiseChannel::AmplitudeDamping { gamma } => gamma,
            NoiseChannel::Loss { p_loss } => p_loss,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseChannel::Depolarizing { .. } => "depolarizing",
            NoiseChannel::Dephasing { .. } => "dephasing",
            NoiseChannel::AmplitudeDamping { .. } => "amplitude_damping",
            NoiseChannel::Loss { .. } => "loss",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("qubit {0} is not alive")]
    DeadQubit(QubitId),
    #[error("gate {gate:?} expects {expected} target(s), got {got}")]
    Arity {
        gate: Gate,
        expected: usize,
        got: usize,
    },
    #[error("gate targets must be distinct")]
    RepeatedTarget,
    #[error("entanglement group would hold {size} qubits (limit {MAX_GROUP_SIZE})")]
    GroupTooLarge { size: usize },
    #[error("channel probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

#[derive(Clone, Debug)]
struct Group {
    members: Vec<QubitId>,
    amplitudes: Vec<Complex64>,
}

impl Group {
    fn position(&self, q: QubitId) -> usize {
        self.members
            .iter()
            .position(|m| *m == q)
            .expect("qubit indexed to a group that does not hold it")
    }

    fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn renormalize(&mut self) {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            for a in &mut self.amplitudes {
                *a /= norm;
            }
        }
    }

    /// Probability that the qubit at bit `pos` reads 1.
    fn prob_one(&self, pos: usize) -> f64 {
        let mask = 1usize << pos;
        self.amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    fn apply_single(&mut self, pos: usize, m: [[Complex64; 2]; 2]) {
        let mask = 1usize << pos;
        for i in 0..self.amplitudes.len() {
            if i & mask == 0 {
                let j = i | mask;
                let (a, b) = (self.amplitudes[i], self.amplitudes[j]);
                self.amplitudes[i] = m[0][0] * a + m[0][1] * b;
                self.amplitudes[j] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    /// Projects the qubit at `pos` onto `outcome` and removes it from the group.
    fn project_out(&mut self, pos: usize, outcome: u8) {
        let low = (1usize << pos) - 1;
        let keep = usize::from(outcome) << pos;
        let mask = 1usize << pos;
        let half = self.amplitudes.len() / 2;
        let mut reduced = vec![Complex64::new(0.0, 0.0); half];
        for (i, amp) in self.amplitudes.iter().enumerate() {
            if i & mask == keep {
                let idx = (i & low) | ((i >> (pos + 1)) << pos);
                reduced[idx] = *amp;
            }
        }
        self.amplitudes = reduced;
        self.members.remove(pos);
        self.renormalize();
    }
}

fn pauli(gate: Gate) -> [[Complex64; 2]; 2] {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    match gate {
        Gate::H => [[h, h], [h, -h]],
        Gate::X => [[o, l], [l, o]],
        Gate::Y => [[o, -i], [i, o]],
        Gate::Z => [[l, o], [o, -l]],
        Gate::S => [[l, o], [o, i]],
        Gate::Cnot | Gate::Cz => unreachable!("two-qubit gate has no 2x2 matrix"),
    }
}

/// All qubits of one simulation run.
#[derive(Clone, Debug, Default)]
pub struct QuantumState {
    groups: BTreeMap<u64, Group>,
    owner: HashMap<QubitId, u64>,
    next_qubit: u64,
    next_group: u64,
}

impl QuantumState {
    pub fn new() -> Self {
        Self::default()
    }

    /// New qubit in `|bit>` as a singleton group.
    pub fn allocate(&mut self, bit: u8) -> QubitId {
        let id = QubitId(self.next_qubit);
        self.next_qubit += 1;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 2];
        amplitudes[usize::from(bit & 1)] = Complex64::new(1.0, 0.0);
        let gid = self.next_group;
        self.next_group += 1;
        self.groups.insert(
            gid,
            Group {
                members: vec![id],
                amplitudes,
            },
        );
        self.owner.insert(id, gid);
        id
    }

    pub fn is_alive(&self, q: QubitId) -> bool {
        self.owner.contains_key(&q)
    }

    pub fn alive_count(&self) -> usize {
        self.owner.len()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Size of the entanglement group holding `q`.
    pub fn group_size(&self, q: QubitId) -> Result<usize, QuantumError> {
        let gid = self.group_of(q)?;
        Ok(self.groups[&gid].members.len())
    }

    /// Members of the group holding `q`, in bit order.
    pub fn group_members(&self, q: QubitId) -> Result<Vec<QubitId>, QuantumError> {
        let gid = self.group_of(q)?;
        Ok(self.groups[&gid].members.clone())
    }

    /// Born probability of reading 1 in the Z basis, without disturbing the state.
    pub fn probability_one(&self, q: QubitId) -> Result<f64, QuantumError> {
        let gid = self.group_of(q)?;
        let group = &self.groups[&gid];
        Ok(group.prob_one(group.position(q)))
    }

    fn group_of(&self, q: QubitId) -> Result<u64, QuantumError> {
        self.owner.get(&q).copied().ok_or(QuantumError::DeadQubit(q))
    }

    /// Merges the groups of `a` and `b`; returns the surviving group id.
    fn merge(&mut self, a: u64, b: u64) -> Result<u64, QuantumError> {
        if a == b {
            return Ok(a);
        }
        let size = self.groups[&a].members.len() + self.groups[&b].members.len();
        if size > MAX_GROUP_SIZE {
            return Err(QuantumError::GroupTooLarge { size });
        }
        let second = self.groups.remove(&b).expect("group exists");
        let first = self.groups.get_mut(&a).expect("group exists");
        let n1 = first.members.len();
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << size];
        for (j, bj) in second.amplitudes.iter().enumerate() {
            if bj.norm_sqr() == 0.0 {
                continue;
            }
            for (i, ai) in first.amplitudes.iter().enumerate() {
                amplitudes[i | (j << n1)] = ai * bj;
            }
        }
        first.amplitudes = amplitudes;
        for m in &second.members {
            self.owner.insert(*m, a);
        }
        first.members.extend(second.members);
        Ok(a)
    }

    pub fn apply_gate(&mut self, gate: Gate, targets: &[QubitId]) -> Result<(), QuantumError> {
        if targets.len() != gate.arity() {
            return Err(QuantumError::Arity {
                gate,
                expected: gate.arity(),
                got: targets.len(),
            });
        }
        for t in targets {
            self.group_of(*t)?;
        }
        match gate {
            Gate::Cnot | Gate::Cz => {
                let (a, b) = (targets[0], targets[1]);
                if a == b {
                    return Err(QuantumError::RepeatedTarget);
                }
                let gid = self.merge(self.group_of(a)?, self.group_of(b)?)?;
                let group = self.groups.get_mut(&gid).expect("group exists");
                let ca = 1usize << group.position(a);
                let tb = 1usize << group.position(b);
                for i in 0..group.amplitudes.len() {
                    if gate == Gate::Cnot {
                        if i & ca != 0 && i & tb == 0 {
                            group.amplitudes.swap(i, i | tb);
                        }
                    } else if i & ca != 0 && i & tb != 0 {
                        group.amplitudes[i] = -group.amplitudes[i];
                    }
                }
            }
            _ => {
                let q = targets[0];
                let gid = self.group_of(q)?;
                let group = self.groups.get_mut(&gid).expect("group exists");
                let pos = group.position(q);
                group.apply_single(pos, pauli(gate));
            }
        }
        Ok(())
    }

    /// Measures and consumes `q`.
    pub fn measure(
        &mut self,
        q: QubitId,
        basis: Basis,
        rng: &mut RandomStream,
    ) -> Result<u8, QuantumError> {
        self.group_of(q)?;
        if basis == Basis::X {
            self.apply_gate(Gate::H, &[q])?;
        }
        Ok(self.measure_z_and_remove(q, rng))
    }

    fn measure_z_and_remove(&mut self, q: QubitId, rng: &mut RandomStream) -> u8 {
        let gid = self.owner.remove(&q).expect("alive qubit");
        let group = self.groups.get_mut(&gid).expect("group exists");
        let pos = group.position(q);
        let p1 = group.prob_one(pos);
        let outcome = u8::from(rng.bernoulli(p1));
        group.project_out(pos, outcome);
        if group.members.is_empty() {
            self.groups.remove(&gid);
        }
        outcome
    }

    /// Traces `q` out of its group; the handle becomes dead.
    pub fn discard(&mut self, q: QubitId, rng: &mut RandomStream) -> Result<(), QuantumError> {
        self.group_of(q)?;
        self.measure_z_and_remove(q, rng);
        Ok(())
    }

    /// Applies `channel` by sampling one Kraus branch. Returns whether the qubit survives.
    pub fn apply_channel(
        &mut self,
        q: QubitId,
        channel: NoiseChannel,
        rng: &mut RandomStream,
    ) -> Result<bool, QuantumError> {
        let p = channel.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(QuantumError::InvalidProbability(p));
        }
        let gid = self.group_of(q)?;
        match channel {
            NoiseChannel::Depolarizing { p } => {
                let r = rng.uniform();
                let pauli_gate = if r < p / 3.0 {
                    Some(Gate::X)
                } else if r < 2.0 * p / 3.0 {
                    Some(Gate::Y)
                } else if r < p {
                    Some(Gate::Z)
                } else {
                    None
                };
                if let Some(g) = pauli_gate {
                    self.apply_gate(g, &[q])?;
                }
            }
            NoiseChannel::Dephasing { p } => {
                if rng.bernoulli(p / 2.0) {
                    self.apply_gate(Gate::Z, &[q])?;
                }
            }
            NoiseChannel::AmplitudeDamping { gamma } => {
                let group = self.groups.get_mut(&gid).expect("group exists");
                let pos = group.position(q);
                let jump = gamma * group.prob_one(pos);
                let mask = 1usize << pos;
                if rng.bernoulli(jump) {
                    for i in 0..group.amplitudes.len() {
                        if i & mask == 0 {
                            group.amplitudes[i] = group.amplitudes[i | mask];
                            group.amplitudes[i | mask] = Complex64::new(0.0, 0.0);
                        }
                    }
                } else {
                    let keep = (1.0 - gamma).sqrt();
                    for (i, a) in group.amplitudes.iter_mut().enumerate() {
                        if i & mask != 0 {
                            *a *= keep;
                        }
                    }
                }
                group.renormalize();
            }
            NoiseChannel::Loss { p_loss } => {
                if rng.bernoulli(p_loss) {
                    self.discard(q, rng)?;
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// Checks norm and partition invariants; returns a description of each violation.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = 0usize;
        for (gid, group) in &self.groups {
            let norm = group.norm_sqr();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                problems.push(format!("group {gid} has norm {norm}"));
            }
            if group.members.is_empty() || group.members.len() > MAX_GROUP_SIZE {
                problems.push(format!("group {gid} has {} members", group.members.len()));
            }
            if group.amplitudes.len() != 1 << group.members.len() {
                problems.push(format!("group {gid} amplitude length mismatch"));
            }
            for m in &group.members {
                seen += 1;
                if self.owner.get(m) != Some(gid) {
                    problems.push(format!("{m} not indexed to group {gid}"));
                }
            }
        }
        if seen != self.owner.len() {
            problems.push(format!(
                "{} qubits in groups but {} alive",
                seen,
                self.owner.len()
            ));
        }
        problems
    }
}
