use proptest::prelude::*;
use qndk_core::network::{Node, QuantumMemory};
use qndk_core::quantum::{
    Basis, Gate, NoiseChannel, QuantumError, QuantumState, QubitId, MAX_GROUP_SIZE,
};
use qndk_core::rng::RandomStream;

#[derive(Clone, Debug)]
enum Op {
    Gate1(Gate, usize),
    Gate2(Gate, usize, usize),
    Channel(NoiseChannel, usize),
    Measure(usize, bool),
}

fn op(width: usize) -> impl Strategy<Value = Op> {
    let one = prop_oneof![
        Just(Gate::H),
        Just(Gate::X),
        Just(Gate::Y),
        Just(Gate::Z),
        Just(Gate::S)
    ];
    let two = prop_oneof![Just(Gate::Cnot), Just(Gate::Cz)];
    let channel = prop_oneof![
        (0.0f64..=1.0).prop_map(|p| NoiseChannel::Depolarizing { p }),
        (0.0f64..=1.0).prop_map(|p| NoiseChannel::Dephasing { p }),
        (0.0f64..=1.0).prop_map(|gamma| NoiseChannel::AmplitudeDamping { gamma }),
        (0.0f64..=0.3).prop_map(|p_loss| NoiseChannel::Loss { p_loss }),
    ];
    prop_oneof![
        4 => (one, 0..width).prop_map(|(g, a)| Op::Gate1(g, a)),
        4 => (two, 0..width, 1..width).prop_map(move |(g, a, d)| Op::Gate2(g, a, (a + d) % width)),
        2 => (channel, 0..width).prop_map(|(c, a)| Op::Channel(c, a)),
        1 => (0..width, any::<bool>()).prop_map(|(a, x)| Op::Measure(a, x)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Any circuit keeps every group normalized, and probabilities in [0, 1].
    #[test]
    fn random_circuits_preserve_invariants(
        bits in proptest::collection::vec(0u8..2, 2..7),
        ops in proptest::collection::vec(op(6), 0..40),
        seed in any::<u64>(),
    ) {
        let mut state = QuantumState::new();
        let mut rng = RandomStream::new(seed);
        let qubits: Vec<QubitId> = bits.iter().map(|b| state.allocate(*b)).collect();
        let n = qubits.len();
        for op in ops {
            let r = match op {
                Op::Gate1(g, a) => state.apply_gate(g, &[qubits[a % n]]),
                Op::Gate2(g, a, b) => {
                    let (a, b) = (a % n, b % n);
                    if a == b { continue; }
                    state.apply_gate(g, &[qubits[a], qubits[b]])
                }
                Op::Channel(c, a) => state.apply_channel(qubits[a % n], c, &mut rng).map(|_| ()),
                Op::Measure(a, x) => {
                    let basis = if x { Basis::X } else { Basis::Z };
                    state.measure(qubits[a % n], basis, &mut rng).map(|bit| assert!(bit <= 1))
                }
            };
            // Operations on consumed qubits are rejected, never silently applied.
            if let Err(e) = r {
                prop_assert!(matches!(e, QuantumError::DeadQubit(_)), "{}", e);
            }
            prop_assert_eq!(state.check_invariants(), Vec::<String>::new());
            for q in &qubits {
                if state.is_alive(*q) {
                    let p = state.probability_one(*q).unwrap();
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p));
                    prop_assert!(state.group_size(*q).unwrap() <= MAX_GROUP_SIZE);
                }
            }
        }
    }

    /// Basis states survive a measurement in their own basis unchanged.
    #[test]
    fn eigenstates_measure_deterministically(bit in 0u8..2, x in any::<bool>(), seed in any::<u64>()) {
        let mut state = QuantumState::new();
        let mut rng = RandomStream::new(seed);
        let q = state.allocate(bit);
        let basis = if x { Basis::X } else { Basis::Z };
        if x {
            state.apply_gate(Gate::H, &[q]).unwrap();
        }
        prop_assert_eq!(state.measure(q, basis, &mut rng).unwrap(), bit);
        prop_assert!(!state.is_alive(q));
    }

    /// Amplitude damping of |1⟩ keeps it excited with probability 1 - gamma.
    #[test]
    fn damping_probability_is_exact_before_sampling(gamma in 0.0f64..=1.0) {
        let mut state = QuantumState::new();
        let q = state.allocate(1);
        let h = state.allocate(0);
        // Entangle first so the channel acts on a two-qubit group.
        state.apply_gate(Gate::H, &[h]).unwrap();
        state.apply_gate(Gate::Cz, &[h, q]).unwrap();
        prop_assert!((state.probability_one(q).unwrap() - 1.0).abs() < 1e-12);
        let mut survived = 0;
        let mut rng = RandomStream::new(1);
        for _ in 0..200 {
            let mut s = state.clone();
            s.apply_channel(q, NoiseChannel::AmplitudeDamping { gamma }, &mut rng).unwrap();
            survived += usize::from(s.probability_one(q).unwrap() > 0.5);
        }
        let p = 1.0 - gamma;
        let se = (p * (1.0 - p) / 200.0).sqrt().max(1e-3);
        prop_assert!((survived as f64 / 200.0 - p).abs() <= 5.0 * se);
    }
}

/// |1⟩ stored for T1 is still |1⟩ with probability e^-1.
#[test]
fn memory_relaxation_over_one_t1() {
    let node = Node {
        id: "M".into(),
        label: "M".into(),
        memory_slots: 1,
        t1: 0.01,
        t2: 0.02,
        source_fidelity: 1.0,
        emission_frequency: 1e6,
    };
    let mut state = QuantumState::new();
    let mut rng = RandomStream::new(11);
    let trials = 10_000;
    let mut ones = 0;
    for _ in 0..trials {
        let mut memory = QuantumMemory::new(&node);
        let q = state.allocate(1);
        memory.store(q, 0.0).unwrap();
        let q = memory.retrieve(q, node.t1, &mut state, &mut rng).unwrap();
        ones += usize::from(state.measure(q, Basis::Z, &mut rng).unwrap() == 1);
    }
    let p = (-1.0f64).exp();
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    let rate = ones as f64 / trials as f64;
    assert!((rate - p).abs() < 4.0 * se, "{rate}");
    assert_eq!(state.alive_count(), 0);
}
