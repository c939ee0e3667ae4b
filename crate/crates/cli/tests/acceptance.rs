//! Acceptance checks. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use http_body_util::BodyExt;
use qndk_core::document::{
    export, import, sha256_hex, AutoLatency, BackendDescriptor, BindingDoc, Bundle, ConnectionDoc,
    ErrorCode, GroupDoc, Latency, NodeDoc, RunConfigDoc, RunReport, StageDoc, TopologyDoc,
};
use qndk_core::framework::{
    Binding, GroupPlan, ParamValue, Params, RoleRegistry, RoleResult, RoleStatus, RunOutcome,
    Simulation,
};
use qndk_core::network::{propagation_delay_km, Connection, Network, Node, QuantumMemory};
use qndk_core::protocols::{bits_to_string, QBER_ESTIMATE, RECONCILED_KEY, SIFTED_KEY};
use qndk_core::quantum::{Basis, QuantumState};
use qndk_core::rng::{stream_key, RandomStream};
use qndk_core::{RunOptions, SimulationDocument, Toolkit};
use qndk_service::{router, JobRecord, JobStatus, Service, ServiceConfig, MAX_BODY_BYTES};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

/// Tolerance, in binomial standard errors, for every statistical check.
const SIGMAS: f64 = 4.0;
const SEEDS: u64 = 20;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn golden_path() -> PathBuf {
    fixtures().join("golden_bb84_cascade.qnsim.json")
}

fn golden_bytes() -> Vec<u8> {
    std::fs::read(golden_path()).unwrap()
}

fn golden() -> SimulationDocument {
    import(&golden_bytes()).unwrap()
}

fn binomial_se(p: f64, n: f64) -> f64 {
    (p * (1.0 - p) / n).sqrt()
}

fn role<'a>(results: &'a [RoleResult], id: &str) -> &'a RoleResult {
    results.iter().find(|r| r.instance_id == id).unwrap()
}

fn run_doc(doc: &SimulationDocument, runs: u64, seed: u64) -> RunReport {
    let toolkit = Toolkit::standard();
    let mut plan = toolkit.compile(doc).expect("document compiles");
    plan.run_config.runs = runs;
    let options = RunOptions {
        seed_override: Some(seed),
        parallel: true,
    };
    toolkit.run_plan(&plan, &options)
}

// ---- direct network construction, for the physics checks ----

fn node(id: &str, memory_slots: u32) -> Node {
    Node {
        id: id.into(),
        label: id.into(),
        memory_slots,
        t1: 1.0,
        t2: 1.0,
        source_fidelity: 1.0,
        emission_frequency: 1e6,
    }
}

fn pair(length_km: f64, attenuation: f64) -> Network {
    Network::new(
        vec![node("A", 8), node("B", 8)],
        vec![Connection {
            id: "L".into(),
            endpoint_a: "A".into(),
            endpoint_b: "B".into(),
            length_km,
            attenuation_db_per_km: attenuation,
            noise_depolarizing_p: 0.0,
            classical_latency: propagation_delay_km(length_km),
        }],
    )
}

fn bind(instance: &str, node: &str, role: &str, params: &[(&str, f64)]) -> Binding {
    Binding {
        instance_id: instance.into(),
        node_id: node.into(),
        role: role.into(),
        params: Params(
            params
                .iter()
                .map(|(k, v)| (k.to_string(), ParamValue::Number(*v)))
                .collect(),
        ),
        rng_key: stream_key(instance),
    }
}

fn two_party(a: Binding, b: Binding) -> Vec<GroupPlan> {
    vec![GroupPlan {
        name: "g".into(),
        stages: vec![vec![a, b]],
    }]
}

// ---- criteria ----

fn ideal_bb84() -> Check {
    let report = run_doc(&golden(), SEEDS, 0);
    let mut slowest: f64 = 0.0;
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for run in &report.runs {
        let alice = role(&run.role_results, "alice-bb84");
        let bob = role(&run.role_results, "bob-bb84");
        ensure!(run.error.is_none(), "seed {}: {:?}", run.seed, run.error);
        ensure!(
            alice.status == RoleStatus::Completed && bob.status == RoleStatus::Completed,
            "seed {}: BB84 did not complete",
            run.seed
        );
        ensure!(alice.metrics["pulses"] == 10_000.0, "seed {}: wrong pulse count", run.seed);
        let qber = alice.metrics["qber_estimate"];
        ensure!(qber == 0.0, "seed {}: QBER {qber}", run.seed);
        let fraction = alice.metrics["sifted_fraction"];
        ensure!((0.48..=0.52).contains(&fraction), "seed {}: sifted fraction {fraction}", run.seed);
        ensure!(
            alice.outputs[SIFTED_KEY] == bob.outputs[SIFTED_KEY],
            "seed {}: sifted keys differ",
            run.seed
        );
        ensure!(run.wall_clock_seconds < 5.0, "seed {}: {}s", run.seed, run.wall_clock_seconds);
        slowest = slowest.max(run.wall_clock_seconds);
        lo = lo.min(fraction);
        hi = hi.max(fraction);
    }
    Ok(format!(
        "{SEEDS} seeds, QBER 0, sifted fraction in [{lo:.4}, {hi:.4}], keys identical, slowest run {slowest:.3}s"
    ))
}

fn noisy_bb84() -> Check {
    let p = 0.1;
    let expected = 2.0 * p / 3.0;
    let mut doc = golden();
    doc.topology.connections[0].noise_depolarizing_p = Some(p);
    doc.protocol_groups.truncate(1);
    let report = run_doc(&doc, SEEDS, 1000);
    let mut worst: f64 = 0.0;
    for run in &report.runs {
        let alice = role(&run.role_results, "alice-bb84");
        let sampled = alice.metrics["sampled"];
        let qber = alice.metrics["qber_estimate"];
        let z = (qber - expected).abs() / binomial_se(expected, sampled);
        ensure!(z < SIGMAS, "seed {}: QBER {qber} is {z:.2} SE from {expected:.4}", run.seed);
        worst = worst.max(z);
    }
    Ok(format!("{SEEDS} seeds around 2p/3 = {expected:.4}, worst deviation {worst:.2} SE"))
}

fn loss_law() -> Check {
    let registry = RoleRegistry::standard();
    let pulses = 10_000.0;
    let mut seen = Vec::new();
    for (i, (length, expected)) in [(0.0, 1.0), (10.0, 0.631), (50.0, 0.1)].into_iter().enumerate() {
        let groups = two_party(
            bind("alice", "A", "bb84_sender", &[("num_pulses", pulses)]),
            bind("bob", "B", "bb84_receiver", &[]),
        );
        let out = Simulation::new(&registry, pair(length, 0.2), 31 + i as u64).run(&groups);
        let rate = role(&out.results, "alice").metrics["arrival_rate"];
        let exact = 10f64.powf(-0.2 * length / 10.0);
        // The nominal values are rounded; the band is centred on the exact law.
        ensure!((exact - expected).abs() < 5e-4, "law mismatch at {length} km");
        let se = binomial_se(exact, pulses);
        ensure!(
            (rate - exact).abs() <= SIGMAS * se,
            "{length} km: delivery {rate} vs {exact:.4} (SE {se:.5})"
        );
        ensure!(
            out.trace.qubits_sent - out.trace.qubits_lost == (rate * pulses).round() as u64,
            "{length} km: trace disagrees with the role"
        );
        seen.push(format!("{length} km → {rate:.4}"));
    }
    Ok(seen.join(", "))
}

fn memory_decoherence() -> Check {
    let node = Node {
        t1: 0.5,
        t2: 1.0,
        ..node("M", 1)
    };
    let mut state = QuantumState::new();
    let mut rng = RandomStream::new(2024);
    let trials = 10_000;
    let mut ones = 0;
    for _ in 0..trials {
        let mut memory = QuantumMemory::new(&node);
        let q = state.allocate(1);
        memory.store(q, 0.0).map_err(|e| e.to_string())?;
        let q = memory
            .retrieve(q, node.t1, &mut state, &mut rng)
            .map_err(|e| e.to_string())?;
        ones += usize::from(state.measure(q, Basis::Z, &mut rng).map_err(|e| e.to_string())? == 1);
    }
    let p = (-1.0f64).exp();
    let rate = ones as f64 / trials as f64;
    let z = (rate - p).abs() / binomial_se(p, trials as f64);
    ensure!(z < SIGMAS, "survival {rate} is {z:.2} SE from e^-1");
    Ok(format!("survival {rate:.4} vs e^-1 = {p:.4} ({z:.2} SE, {trials} trials)"))
}

fn cascade_run(sender: &[u8], receiver: &[u8], qber: f64, params: &[(&str, f64)], seed: u64) -> RunOutcome {
    let registry = RoleRegistry::standard();
    let groups = two_party(
        bind("alice", "A", "cascade_sender", params),
        bind("bob", "B", "cascade_receiver", params),
    );
    Simulation::new(&registry, pair(1.0, 0.0), seed)
        .with_blackboard("A", SIFTED_KEY, json!(bits_to_string(sender)))
        .with_blackboard("B", SIFTED_KEY, json!(bits_to_string(receiver)))
        .with_blackboard("A", QBER_ESTIMATE, json!(qber))
        .with_blackboard("B", QBER_ESTIMATE, json!(qber))
        .run(&groups)
}

/// One reconciliation trial: true when the keys are identical afterwards.
fn cascade_trial(trial: u64) -> bool {
    let bits = 10_000;
    let mut rng = RandomStream::new(90_000 + trial);
    let alice: Vec<u8> = (0..bits).map(|_| rng.bit()).collect();
    let mut bob = alice.clone();
    for i in rng.sample_indices(bits, bits / 20) {
        bob[i] ^= 1;
    }
    let out = cascade_run(&alice, &bob, 0.05, &[("passes", 4.0)], trial);
    let reconciled = &role(&out.results, "bob").outputs[RECONCILED_KEY];
    *reconciled == json!(bits_to_string(&alice))
}

fn cascade() -> Check {
    // Hand trace: 8-bit block, error at position 5. Block parity differs (1);
    // BINARY asks [0,4) (2), [4,6) (3), [4,5) (4) and lands on position 5.
    let alice = [1, 0, 1, 1, 0, 0, 1, 0];
    let mut bob = alice;
    bob[5] ^= 1;
    let out = cascade_run(&alice, &bob, 0.125, &[("passes", 1.0), ("block_coefficient", 8.0)], 0);
    let disclosed = out.trace.disclosed_parities();
    ensure!(disclosed == 4, "8-bit fixture disclosed {disclosed} parities");
    ensure!(
        role(&out.results, "bob").outputs[RECONCILED_KEY] == json!(bits_to_string(&alice)),
        "8-bit fixture not corrected"
    );

    let trials = 100u64;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let identical: u64 = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..trials)
                        .step_by(workers as usize)
                        .filter(|t| cascade_trial(*t))
                        .count() as u64
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    ensure!(identical >= 90, "only {identical}/{trials} trials reconciled");
    Ok(format!("8-bit fixture: 4 parities; 10,000-bit keys at 5%: {identical}/{trials} identical"))
}

fn stage_barriers() -> Check {
    let report = run_doc(&golden(), SEEDS, 500);
    for run in &report.runs {
        ensure!(run.error.is_none(), "seed {}: {:?}", run.seed, run.error);
        ensure!(run.stages.len() == 2, "seed {}: {} stages", run.seed, run.stages.len());
        for w in run.stages.windows(2) {
            ensure!(
                w[1].started_at >= w[0].finished_at,
                "seed {}: stage starts at {} before the previous ends at {}",
                run.seed,
                w[1].started_at,
                w[0].finished_at
            );
        }
        let first_done = run
            .role_results
            .iter()
            .filter(|r| r.group == 0)
            .map(|r| r.finished_at)
            .fold(f64::NEG_INFINITY, f64::max);
        let second_start = run
            .role_results
            .iter()
            .filter(|r| r.group == 1)
            .map(|r| r.started_at)
            .fold(f64::INFINITY, f64::min);
        ensure!(
            second_start >= first_done,
            "seed {}: error correction started at {second_start} before key distribution ended at {first_done}",
            run.seed
        );
        for r in &run.role_results {
            let stage = run
                .stages
                .iter()
                .find(|s| s.group == r.group && s.stage == r.stage)
                .ok_or("role without a stage record")?;
            ensure!(
                r.started_at >= stage.started_at && r.finished_at <= stage.finished_at,
                "seed {}: {} ran outside its stage",
                run.seed,
                r.instance_id
            );
        }
    }
    Ok(format!("{SEEDS} seeds, every group-1 role starts after every group-0 role ends"))
}

fn cli_report() -> Result<RunReport, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qndk"))
        .args(["run", golden_path().to_str().unwrap(), "--seed", "42"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "cli exited {:?}", out.status.code());
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn determinism(rt: &tokio::runtime::Runtime) -> Check {
    let a = cli_report()?.normalized();
    let b = cli_report()?.normalized();
    ensure!(a.to_canonical_bytes() == b.to_canonical_bytes(), "CLI runs differ");
    let (c, d) = rt.block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let app = app(dir.path(), 2);
        let first = service_report(&app).await;
        let second = service_report(&app).await;
        (first, second)
    });
    let (c, d) = (c?.normalized(), d?.normalized());
    ensure!(c.to_canonical_bytes() == d.to_canonical_bytes(), "service runs differ");
    ensure!(a == c, "CLI and service reports differ");
    Ok("golden document, seed 42: two CLI runs and two service jobs give identical reports".into())
}

// ---- random documents ----

fn maybe<T>(rng: &mut RandomStream, f: impl FnOnce(&mut RandomStream) -> T) -> Option<T> {
    if rng.bernoulli(0.5) {
        Some(f(rng))
    } else {
        None
    }
}

fn pick(rng: &mut RandomStream, n: usize) -> usize {
    (rng.uniform() * n as f64) as usize % n
}

/// A number that is sometimes integral, sometimes an arbitrary float.
fn number(rng: &mut RandomStream, lo: f64, hi: f64) -> f64 {
    if rng.bernoulli(0.3) {
        (lo + pick(rng, 4) as f64).min(hi)
    } else {
        lo + rng.uniform() * (hi - lo)
    }
}

fn random_document(rng: &mut RandomStream) -> SimulationDocument {
    const LABELS: [&str; 5] = ["Alice", "Bob", "relay β", "", "node \"7\""];
    let n = 2 + pick(rng, 5);
    let nodes = (0..n)
        .map(|i| {
            let t1 = maybe(rng, |r| number(r, 0.001, 10.0));
            NodeDoc {
                id: format!("N{i}"),
                label: maybe(rng, |r| LABELS[pick(r, LABELS.len())].to_string()),
                memory_slots: maybe(rng, |r| 1 + pick(r, 64) as i64),
                t1,
                // The default t2 (1 s) would break t2 <= 2 t1 for short t1.
                t2: match t1 {
                    Some(t) if t < 0.5 => Some(t * (0.1 + 1.9 * rng.uniform())),
                    Some(t) => maybe(rng, |r| t * (0.1 + 1.9 * r.uniform())),
                    None => None,
                },
                source_fidelity: maybe(rng, |r| 0.51 + 0.49 * r.uniform()),
                emission_frequency: maybe(rng, |r| number(r, 1.0, 1e9)),
            }
        })
        .collect();
    let connections: Vec<ConnectionDoc> = (0..pick(rng, 7))
        .map(|i| {
            let a = pick(rng, n);
            let b = (a + 1 + pick(rng, n - 1)) % n;
            ConnectionDoc {
                id: format!("C{i}"),
                endpoint_a: format!("N{a}"),
                endpoint_b: format!("N{b}"),
                length_km: number(rng, 0.0, 200.0),
                attenuation_db_per_km: maybe(rng, |r| number(r, 0.0, 1.0)),
                noise_depolarizing_p: maybe(rng, |r| r.uniform()),
                classical_latency: maybe(rng, |r| {
                    if r.bernoulli(0.5) {
                        Latency::Auto(AutoLatency::Auto)
                    } else {
                        Latency::Seconds(r.uniform() * 1e-3)
                    }
                }),
            }
        })
        .collect();
    let protocol_groups = connections
        .iter()
        .take(pick(rng, 3))
        .enumerate()
        .map(|(g, c)| {
            let (sender, receiver) = if rng.bernoulli(0.5) {
                ("bb84_sender", "bb84_receiver")
            } else {
                ("ent_dist_source", "ent_dist_receiver")
            };
            let count = if sender == "bb84_sender" { "num_pulses" } else { "num_pairs" };
            let mut params = BTreeMap::from([(count.to_string(), ParamValue::Number(10.0 + g as f64))]);
            params.insert("peer".into(), ParamValue::String(c.endpoint_b.clone()));
            GroupDoc {
                name: format!("group-{g}"),
                stages: vec![StageDoc {
                    roles: vec![
                        BindingDoc {
                            instance_id: format!("tx-{g}"),
                            node_id: c.endpoint_a.clone(),
                            role: sender.into(),
                            params,
                        },
                        BindingDoc {
                            instance_id: format!("rx-{g}"),
                            node_id: c.endpoint_b.clone(),
                            role: receiver.into(),
                            params: BTreeMap::from([(
                                "peer".to_string(),
                                ParamValue::String(c.endpoint_a.clone()),
                            )]),
                        },
                    ],
                }],
            }
        })
        .collect();
    let mut extensions = BTreeMap::new();
    if rng.bernoulli(0.3) {
        extensions.insert(
            "layout".to_string(),
            json!({"zoom": rng.uniform(), "origin": [number(rng, -1e3, 1e3), 0.5], "tags": ["x"]}),
        );
    }
    SimulationDocument {
        schema_version: "1".into(),
        name: format!("random-{:x}", rng.next_u64()),
        engine: "native".into(),
        topology: TopologyDoc { nodes, connections },
        protocol_groups,
        run_config: RunConfigDoc {
            seed: rng.next_u64(),
            runs: 1 + pick(rng, 10) as i64,
            max_sim_time: maybe(rng, |r| number(r, 0.1, 100.0)),
        },
        extensions,
    }
}

fn round_trip() -> Check {
    let toolkit = Toolkit::standard();
    let mut rng = RandomStream::new(7);
    let count = 200;
    for i in 0..count {
        let doc = random_document(&mut rng);
        toolkit
            .validate(&doc)
            .map_err(|e| format!("document {i} is invalid: {e:?}"))?;
        let bytes = export(&doc);
        let back = import(&bytes).map_err(|e| format!("document {i}: {e}"))?;
        ensure!(export(&back) == bytes, "document {i}: export∘import∘export changed the bytes");
    }

    let mut toolkit = Toolkit::standard();
    toolkit.backends.register(BackendDescriptor {
        engine: "restricted".into(),
        channel_kinds: ["loss".to_string()].into(),
        roles: ["bb84_sender".to_string(), "bb84_receiver".to_string()].into(),
    });
    let mut covered = std::collections::BTreeSet::new();
    let mut fixtures_seen = 0;
    for entry in std::fs::read_dir(fixtures().join("invalid")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let expected = name.split('.').next().unwrap_or_default().to_string();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let codes: Vec<String> = match import(&bytes) {
            Err(e) => vec![e.code().to_string()],
            Ok(doc) => match toolkit.compile(&doc) {
                Ok(_) => vec![],
                Err(e) => e.errors().iter().map(|e| e.code.to_string()).collect(),
            },
        };
        ensure!(codes.contains(&expected), "{name}: got {codes:?}");
        covered.insert(expected);
        fixtures_seen += 1;
    }
    let missing: Vec<&str> = ErrorCode::ALL
        .iter()
        .map(|c| c.as_str())
        .filter(|c| !covered.contains(*c))
        .collect();
    ensure!(missing.is_empty(), "codes without a fixture: {missing:?}");
    Ok(format!(
        "{count} random documents byte-identical; {} codes covered by {fixtures_seen} fixtures",
        ErrorCode::ALL.len()
    ))
}

// ---- service ----

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

fn app(dir: &Path, workers: usize) -> Router {
    router(
        Service::open(ServiceConfig {
            data_dir: dir.to_path_buf(),
            workers,
        })
        .unwrap(),
    )
}

async fn call(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> Reply {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, "GET", uri, Vec::new()).await
}

async fn submit(app: &Router, body: Vec<u8>) -> Result<String, String> {
    let r = call(app, "POST", "/api/v1/simulations", body).await;
    ensure!(r.status == StatusCode::ACCEPTED, "submit returned {}", r.status);
    ensure!(r.json()["status"] == "queued", "new job is not queued");
    Ok(r.json()["job_id"].as_str().unwrap_or_default().to_string())
}

fn rank(s: JobStatus) -> u8 {
    match s {
        JobStatus::Queued => 0,
        JobStatus::Running => 1,
        JobStatus::Succeeded | JobStatus::Failed => 2,
    }
}

/// Polls until terminal and checks that the status never moves backwards.
async fn wait(app: &Router, id: &str) -> Result<(JobRecord, Vec<JobStatus>), String> {
    let mut seen: Vec<JobStatus> = Vec::new();
    for _ in 0..12_000 {
        let job: JobRecord = serde_json::from_slice(&get(app, &format!("/api/v1/jobs/{id}")).await.body)
            .map_err(|e| e.to_string())?;
        if let Some(last) = seen.last() {
            ensure!(rank(job.status) >= rank(*last), "{id}: {last:?} → {:?}", job.status);
        }
        if seen.last() != Some(&job.status) {
            seen.push(job.status);
        }
        if job.status.is_terminal() {
            return Ok((job, seen));
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    Err(format!("job {id} did not finish"))
}

async fn service_report(app: &Router) -> Result<RunReport, String> {
    let id = submit(app, golden_bytes()).await?;
    let (job, _) = wait(app, &id).await?;
    ensure!(job.status == JobStatus::Succeeded, "job failed: {:?}", job.error);
    serde_json::from_slice(&get(app, &format!("/api/v1/jobs/{id}/results")).await.body)
        .map_err(|e| e.to_string())
}

fn with_pulses(pulses: u64) -> Vec<u8> {
    let mut doc: Value = serde_json::from_slice(&golden_bytes()).unwrap();
    for role in doc["protocol_groups"][0]["stages"][0]["roles"].as_array_mut().unwrap() {
        role["params"]["num_pulses"] = json!(pulses);
    }
    serde_json::to_vec(&doc).unwrap()
}

async fn lifecycle() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let app = app(dir.path(), 1);

    // One worker: the first job keeps the second waiting.
    let slow = submit(&app, with_pulses(150_000)).await?;
    let id = submit(&app, golden_bytes()).await?;
    let conflict = get(&app, &format!("/api/v1/jobs/{id}/results")).await;
    ensure!(conflict.status == StatusCode::CONFLICT, "results before finish gave {}", conflict.status);

    let (job, seen) = wait(&app, &id).await?;
    ensure!(job.status == JobStatus::Succeeded, "job failed: {:?}", job.error);
    let history: Vec<JobStatus> = job.history.iter().map(|c| c.status).collect();
    ensure!(
        history == [JobStatus::Queued, JobStatus::Running, JobStatus::Succeeded],
        "history {history:?}"
    );
    ensure!(
        job.history.windows(2).all(|w| w[0].at <= w[1].at),
        "history timestamps go backwards"
    );
    let (slow_job, _) = wait(&app, &slow).await?;
    ensure!(slow_job.status == JobStatus::Succeeded, "slow job failed");

    let download = get(&app, &format!("/api/v1/experiments/{id}/download")).await;
    ensure!(download.status == StatusCode::OK, "download gave {}", download.status);
    let digest = base64::engine::general_purpose::STANDARD.encode(Sha256::digest(&download.body));
    let header = download
        .headers
        .get("content-digest")
        .and_then(|h| h.to_str().ok())
        .unwrap_or_default();
    ensure!(header == format!("sha-256=:{digest}:"), "Content-Digest mismatch");
    let bundle = Bundle::from_bytes(&download.body).map_err(|e| e.to_string())?;
    ensure!(bundle.verify(), "bundle document does not match its hash");
    ensure!(
        sha256_hex(bundle.document.as_bytes()) == job.document_hash,
        "bundle hash differs from the job's"
    );

    let invalid = call(&app, "POST", "/api/v1/simulations", b"{\"schema_version\":\"1\"".to_vec()).await;
    ensure!(invalid.status == StatusCode::UNPROCESSABLE_ENTITY, "malformed gave {}", invalid.status);
    ensure!(invalid.json()["details"]["errors"][0]["code"] == "E_MALFORMED", "422 without error list");
    let missing = get(&app, "/api/v1/jobs/does-not-exist").await;
    ensure!(missing.status == StatusCode::NOT_FOUND, "unknown job gave {}", missing.status);
    let huge = call(&app, "POST", "/api/v1/simulations", vec![b' '; MAX_BODY_BYTES + 1]).await;
    ensure!(huge.status == StatusCode::PAYLOAD_TOO_LARGE, "oversized body gave {}", huge.status);

    Ok(format!(
        "observed {seen:?}; Content-Digest and bundle hash verified; 422/404/409/413 exercised"
    ))
}

fn main() -> ExitCode {
    // libtest arguments (filters, --nocapture, ...) are accepted and ignored.
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let criteria: Vec<Criterion> = vec![
        ("ideal BB84", Box::new(ideal_bb84)),
        ("noisy BB84", Box::new(noisy_bb84)),
        ("loss law", Box::new(loss_law)),
        ("memory decoherence", Box::new(memory_decoherence)),
        ("cascade reconciliation", Box::new(cascade)),
        ("protocol-group stage barriers", Box::new(stage_barriers)),
        ("determinism (CLI and service)", Box::new(|| determinism(&rt))),
        ("document round-trip and error fixtures", Box::new(round_trip)),
        ("service lifecycle", Box::new(|| rt.block_on(lifecycle()))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>())));
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
