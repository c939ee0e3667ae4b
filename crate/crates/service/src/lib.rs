//! Job service: accepts simulation documents over HTTP, runs them on a
//! bounded worker pool and keeps every finished job as an experiment on disk.

mod api;
pub mod jobs;
pub mod store;

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use qndk_core::document::{export, import, Bundle, ValidationError};
use qndk_core::{CompiledPlan, RunOptions, Toolkit};
use tokio::sync::Semaphore;

pub use api::{router, MAX_BODY_BYTES};
pub use jobs::{JobRecord, JobStatus, StatusChange};
use store::{Store, BUNDLE_FILE, DOCUMENT_FILE, PLAN_FILE, REPORT_FILE};

/// Reason recorded on jobs that were running when the service stopped.
pub const INTERRUPTED: &str = "interrupted";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Jobs executed concurrently.
    pub workers: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("document is invalid")]
    Invalid(Vec<ValidationError>),
    #[error("storage error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

struct Inner {
    toolkit: Toolkit,
    store: Store,
    jobs: Mutex<HashMap<String, JobRecord>>,
    permits: Arc<Semaphore>,
    next_sequence: AtomicU64,
}

/// Seeds a plan's runs will use.
fn seeds_of(plan: &CompiledPlan) -> Vec<u64> {
    (0..plan.run_config.runs)
        .map(|i| plan.run_config.seed.wrapping_add(i))
        .collect()
}

impl Service {
    /// Opens (or creates) the store and recovers jobs from a previous
    /// process: running jobs fail as interrupted, queued jobs run again.
    /// Must be called inside a Tokio runtime.
    pub fn open(config: ServiceConfig) -> io::Result<Self> {
        let store = Store::open(&config.data_dir)?;
        let previous = store.load_jobs()?;
        let service = Self {
            inner: Arc::new(Inner {
                toolkit: Toolkit::standard(),
                store,
                jobs: Mutex::new(HashMap::new()),
                permits: Arc::new(Semaphore::new(config.workers.max(1))),
                next_sequence: AtomicU64::new(
                    previous.iter().map(|j| j.sequence + 1).max().unwrap_or(0),
                ),
            }),
        };
        let mut requeue = Vec::new();
        for mut job in previous {
            match job.status {
                JobStatus::Running => {
                    job.transition(JobStatus::Failed, Some(INTERRUPTED.into()))
                        .expect("running jobs can fail");
                    service.inner.store.save_job(&job)?;
                }
                JobStatus::Queued => requeue.push(job.job_id.clone()),
                _ => {}
            }
            service.lock().insert(job.job_id.clone(), job);
        }
        for id in requeue {
            match service.recompile(&id) {
                Ok(plan) => service.spawn(id, plan),
                Err(reason) => service.finish(&id, Err(reason)),
            }
        }
        Ok(service)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, JobRecord>> {
        self.inner.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn toolkit(&self) -> &Toolkit {
        &self.inner.toolkit
    }

    fn recompile(&self, id: &str) -> Result<CompiledPlan, String> {
        let bytes = self
            .inner
            .store
            .read_file(id, DOCUMENT_FILE)
            .map_err(|e| format!("document unreadable: {e}"))?;
        let doc = import(&bytes).map_err(|e| e.to_string())?;
        self.inner.toolkit.compile(&doc).map_err(|e| e.to_string())
    }

    /// Validates, compiles and queues a document.
    pub fn submit(&self, bytes: &[u8]) -> Result<JobRecord, SubmitError> {
        let doc = import(bytes).map_err(|e| SubmitError::Invalid(vec![e.to_validation_error()]))?;
        let plan = self
            .inner
            .toolkit
            .compile(&doc)
            .map_err(|e| SubmitError::Invalid(e.errors()))?;
        let job = JobRecord::queued(
            uuid::Uuid::new_v4().simple().to_string(),
            doc.name.clone(),
            plan.document_hash.clone(),
            seeds_of(&plan),
            self.inner.next_sequence.fetch_add(1, Ordering::SeqCst),
        );
        self.inner.store.create(&job, &export(&doc))?;
        self.lock().insert(job.job_id.clone(), job.clone());
        tracing::info!(job = %job.job_id, name = %job.name, "queued");
        self.spawn(job.job_id.clone(), plan);
        Ok(job)
    }

    fn spawn(&self, id: String, plan: CompiledPlan) {
        let service = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = Arc::clone(&service.inner.permits).acquire_owned().await else {
                return;
            };
            if let Err(e) = service.advance(&id, JobStatus::Running, None) {
                tracing::error!(job = %id, "cannot start: {e}");
                return;
            }
            let worker = service.clone();
            let job_id = id.clone();
            let outcome = tokio::task::spawn_blocking(move || worker.execute(&job_id, &plan)).await;
            let outcome = match outcome {
                Ok(result) => result,
                Err(e) => Err(format!("simulation crashed: {e}")),
            };
            service.finish(&id, outcome);
        });
    }

    /// Runs the plan and writes plan, report and bundle next to the document.
    fn execute(&self, id: &str, plan: &CompiledPlan) -> Result<(), String> {
        let store = &self.inner.store;
        let report = self.inner.toolkit.run_plan(plan, &RunOptions::default());
        let document = store
            .read_file(id, DOCUMENT_FILE)
            .map_err(|e| format!("document unreadable: {e}"))?;
        let doc = import(&document).map_err(|e| e.to_string())?;
        let report_bytes = report.to_canonical_bytes();
        let bundle = Bundle::new(&doc).with_plan(plan.clone()).with_report(report);
        let io = |e: io::Error| format!("storage error: {e}");
        store.save_file(id, PLAN_FILE, &plan.to_canonical_bytes()).map_err(io)?;
        store.save_file(id, REPORT_FILE, &report_bytes).map_err(io)?;
        store.save_file(id, BUNDLE_FILE, &bundle.to_canonical_bytes()).map_err(io)?;
        Ok(())
    }

    fn finish(&self, id: &str, outcome: Result<(), String>) {
        let (status, error) = match outcome {
            Ok(()) => (JobStatus::Succeeded, None),
            Err(e) => (JobStatus::Failed, Some(e)),
        };
        if let Err(e) = self.advance(id, status, error) {
            tracing::error!(job = %id, "cannot finish: {e}");
        }
    }

    /// The single place job state changes: in memory and on disk together.
    fn advance(&self, id: &str, to: JobStatus, error: Option<String>) -> Result<JobRecord, String> {
        let mut jobs = self.lock();
        let job = jobs.get_mut(id).ok_or_else(|| format!("unknown job {id}"))?;
        job.transition(to, error).map_err(|e| e.to_string())?;
        self.inner.store.save_job(job).map_err(|e| e.to_string())?;
        tracing::info!(job = %id, status = ?to, "status");
        Ok(job.clone())
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        self.lock().get(id).cloned()
    }

    pub fn queue_depth(&self) -> usize {
        self.lock()
            .values()
            .filter(|j| j.status == JobStatus::Queued)
            .count()
    }

    /// Terminal jobs, newest first.
    pub fn experiments(&self) -> Vec<JobRecord> {
        let mut list: Vec<JobRecord> = self
            .lock()
            .values()
            .filter(|j| j.status.is_terminal())
            .cloned()
            .collect();
        list.sort_by(|a, b| {
            b.submitted_at
                .cmp(&a.submitted_at)
                .then(b.sequence.cmp(&a.sequence))
        });
        list
    }

    pub fn read_artifact(&self, id: &str, name: &str) -> io::Result<Vec<u8>> {
        self.inner.store.read_file(id, name)
    }
}

/// Serves the API on `addr` until Ctrl-C.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> io::Result<()> {
    let service = Service::open(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
