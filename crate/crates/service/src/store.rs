//! On-disk experiment store.
//!
//! ```text
//! <data_dir>/index.jsonl                      one line per submitted job
//! <data_dir>/experiments/<id>/job.json        current JobRecord
//! <data_dir>/experiments/<id>/document.qnsim.json
//! <data_dir>/experiments/<id>/plan.qnplan.json
//! <data_dir>/experiments/<id>/report.json
//! <data_dir>/experiments/<id>/bundle.json     downloadable artifact
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jobs::JobRecord;

pub const DOCUMENT_FILE: &str = "document.qnsim.json";
pub const PLAN_FILE: &str = "plan.qnplan.json";
pub const REPORT_FILE: &str = "report.json";
pub const BUNDLE_FILE: &str = "bundle.json";
const JOB_FILE: &str = "job.json";
const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    job_id: String,
    sequence: u64,
    submitted_at: String,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("experiments"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, job_id: &str) -> PathBuf {
        self.root.join("experiments").join(job_id)
    }

    /// Persists a new job: its document, its record and an index line.
    pub fn create(&self, job: &JobRecord, document: &[u8]) -> io::Result<()> {
        let dir = self.dir(&job.job_id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(DOCUMENT_FILE), document)?;
        self.save_job(job)?;
        let line = serde_json::to_string(&IndexLine {
            job_id: job.job_id.clone(),
            sequence: job.sequence,
            submitted_at: job.submitted_at.clone(),
        })?;
        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(INDEX_FILE))?;
        writeln!(index, "{line}")
    }

    pub fn save_job(&self, job: &JobRecord) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(job)?;
        write_atomic(&self.dir(&job.job_id).join(JOB_FILE), &bytes)
    }

    pub fn save_file(&self, job_id: &str, name: &str, bytes: &[u8]) -> io::Result<()> {
        write_atomic(&self.dir(job_id).join(name), bytes)
    }

    pub fn read_file(&self, job_id: &str, name: &str) -> io::Result<Vec<u8>> {
        fs::read(self.dir(job_id).join(name))
    }

    /// Every job listed in the index, in submission order. Entries whose
    /// directory vanished are skipped.
    pub fn load_jobs(&self) -> io::Result<Vec<JobRecord>> {
        let index = match fs::read_to_string(self.root.join(INDEX_FILE)) {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut jobs = Vec::new();
        for line in index.lines().filter(|l| !l.trim().is_empty()) {
            // A torn final line from a crash is ignored.
            let Ok(entry) = serde_json::from_str::<IndexLine>(line) else {
                continue;
            };
            let Ok(bytes) = self.read_file(&entry.job_id, JOB_FILE) else {
                continue;
            };
            if let Ok(job) = serde_json::from_slice::<JobRecord>(&bytes) {
                jobs.push(job);
            }
        }
        jobs.sort_by_key(|j| j.sequence);
        Ok(jobs)
    }
}
