use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed)
    }

    /// Whether `self -> next` is a legal transition.
    pub fn can_become(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Queued, JobStatus::Failed)
                | (JobStatus::Running, JobStatus::Succeeded)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusChange {
    pub status: JobStatus,
    pub at: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub name: String,
    pub document_hash: String,
    pub status: JobStatus,
    pub submitted_at: String,
    #[serde(default)]
    pub started_at: Option<String>,
    #[serde(default)]
    pub finished_at: Option<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub error: Option<String>,
    /// Every status the job has held, oldest first.
    pub history: Vec<StatusChange>,
    /// Submission order; breaks ties between equal timestamps.
    pub sequence: u64,
}

#[derive(Debug, thiserror::Error)]
#[error("illegal transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: JobStatus,
    pub to: JobStatus,
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

pub fn now() -> String {
    timestamp(Utc::now())
}

impl JobRecord {
    pub fn queued(job_id: String, name: String, document_hash: String, seeds: Vec<u64>, sequence: u64) -> Self {
        let at = now();
        Self {
            job_id,
            name,
            document_hash,
            status: JobStatus::Queued,
            submitted_at: at.clone(),
            started_at: None,
            finished_at: None,
            seeds,
            error: None,
            history: vec![StatusChange {
                status: JobStatus::Queued,
                at,
            }],
            sequence,
        }
    }

    /// Moves the job forward; finished jobs never change again.
    pub fn transition(&mut self, to: JobStatus, error: Option<String>) -> Result<(), TransitionError> {
        if !self.status.can_become(to) {
            return Err(TransitionError {
                from: self.status,
                to,
            });
        }
        let at = now();
        match to {
            JobStatus::Running => self.started_at = Some(at.clone()),
            JobStatus::Succeeded | JobStatus::Failed => self.finished_at = Some(at.clone()),
            JobStatus::Queued => {}
        }
        self.status = to;
        self.error = error;
        self.history.push(StatusChange { status: to, at });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_forward_transitions() {
        let mut job = JobRecord::queued("j".into(), "n".into(), "h".into(), vec![1], 0);
        assert!(job.transition(JobStatus::Succeeded, None).is_err());
        job.transition(JobStatus::Running, None).unwrap();
        assert!(job.transition(JobStatus::Queued, None).is_err());
        job.transition(JobStatus::Failed, Some("boom".into())).unwrap();
        assert!(job.transition(JobStatus::Running, None).is_err());
        let seen: Vec<_> = job.history.iter().map(|c| c.status).collect();
        assert_eq!(seen, vec![JobStatus::Queued, JobStatus::Running, JobStatus::Failed]);
        assert!(job.started_at.is_some() && job.finished_at.is_some());
    }
}
