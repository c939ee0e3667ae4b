//! Deterministic discrete-event scheduling.
//!
//! Events are ordered by `(fire_time, sequence)`. The sequence number is
//! handed out at scheduling time, so events due at the same instant are
//! dispatched in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("negative or non-finite delay {0}")]
    InvalidDelay(f64),
    #[error("cannot schedule at {at} s, clock is already at {now} s")]
    InPast { at: f64, now: f64 },
    #[error("run_until target {target} s is before the current time {now} s")]
    TargetInPast { target: f64, now: f64 },
}

/// A handler failure, tagged with the event that raised it.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("event #{sequence} at t={fire_time} s failed: {source}")]
pub struct DispatchError<E: std::error::Error + 'static> {
    pub sequence: u64,
    pub fire_time: f64,
    #[source]
    pub source: E,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<T> {
    pub fire_time: f64,
    pub sequence: u64,
    pub payload: T,
}

struct Entry<T>(SimEvent<T>);

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.0.sequence == other.0.sequence
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .fire_time
            .total_cmp(&self.0.fire_time)
            .then_with(|| other.0.sequence.cmp(&self.0.sequence))
    }
}

/// Time-ordered event schedule. Time is in seconds.
pub struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    now: f64,
    next_sequence: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            now: 0.0,
            next_sequence: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload` at `now + delay` and returns its sequence number.
    pub fn schedule(&mut self, delay: f64, payload: T) -> Result<u64, ScheduleError> {
        if !delay.is_finite() || delay < 0.0 {
            return Err(ScheduleError::InvalidDelay(delay));
        }
        Ok(self.push(self.now + delay, payload))
    }

    /// Schedules `payload` at absolute time `at`.
    pub fn schedule_at(&mut self, at: f64, payload: T) -> Result<u64, ScheduleError> {
        if !at.is_finite() {
            return Err(ScheduleError::InvalidDelay(at));
        }
        if at < self.now {
            return Err(ScheduleError::InPast { at, now: self.now });
        }
        Ok(self.push(at, payload))
    }

    fn push(&mut self, fire_time: f64, payload: T) -> u64 {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(Entry(SimEvent {
            fire_time,
            sequence,
            payload,
        }));
        sequence
    }

    /// Fire time of the next pending event.
    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.0.fire_time)
    }

    /// Removes the next event and advances the clock to its fire time.
    pub fn pop(&mut self) -> Option<SimEvent<T>> {
        let Entry(event) = self.heap.pop()?;
        self.now = self.now.max(event.fire_time);
        Some(event)
    }

    /// Like [`pop`](Self::pop), but only if the next event fires at or before `limit`.
    pub fn pop_until(&mut self, limit: f64) -> Option<SimEvent<T>> {
        match self.peek_time() {
            Some(t) if t <= limit => self.pop(),
            _ => None,
        }
    }

    /// Drops all pending events, returning their payloads in dispatch order.
    pub fn drain(&mut self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.heap.len());
        while let Some(Entry(event)) = self.heap.pop() {
            out.push(event.payload);
        }
        out
    }

    /// Dispatches every event with `fire_time <= t_end` (all events when `t_end`
    /// is `None`). The handler may schedule further events. Returns the number
    /// of events dispatched.
    pub fn run_until<E, F>(&mut self, t_end: Option<f64>, mut handler: F) -> Result<usize, RunError<E>>
    where
        E: std::error::Error + 'static,
        F: FnMut(&mut Self, SimEvent<T>) -> Result<(), E>,
    {
        let limit = match t_end {
            Some(t) if t < self.now => {
                return Err(RunError::Schedule(ScheduleError::TargetInPast {
                    target: t,
                    now: self.now,
                }))
            }
            Some(t) => t,
            None => f64::INFINITY,
        };
        let mut dispatched = 0;
        while let Some(event) = self.pop_until(limit) {
            let (sequence, fire_time) = (event.sequence, event.fire_time);
            dispatched += 1;
            handler(self, event).map_err(|source| {
                RunError::Handler(DispatchError {
                    sequence,
                    fire_time,
                    source,
                })
            })?;
        }
        if let Some(t) = t_end {
            self.now = self.now.max(t);
        }
        Ok(dispatched)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError<E: std::error::Error + 'static> {
    #[error(transparent)]
    Schedule(ScheduleError),
    #[error(transparent)]
    Handler(DispatchError<E>),
}
