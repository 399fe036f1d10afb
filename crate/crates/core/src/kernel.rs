//! Discrete-event kernel: a totally ordered event queue driving the clock.
//!
//! Events are ordered by `(due, seq)` where `seq` is a global insertion
//! counter, so simultaneous events fire in the order they were scheduled.
//! The kernel owns no global state; every run constructs its own.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::time::SimTime;

/// Protocol layer an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Phy,
    Mac,
    Sensor,
    App,
}

/// Event destination. `node` is `None` for scenario-wide events such as a
/// phenomenon emission or the end of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Target {
    pub node: Option<usize>,
    pub layer: Layer,
}

impl Target {
    pub fn node(node: usize, layer: Layer) -> Self {
        Target { node: Some(node), layer }
    }

    pub fn global(layer: Layer) -> Self {
        Target { node: None, layer }
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub due: SimTime,
    pub seq: u64,
    pub target: Target,
    pub payload: P,
}

impl<P> Event<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.due, self.seq)
    }
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: due {due}, clock {now}")]
    ScheduleInPast { due: SimTime, now: SimTime },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub dispatched: u64,
    pub clock: SimTime,
}

pub struct Kernel<P> {
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
    queue: BinaryHeap<Reverse<Event<P>>>,
}

impl<P> Default for Kernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Kernel<P> {
    pub fn new() -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            dispatched: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Enqueues `payload` for dispatch at `due` and returns its sequence number.
    pub fn schedule(&mut self, due: SimTime, target: Target, payload: P) -> Result<u64, KernelError> {
        if due < self.now {
            return Err(KernelError::ScheduleInPast { due, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { due, seq, target, payload }));
        Ok(seq)
    }

    /// Removes and returns the next event if it is due no later than `t_end`,
    /// advancing the clock to its due time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        match self.queue.peek() {
            Some(Reverse(ev)) if ev.due <= t_end => {}
            Some(_) => {
                self.now = self.now.max(t_end);
                return None;
            }
            None => return None,
        }
        let Reverse(ev) = self.queue.pop()?;
        debug_assert!(ev.due >= self.now);
        self.now = ev.due;
        self.dispatched += 1;
        Some(ev)
    }

    /// Dispatches every event due at or before `t_end` in `(due, seq)` order.
    /// The handler may schedule further events through the kernel reference.
    pub fn run_until<E, F>(&mut self, t_end: SimTime, mut handler: F) -> Result<RunStats, E>
    where
        F: FnMut(&mut Kernel<P>, Event<P>) -> Result<(), E>,
    {
        let start = self.dispatched;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev)?;
        }
        Ok(RunStats {
            dispatched: self.dispatched - start,
            clock: self.now,
        })
    }
}
