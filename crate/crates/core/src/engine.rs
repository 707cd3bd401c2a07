//! Discrete-event engine.
//!
//! Events are totally ordered by `(fire_at, seq)` where `seq` is a monotone
//! insertion counter, so equal-time events dispatch in the order they were
//! scheduled. Every dispatch is folded into a running trace digest which two
//! runs of the same configuration must agree on.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::time::SimTime;

/// Index of a node (host, switch or controller) in the simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Index of a port on a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId(pub u16);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl std::fmt::Display for PortId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("event scheduled in the past: fire_at {fire_at} < now {now}")]
    ScheduledInPast { fire_at: SimTime, now: SimTime },
    #[error("overlapping transmission on link {link} ({direction:?}): busy until {busy_until}, start {start}")]
    LinkBusy {
        link: usize,
        direction: crate::link::Direction,
        busy_until: SimTime,
        start: SimTime,
    },
    #[error("model assertion failed: {0}")]
    Model(String),
}

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub kind: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Event<E> {}

impl<E> Ord for Event<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<E>>,
    dispatched: u64,
    trace: DefaultHasher,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            dispatched: 0,
            trace: DefaultHasher::new(),
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

    /// Digest of every `(fire_at, seq, target)` dispatched so far.
    pub fn trace_digest(&self) -> u64 {
        self.trace.finish()
    }

    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, kind: E) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduledInPast {
                fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event {
            fire_at,
            seq,
            target,
            kind,
        });
        Ok(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, target: NodeId, kind: E) -> Result<u64, SimError> {
        self.schedule(self.now + delay, target, kind)
    }

    /// Pops the next event if it fires at or before `t_end`, advancing the clock to it.
    pub fn next_until(&mut self, t_end: SimTime) -> Option<Event<E>> {
        if self.queue.peek()?.fire_at > t_end {
            return None;
        }
        let ev = self.queue.pop()?;
        self.now = ev.fire_at;
        self.dispatched += 1;
        (ev.fire_at, ev.seq, ev.target).hash(&mut self.trace);
        Some(ev)
    }

    /// Moves the clock forward to `t` once no event at or before `t` remains.
    pub fn advance_to(&mut self, t: SimTime) {
        debug_assert!(self.queue.peek().is_none_or(|e| e.fire_at > t));
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches every event with `fire_at <= t_end` through `handler`, then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<(), SimError>
    where
        F: FnMut(&mut Engine<E>, Event<E>) -> Result<(), SimError>,
    {
        while let Some(ev) = self.next_until(t_end) {
            handler(self, ev)?;
        }
        self.advance_to(t_end);
        Ok(())
    }
}
