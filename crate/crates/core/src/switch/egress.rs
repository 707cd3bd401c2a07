//! Egress port: eight priority queues, credit-based shapers for reserved
//! classes and strict-priority transmission selection without preemption.

use std::collections::VecDeque;

use crate::engine::PortId;
use crate::frames::{wire_bits, EthernetFrame};
use crate::srp::{self, Admission, Rejected, Reservation, ReservationLedger};
use crate::switch::cbs::CreditState;
use crate::time::SimTime;

pub const NUM_QUEUES: usize = 8;
pub const DEFAULT_QUEUE_CAPACITY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EgressMode {
    /// Priority queues with credit-based shaping of reserved classes.
    #[default]
    Tsn,
    /// Single FIFO, no priorities, no shaping. Only used for fault injection.
    Fifo,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EgressCounters {
    pub enqueued: u64,
    pub transmitted: u64,
    pub dropped_overflow: u64,
    pub max_depth: [usize; NUM_QUEUES],
    pub transmitted_bits: [u64; NUM_QUEUES],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("queue {pcp} full ({capacity} frames), frame dropped")]
pub struct QueueFull {
    pub pcp: u8,
    pub capacity: usize,
}

#[derive(Debug, Clone)]
pub struct EgressPort {
    port_rate_bps: u64,
    mode: EgressMode,
    capacity: usize,
    queues: [VecDeque<EthernetFrame>; NUM_QUEUES],
    shapers: [Option<CreditState>; NUM_QUEUES],
    reservations: ReservationLedger,
    tx_busy_until: SimTime,
    transmitting: Option<u8>,
    counters: EgressCounters,
}

impl EgressPort {
    pub fn new(port_rate_bps: u64, capacity: usize, admission_fraction: f64, mode: EgressMode) -> Self {
        EgressPort {
            port_rate_bps,
            mode,
            capacity,
            queues: Default::default(),
            shapers: Default::default(),
            reservations: ReservationLedger::new(port_rate_bps, admission_fraction),
            tx_busy_until: SimTime::ZERO,
            transmitting: None,
            counters: EgressCounters::default(),
        }
    }

    pub fn with_defaults(port_rate_bps: u64) -> Self {
        Self::new(
            port_rate_bps,
            DEFAULT_QUEUE_CAPACITY,
            srp::DEFAULT_ADMISSION_FRACTION,
            EgressMode::Tsn,
        )
    }

    pub fn port_rate_bps(&self) -> u64 {
        self.port_rate_bps
    }

    pub fn mode(&self) -> EgressMode {
        self.mode
    }

    pub fn counters(&self) -> &EgressCounters {
        &self.counters
    }

    pub fn reservations(&self) -> &ReservationLedger {
        &self.reservations
    }

    pub fn shaper(&self, pcp: u8) -> Option<&CreditState> {
        self.shapers[pcp as usize].as_ref()
    }

    pub fn queue_len(&self, pcp: u8) -> usize {
        self.queues[pcp as usize].len()
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn tx_busy_until(&self) -> SimTime {
        self.tx_busy_until
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting.is_some()
    }

    pub fn is_idle(&self, now: SimTime) -> bool {
        self.transmitting.is_none() && now >= self.tx_busy_until
    }

    pub fn serialization(&self, frame: &EthernetFrame) -> SimTime {
        SimTime::for_bits(wire_bits(frame), self.port_rate_bps)
    }

    fn queue_index(&self, frame: &EthernetFrame) -> usize {
        match self.mode {
            EgressMode::Tsn => frame.pcp() as usize,
            EgressMode::Fifo => 0,
        }
    }

    /// Brings every shaper's credit up to `now`.
    fn advance(&mut self, now: SimTime) {
        for (pcp, shaper) in self.shapers.iter_mut().enumerate() {
            if let Some(cs) = shaper {
                let transmitting = self.transmitting == Some(pcp as u8);
                cs.update(now, transmitting, !self.queues[pcp].is_empty());
            }
        }
    }

    /// Reserves bandwidth for a stream and raises the idle slope of its class accordingly.
    pub fn admit(&mut self, port: PortId, reservation: Reservation, now: SimTime) -> Result<Admission, Rejected> {
        let outcome = srp::admit(&mut self.reservations, port, reservation)?;
        if self.mode == EgressMode::Tsn {
            self.advance(now);
            let slope = self.reservations.class_bps(reservation.pcp);
            let rate = self.port_rate_bps;
            let shaper = self.shapers[reservation.pcp as usize].get_or_insert_with(|| {
                let mut cs = CreditState::new(0, rate);
                cs.update(now, false, false);
                cs
            });
            shaper.set_idle_slope(slope);
        }
        Ok(outcome)
    }

    /// Appends the frame to its priority queue (untagged frames go to queue 0).
    pub fn enqueue(&mut self, frame: EthernetFrame, now: SimTime) -> Result<(), QueueFull> {
        let q = self.queue_index(&frame);
        if self.queues[q].len() >= self.capacity {
            self.counters.dropped_overflow += 1;
            return Err(QueueFull {
                pcp: q as u8,
                capacity: self.capacity,
            });
        }
        self.advance(now);
        self.queues[q].push_back(frame);
        self.counters.enqueued += 1;
        let depth = self.queues[q].len();
        if depth > self.counters.max_depth[q] {
            self.counters.max_depth[q] = depth;
        }
        Ok(())
    }

    fn eligible(&self, q: usize) -> bool {
        !self.queues[q].is_empty() && self.shapers[q].as_ref().is_none_or(CreditState::is_eligible)
    }

    /// Picks the next frame to send: the highest non-empty queue that is unshaped or has
    /// non-negative credit. Returns `None` while a frame is on the wire.
    pub fn transmission_selection(&mut self, now: SimTime) -> Option<EthernetFrame> {
        if !self.is_idle(now) {
            return None;
        }
        self.advance(now);
        let q = (0..NUM_QUEUES).rev().find(|&q| self.eligible(q))?;
        debug_assert!(
            ((q + 1)..NUM_QUEUES).all(|h| !self.eligible(h)),
            "strict priority violated"
        );
        let frame = self.queues[q].pop_front()?;
        self.transmitting = Some(q as u8);
        self.tx_busy_until = now + self.serialization(&frame);
        self.counters.transmitted += 1;
        self.counters.transmitted_bits[q] += wire_bits(&frame);
        Some(frame)
    }

    /// Ends the current transmission. Must be called at `tx_busy_until`.
    pub fn finish_transmission(&mut self, now: SimTime) {
        debug_assert_eq!(now, self.tx_busy_until);
        self.advance(now);
        self.transmitting = None;
        // queue-empty credit reset applies immediately
        self.advance(now);
    }

    /// When a credit-blocked class becomes eligible, if the port is idle and some class waits.
    pub fn next_eligible_at(&self) -> Option<SimTime> {
        if self.transmitting.is_some() {
            return None;
        }
        (0..NUM_QUEUES)
            .filter(|&q| !self.queues[q].is_empty())
            .filter_map(|q| self.shapers[q].as_ref())
            .filter(|cs| !cs.is_eligible())
            .filter_map(CreditState::eligible_at)
            .min()
    }
}
