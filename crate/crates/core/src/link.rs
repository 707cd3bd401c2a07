//! Full-duplex point-to-point links.

use crate::engine::{NodeId, PortId, SimError};
use crate::frames::{wire_bits, EthernetFrame};
use crate::time::SimTime;

pub const DEFAULT_RATE_BPS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// From endpoint `a` toward endpoint `b`.
    AtoB,
    BtoA,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::AtoB => 0,
            Direction::BtoA => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    pub endpoint_a: (NodeId, PortId),
    pub endpoint_b: (NodeId, PortId),
    rate_bps: u64,
    propagation_delay: SimTime,
    busy_until: [SimTime; 2],
}

/// Result of putting a frame on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    /// When the sender's port finishes serializing.
    pub tx_end: SimTime,
    /// When the last bit reaches the far end.
    pub arrival: SimTime,
    pub far_end: (NodeId, PortId),
}

impl Link {
    pub fn new(
        endpoint_a: (NodeId, PortId),
        endpoint_b: (NodeId, PortId),
        rate_bps: u64,
        propagation_delay: SimTime,
    ) -> Self {
        assert!(rate_bps > 0, "link rate must be positive");
        Link {
            endpoint_a,
            endpoint_b,
            rate_bps,
            propagation_delay,
            busy_until: [SimTime::ZERO; 2],
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn propagation_delay(&self) -> SimTime {
        self.propagation_delay
    }

    pub fn serialization(&self, frame: &EthernetFrame) -> SimTime {
        SimTime::for_bits(wire_bits(frame), self.rate_bps)
    }

    /// Direction in which `from` sends, if it is an endpoint of this link.
    pub fn direction_from(&self, from: (NodeId, PortId)) -> Option<Direction> {
        if from == self.endpoint_a {
            Some(Direction::AtoB)
        } else if from == self.endpoint_b {
            Some(Direction::BtoA)
        } else {
            None
        }
    }

    pub fn is_idle(&self, direction: Direction, at: SimTime) -> bool {
        self.busy_until[direction.index()] <= at
    }

    /// Occupies `direction` for the frame's serialization time starting at `start`.
    /// `link_index` only labels the error.
    pub fn transmit(
        &mut self,
        link_index: usize,
        direction: Direction,
        frame: &EthernetFrame,
        start: SimTime,
    ) -> Result<Transmission, SimError> {
        let busy = &mut self.busy_until[direction.index()];
        if *busy > start {
            return Err(SimError::LinkBusy {
                link: link_index,
                direction,
                busy_until: *busy,
                start,
            });
        }
        let tx_end = start + SimTime::for_bits(wire_bits(frame), self.rate_bps);
        *busy = tx_end;
        let far_end = match direction {
            Direction::AtoB => self.endpoint_b,
            Direction::BtoA => self.endpoint_a,
        };
        Ok(Transmission {
            tx_end,
            arrival: tx_end + self.propagation_delay,
            far_end,
        })
    }
}
