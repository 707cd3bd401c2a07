//! Switch-to-controller channel with a fixed delay model.

use serde::Serialize;

use crate::engine::NodeId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ControlDirection {
    /// Switch to controller.
    #[serde(rename = "up")]
    Up,
    /// Controller to switch.
    #[serde(rename = "down")]
    Down,
}

/// One control message as seen by the trace log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ControlTraceEntry {
    pub time_ns: u64,
    pub dir: ControlDirection,
    pub switch: String,
    pub kind: &'static str,
    pub xid: u32,
}

/// Delivery is `send + one_way` toward the switch and `send + one_way + processing`
/// toward the controller. Both delays are constant, so each direction is FIFO.
#[derive(Debug, Clone)]
pub struct ControlChannel {
    pub switch: NodeId,
    pub one_way: SimTime,
    pub processing: SimTime,
    last_delivery: [SimTime; 2],
}

impl ControlChannel {
    pub fn new(switch: NodeId, one_way: SimTime, processing: SimTime) -> Self {
        ControlChannel {
            switch,
            one_way,
            processing,
            last_delivery: [SimTime::ZERO; 2],
        }
    }

    /// Delivery time for a message sent at `sent`.
    pub fn deliver(&mut self, dir: ControlDirection, sent: SimTime) -> SimTime {
        let at = match dir {
            ControlDirection::Up => sent + self.one_way + self.processing,
            ControlDirection::Down => sent + self.one_way,
        };
        let slot = &mut self.last_delivery[dir as usize];
        debug_assert!(at >= *slot, "control channel reordered");
        *slot = at;
        at
    }

    /// Extra time one request/response exchange adds over the dataplane.
    pub fn round_trip(&self) -> SimTime {
        self.one_way + self.processing + self.one_way
    }
}
