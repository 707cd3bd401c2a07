//! Southbound control plane: message types, channel delay model and the controller.

pub mod channel;
pub mod controller;

use std::collections::BTreeSet;
use std::fmt;

use crate::engine::PortId;
use crate::frames::{EthernetFrame, SrpMessage};
use crate::switch::flow_table::{Action, FlowMatch, MissAction};

pub use channel::{ControlChannel, ControlDirection, ControlTraceEntry};
pub use controller::{Controller, ControllerCounters};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketInReason {
    TableMiss,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutPorts {
    Ports(BTreeSet<PortId>),
    /// Every port except the one the frame came in on.
    Flood,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FlowMod {
    /// Adds an entry, or replaces the actions of an entry with the same match and priority.
    Add {
        flow_match: FlowMatch,
        priority: u16,
        actions: Vec<Action>,
    },
    SetMissAction(MissAction),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlKind {
    Hello,
    FeaturesRequest,
    FeaturesReply { ports: Vec<PortId> },
    FlowMod(FlowMod),
    PacketIn {
        frame: EthernetFrame,
        in_port: PortId,
        reason: PacketInReason,
    },
    PacketOut {
        frame: EthernetFrame,
        in_port: PortId,
        out: OutPorts,
    },
    /// An SRP message relayed verbatim between switch and controller.
    ForwardSrp { srp: SrpMessage, in_port: PortId },
}

impl ControlKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControlKind::Hello => "HELLO",
            ControlKind::FeaturesRequest => "FEATURES_REQUEST",
            ControlKind::FeaturesReply { .. } => "FEATURES_REPLY",
            ControlKind::FlowMod(_) => "FLOW_MOD",
            ControlKind::PacketIn { .. } => "PACKET_IN",
            ControlKind::PacketOut { .. } => "PACKET_OUT",
            ControlKind::ForwardSrp { .. } => "FORWARD_SRP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMessage {
    /// Correlation id; replies echo the id of the request.
    pub xid: u32,
    pub kind: ControlKind,
}

impl ControlMessage {
    pub fn new(xid: u32, kind: ControlKind) -> Self {
        ControlMessage { xid, kind }
    }
}

impl fmt::Display for ControlMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.kind.name(), self.xid)
    }
}
