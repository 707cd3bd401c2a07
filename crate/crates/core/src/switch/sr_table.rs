//! Registered talkers and listeners, plus the per-stream ingress filter derived from them.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::PortId;
use crate::frames::{EthernetFrame, MacAddress, SrpMessage};
use crate::srp::StreamId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRegistration {
    pub talker_port: PortId,
    pub listener_ports: BTreeSet<PortId>,
    /// The advertise that created the registration.
    pub descriptor: SrpMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("listener ready for unknown stream {0}")]
pub struct UnknownStream(pub StreamId);

#[derive(Debug, Clone, Default)]
pub struct SrTable {
    streams: BTreeMap<StreamId, StreamRegistration>,
}

impl SrTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: &StreamId) -> Option<&StreamRegistration> {
        self.streams.get(id)
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StreamId, &StreamRegistration)> {
        self.streams.iter()
    }

    /// Records the talker side. A new talker port replaces the old one and clears listeners.
    pub fn register_talker(&mut self, advertise: &SrpMessage, in_port: PortId) -> &StreamRegistration {
        let reg = self
            .streams
            .entry(advertise.stream_id)
            .or_insert_with(|| StreamRegistration {
                talker_port: in_port,
                listener_ports: BTreeSet::new(),
                descriptor: advertise.clone(),
            });
        if reg.talker_port != in_port {
            reg.listener_ports.clear();
        }
        reg.talker_port = in_port;
        reg.descriptor = advertise.clone();
        reg
    }

    /// Adds a listener-facing port. Returns true if the port is new.
    pub fn register_listener(&mut self, stream: StreamId, port: PortId) -> Result<bool, UnknownStream> {
        let reg = self.streams.get_mut(&stream).ok_or(UnknownStream(stream))?;
        Ok(reg.listener_ports.insert(port))
    }

    /// Registration whose listener group and VLAN match the frame.
    pub fn lookup_frame(&self, frame: &EthernetFrame) -> Option<(&StreamId, &StreamRegistration)> {
        let vid = frame.vid()?;
        self.streams
            .iter()
            .find(|(_, r)| r.descriptor.dst_group == frame.dst && r.descriptor.vlan.vid() == vid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVerdict {
    /// Frame does not belong to a filtered stream.
    NotFiltered,
    Pass,
    /// Arrived on a port other than the registered talker port.
    WrongPort { expected: PortId },
}

/// Per-stream expected ingress port, keyed by listener group and VLAN id.
#[derive(Debug, Clone, Default)]
pub struct IngressFilter {
    expected: BTreeMap<(MacAddress, u16), PortId>,
    drops: u64,
}

impl IngressFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn expect(&mut self, dst_group: MacAddress, vid: u16, in_port: PortId) {
        self.expected.insert((dst_group, vid), in_port);
    }

    pub fn expected_port(&self, dst_group: MacAddress, vid: u16) -> Option<PortId> {
        self.expected.get(&(dst_group, vid)).copied()
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Checks the frame and counts a drop on mismatch.
    pub fn check(&mut self, frame: &EthernetFrame, in_port: PortId) -> FilterVerdict {
        let Some(vid) = frame.vid() else {
            return FilterVerdict::NotFiltered;
        };
        match self.expected.get(&(frame.dst, vid)) {
            None => FilterVerdict::NotFiltered,
            Some(&p) if p == in_port => FilterVerdict::Pass,
            Some(&expected) => {
                self.drops += 1;
                FilterVerdict::WrongPort { expected }
            }
        }
    }
}
