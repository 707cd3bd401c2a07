//! Flow table with the five stream-identification match fields.

use std::collections::BTreeSet;

use crate::engine::PortId;
use crate::frames::{EthernetFrame, MacAddress};

/// Absent fields are wildcards; present fields must match exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FlowMatch {
    pub in_port: Option<PortId>,
    pub eth_dst: Option<MacAddress>,
    pub eth_src: Option<MacAddress>,
    pub vlan_vid: Option<u16>,
    pub vlan_pcp: Option<u8>,
}

impl FlowMatch {
    pub fn matches(&self, frame: &EthernetFrame, in_port: PortId) -> bool {
        self.in_port.is_none_or(|p| p == in_port)
            && self.eth_dst.is_none_or(|d| d == frame.dst)
            && self.eth_src.is_none_or(|s| s == frame.src)
            && self.vlan_vid.is_none_or(|v| Some(v) == frame.vid())
            && self.vlan_pcp.is_none_or(|p| frame.vlan.is_some_and(|t| t.pcp() == p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Output(BTreeSet<PortId>),
    ToController,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissAction {
    #[default]
    Drop,
    ToController,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub flow_match: FlowMatch,
    pub priority: u16,
    pub actions: Vec<Action>,
    pub install_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("flow entry must carry at least one action")]
pub struct EmptyActions;

#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
    miss_action: MissAction,
    next_seq: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn miss_action(&self) -> MissAction {
        self.miss_action
    }

    pub fn set_miss_action(&mut self, action: MissAction) {
        self.miss_action = action;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    /// Adds an entry. An existing entry with identical match and priority has its
    /// actions replaced in place and keeps its install sequence.
    pub fn install(&mut self, flow_match: FlowMatch, priority: u16, actions: Vec<Action>) -> Result<u64, EmptyActions> {
        if actions.is_empty() {
            return Err(EmptyActions);
        }
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.flow_match == flow_match && e.priority == priority)
        {
            e.actions = actions;
            return Ok(e.install_seq);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(FlowEntry {
            flow_match,
            priority,
            actions,
            install_seq: seq,
        });
        Ok(seq)
    }

    /// Highest-priority matching entry; equal priorities go to the earliest installed.
    pub fn lookup(&self, frame: &EthernetFrame, in_port: PortId) -> Option<&FlowEntry> {
        let mut best: Option<&FlowEntry> = None;
        for e in &self.entries {
            if !e.flow_match.matches(frame, in_port) {
                continue;
            }
            best = match best {
                Some(b) if (b.priority, std::cmp::Reverse(b.install_seq)) >= (e.priority, std::cmp::Reverse(e.install_seq)) => Some(b),
                _ => Some(e),
            };
        }
        best
    }
}
