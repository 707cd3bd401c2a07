//! SDN controller with two applications: the SRP manager, which keeps the
//! network-wide SR table and installs stream flow entries, and reactive
//! unicast forwarding for ordinary traffic.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, warn};

use crate::control::{ControlKind, ControlMessage, FlowMod, OutPorts};
use crate::engine::{NodeId, PortId};
use crate::frames::{MacAddress, SrpKind, SrpMessage};
use crate::srp::StreamId;
use crate::switch::flow_table::{Action, FlowMatch, MissAction};
use crate::time::SimTime;
use crate::topology::Topology;

pub const STREAM_PRIORITY: u16 = 200;
pub const REACTIVE_PRIORITY: u16 = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ControllerCounters {
    pub packet_in: u64,
    pub packet_out: u64,
    pub flow_mods: u64,
    pub forward_srp_in: u64,
    pub forward_srp_out: u64,
    pub advertise_suppressed: u64,
    pub topology_changes: u64,
    pub unknown_stream: u64,
    /// PacketIns carrying traffic for a registered stream group.
    pub stream_packet_in: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamRecord {
    pub talker_port: PortId,
    pub listener_ports: BTreeSet<PortId>,
    pub descriptor: SrpMessage,
    pub advertised_at: SimTime,
}

#[derive(Debug, Clone, Default)]
struct SwitchInfo {
    ports: Vec<PortId>,
    ready: bool,
    flow_mods: Vec<(SimTime, FlowMod)>,
}

/// A change the controller made to its SR table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrMutation {
    pub time: SimTime,
    pub switch: NodeId,
    pub stream: StreamId,
    pub kind: SrpKind,
    pub port: PortId,
}

#[derive(Debug, Clone)]
pub struct Controller {
    topology: Topology,
    switches: BTreeMap<NodeId, SwitchInfo>,
    /// Links between two switches, both directions.
    fabric_ports: BTreeSet<(NodeId, PortId)>,
    sr_table: BTreeMap<(NodeId, StreamId), StreamRecord>,
    mac_table: BTreeMap<MacAddress, (NodeId, PortId)>,
    sr_log: Vec<SrMutation>,
    counters: ControllerCounters,
    next_xid: u32,
}

impl Controller {
    /// `switches` are the managed switch nodes; the topology is used to route between them.
    pub fn new(topology: Topology, switches: impl IntoIterator<Item = NodeId>) -> Self {
        let switches: BTreeMap<NodeId, SwitchInfo> =
            switches.into_iter().map(|s| (s, SwitchInfo::default())).collect();
        let fabric_ports = switches
            .keys()
            .flat_map(|&s| {
                topology
                    .neighbours(s)
                    .iter()
                    .filter(|(_, n, _)| switches.contains_key(n))
                    .map(move |&(p, _, _)| (s, p))
                    .collect::<Vec<_>>()
            })
            .collect();
        Controller {
            topology,
            switches,
            fabric_ports,
            sr_table: BTreeMap::new(),
            mac_table: BTreeMap::new(),
            sr_log: Vec::new(),
            counters: ControllerCounters::default(),
            next_xid: 0x8000_0000,
        }
    }

    pub fn counters(&self) -> &ControllerCounters {
        &self.counters
    }

    pub fn stream_record(&self, switch: NodeId, stream: &StreamId) -> Option<&StreamRecord> {
        self.sr_table.get(&(switch, *stream))
    }

    pub fn sr_log(&self) -> &[SrMutation] {
        &self.sr_log
    }

    pub fn host_location(&self, mac: &MacAddress) -> Option<(NodeId, PortId)> {
        self.mac_table.get(mac).copied()
    }

    /// True once the switch has acknowledged features and received its miss action.
    pub fn is_ready(&self, switch: NodeId) -> bool {
        self.switches.get(&switch).is_some_and(|s| s.ready)
    }

    pub fn flow_mods(&self, switch: NodeId) -> &[(SimTime, FlowMod)] {
        self.switches.get(&switch).map_or(&[], |s| &s.flow_mods)
    }

    fn xid(&mut self) -> u32 {
        let x = self.next_xid;
        self.next_xid = self.next_xid.wrapping_add(1);
        x
    }

    fn flow_mod(&mut self, sw: NodeId, fm: FlowMod, now: SimTime, out: &mut Vec<(NodeId, ControlMessage)>) {
        self.counters.flow_mods += 1;
        if let Some(info) = self.switches.get_mut(&sw) {
            info.flow_mods.push((now, fm.clone()));
        }
        let xid = self.xid();
        out.push((sw, ControlMessage::new(xid, ControlKind::FlowMod(fm))));
    }

    /// Handles one message from `sw`; returns the messages to send, in order.
    pub fn handle(&mut self, sw: NodeId, msg: ControlMessage, now: SimTime) -> Vec<(NodeId, ControlMessage)> {
        let mut out = Vec::new();
        if !self.switches.contains_key(&sw) {
            warn!("controller: message from unmanaged node {}", sw);
            return out;
        }
        match msg.kind {
            ControlKind::Hello => {
                out.push((sw, ControlMessage::new(msg.xid, ControlKind::Hello)));
                let xid = self.xid();
                out.push((sw, ControlMessage::new(xid, ControlKind::FeaturesRequest)));
            }
            ControlKind::FeaturesReply { ports } => {
                self.switches.get_mut(&sw).expect("managed").ports = ports;
                self.flow_mod(sw, FlowMod::SetMissAction(MissAction::ToController), now, &mut out);
                self.switches.get_mut(&sw).expect("managed").ready = true;
                info!("controller: switch {} ready", sw);
            }
            ControlKind::ForwardSrp { srp, in_port } => {
                self.counters.forward_srp_in += 1;
                match srp.kind {
                    SrpKind::TalkerAdvertise => self.on_advertise(sw, msg.xid, srp, in_port, now, &mut out),
                    SrpKind::ListenerReady => self.on_listener_ready(sw, msg.xid, srp, in_port, now, &mut out),
                }
            }
            ControlKind::PacketIn { frame, in_port, .. } => {
                self.counters.packet_in += 1;
                self.on_packet_in(sw, frame, in_port, now, &mut out);
            }
            ControlKind::FeaturesRequest | ControlKind::FlowMod(_) | ControlKind::PacketOut { .. } => {
                warn!("controller: unexpected {} from {}", msg.kind.name(), sw);
            }
        }
        out
    }

    fn on_advertise(
        &mut self,
        sw: NodeId,
        xid: u32,
        srp: SrpMessage,
        in_port: PortId,
        now: SimTime,
        out: &mut Vec<(NodeId, ControlMessage)>,
    ) {
        let key = (sw, srp.stream_id);
        if let Some(rec) = self.sr_table.get(&key) {
            if rec.talker_port == in_port {
                if rec.descriptor.same_descriptor(&srp) && now < rec.advertised_at + srp.interval {
                    self.counters.advertise_suppressed += 1;
                    debug!("controller: duplicate advertise for {} at {} suppressed", srp.stream_id, sw);
                    return;
                }
            } else {
                self.counters.topology_changes += 1;
                warn!(
                    "controller: {} now advertised at {} port {} (was port {})",
                    srp.stream_id, sw, in_port, rec.talker_port
                );
            }
        }
        let listener_ports = match self.sr_table.get(&key) {
            Some(rec) if rec.talker_port == in_port => rec.listener_ports.clone(),
            _ => BTreeSet::new(),
        };
        self.sr_table.insert(
            key,
            StreamRecord {
                talker_port: in_port,
                listener_ports,
                descriptor: srp.clone(),
                advertised_at: now,
            },
        );
        self.sr_log.push(SrMutation {
            time: now,
            switch: sw,
            stream: srp.stream_id,
            kind: SrpKind::TalkerAdvertise,
            port: in_port,
        });
        self.counters.forward_srp_out += 1;
        out.push((sw, ControlMessage::new(xid, ControlKind::ForwardSrp { srp, in_port })));
    }

    fn on_listener_ready(
        &mut self,
        sw: NodeId,
        xid: u32,
        srp: SrpMessage,
        in_port: PortId,
        now: SimTime,
        out: &mut Vec<(NodeId, ControlMessage)>,
    ) {
        let Some(rec) = self.sr_table.get_mut(&(sw, srp.stream_id)) else {
            self.counters.unknown_stream += 1;
            warn!("controller: listener ready for unknown stream {} at {}, dropped", srp.stream_id, sw);
            return;
        };
        rec.listener_ports.insert(in_port);
        let d = &rec.descriptor;
        let flow_match = FlowMatch {
            in_port: Some(rec.talker_port),
            eth_dst: Some(d.dst_group),
            eth_src: Some(d.stream_id.talker),
            vlan_vid: Some(d.vlan.vid()),
            vlan_pcp: Some(d.vlan.pcp()),
        };
        let actions = vec![Action::Output(rec.listener_ports.clone())];
        self.sr_log.push(SrMutation {
            time: now,
            switch: sw,
            stream: srp.stream_id,
            kind: SrpKind::ListenerReady,
            port: in_port,
        });
        // the rule goes out first; the channel is FIFO so it is installed before the relay
        self.flow_mod(
            sw,
            FlowMod::Add {
                flow_match,
                priority: STREAM_PRIORITY,
                actions,
            },
            now,
            out,
        );
        self.counters.forward_srp_out += 1;
        out.push((sw, ControlMessage::new(xid, ControlKind::ForwardSrp { srp, in_port })));
    }

    fn is_stream_group(&self, mac: MacAddress) -> bool {
        self.sr_table.values().any(|r| r.descriptor.dst_group == mac)
    }

    /// Egress port at `sw` toward a learned host location.
    fn port_toward(&self, sw: NodeId, dest: (NodeId, PortId)) -> Option<PortId> {
        if dest.0 == sw {
            return Some(dest.1);
        }
        self.topology.path(sw, dest.0)?.first().map(|&(_, p)| p)
    }

    fn on_packet_in(
        &mut self,
        sw: NodeId,
        frame: crate::frames::EthernetFrame,
        in_port: PortId,
        now: SimTime,
        out: &mut Vec<(NodeId, ControlMessage)>,
    ) {
        if !frame.src.is_multicast() && !self.fabric_ports.contains(&(sw, in_port)) {
            self.mac_table.insert(frame.src, (sw, in_port));
        }
        if self.is_stream_group(frame.dst) {
            self.counters.stream_packet_in += 1;
            warn!(
                "controller: stream traffic for {} reached controller from {} port {}",
                frame.dst, sw, in_port
            );
            return;
        }
        let target = if frame.dst.is_multicast() {
            None
        } else {
            self.mac_table
                .get(&frame.dst)
                .copied()
                .and_then(|loc| self.port_toward(sw, loc))
        };
        let out_ports = match target {
            Some(p) if p == in_port => {
                debug!("controller: {} would hairpin at {}, dropped", frame.dst, sw);
                return;
            }
            Some(p) => {
                let fm = FlowMod::Add {
                    flow_match: FlowMatch {
                        in_port: Some(in_port),
                        eth_dst: Some(frame.dst),
                        eth_src: Some(frame.src),
                        vlan_vid: None,
                        vlan_pcp: None,
                    },
                    priority: REACTIVE_PRIORITY,
                    actions: vec![Action::Output(BTreeSet::from([p]))],
                };
                self.flow_mod(sw, fm, now, out);
                OutPorts::Ports(BTreeSet::from([p]))
            }
            None => OutPorts::Flood,
        };
        self.counters.packet_out += 1;
        let xid = self.xid();
        out.push((
            sw,
            ControlMessage::new(
                xid,
                ControlKind::PacketOut {
                    frame,
                    in_port,
                    out: out_ports,
                },
            ),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::PacketInReason;
    use crate::frames::{ArpKind, ArpMessage, EthernetFrame, Payload, ProtocolAddr, UdpDatagram, VlanTag};
    use crate::srp::SrClass;

    // client0(0) - sw0(1) - sw1(2) - client1(3); switch ports: 0 = host side, 1 = fabric
    const SW0: NodeId = NodeId(1);
    const SW1: NodeId = NodeId(2);
    const C0: MacAddress = MacAddress([0, 0, 0, 0, 0, 1]);
    const C1: MacAddress = MacAddress([0, 0, 0, 0, 0, 2]);
    const G: MacAddress = MacAddress([0x91, 0xe0, 0xf0, 0, 0, 1]);

    fn controller() -> Controller {
        let mut t = Topology::new(4);
        t.connect((NodeId(0), PortId(0)), (SW0, PortId(0)));
        t.connect((SW0, PortId(1)), (SW1, PortId(1)));
        t.connect((SW1, PortId(0)), (NodeId(3), PortId(0)));
        Controller::new(t, [SW0, SW1])
    }

    fn advertise() -> SrpMessage {
        SrpMessage::talker_advertise(
            StreamId::new(C0, 1),
            G,
            VlanTag::new(2, 6).unwrap(),
            150,
            SimTime::from_us(125),
            SrClass::A,
        )
        .unwrap()
    }

    fn fwd(srp: SrpMessage, port: u16) -> ControlMessage {
        ControlMessage::new(
            5,
            ControlKind::ForwardSrp {
                srp,
                in_port: PortId(port),
            },
        )
    }

    fn packet_in(frame: EthernetFrame, port: u16) -> ControlMessage {
        ControlMessage::new(
            9,
            ControlKind::PacketIn {
                frame,
                in_port: PortId(port),
                reason: PacketInReason::TableMiss,
            },
        )
    }

    fn udp(src: MacAddress, dst: MacAddress) -> EthernetFrame {
        EthernetFrame::new(
            src,
            dst,
            None,
            Payload::Udp(UdpDatagram {
                src_addr: ProtocolAddr(1),
                dst_addr: ProtocolAddr(2),
                seq: 0,
                sent_at: SimTime::ZERO,
            }),
            1000,
        )
        .unwrap()
    }

    fn arp_request() -> EthernetFrame {
        EthernetFrame::new(
            C0,
            MacAddress::BROADCAST,
            None,
            Payload::Arp(ArpMessage {
                kind: ArpKind::Request,
                asked: ProtocolAddr(2),
                answer: None,
            }),
            64,
        )
        .unwrap()
    }

    #[test]
    fn bootstrap_sets_miss_action() {
        let mut c = controller();
        let out = c.handle(SW0, ControlMessage::new(1, ControlKind::Hello), SimTime::ZERO);
        let kinds: Vec<_> = out.iter().map(|(_, m)| m.kind.name()).collect();
        assert_eq!(kinds, ["HELLO", "FEATURES_REQUEST"]);
        let out = c.handle(
            SW0,
            ControlMessage::new(out[1].1.xid, ControlKind::FeaturesReply { ports: vec![PortId(0), PortId(1)] }),
            SimTime::ZERO,
        );
        assert_eq!(
            out[0].1.kind,
            ControlKind::FlowMod(FlowMod::SetMissAction(MissAction::ToController))
        );
        assert!(c.is_ready(SW0));
        assert!(!c.is_ready(SW1));
    }

    #[test]
    fn advertise_is_registered_and_echoed() {
        let mut c = controller();
        let out = c.handle(SW0, fwd(advertise(), 0), SimTime::ZERO);
        assert_eq!(out, vec![(SW0, fwd(advertise(), 0))]);
        assert_eq!(c.stream_record(SW0, &advertise().stream_id).unwrap().talker_port, PortId(0));
    }

    #[test]
    fn identical_readvertise_within_interval_suppressed() {
        let mut c = controller();
        c.handle(SW0, fwd(advertise(), 0), SimTime::ZERO);
        assert!(c.handle(SW0, fwd(advertise(), 0), SimTime::from_us(100)).is_empty());
        assert_eq!(c.counters().advertise_suppressed, 1);
        assert_eq!(c.handle(SW0, fwd(advertise(), 0), SimTime::from_us(125)).len(), 1);
    }

    #[test]
    fn advertise_from_new_port_is_topology_change() {
        let mut c = controller();
        c.handle(SW0, fwd(advertise(), 0), SimTime::ZERO);
        let out = c.handle(SW0, fwd(advertise(), 1), SimTime::from_us(1));
        assert_eq!(out.len(), 1);
        assert_eq!(c.counters().topology_changes, 1);
        assert_eq!(c.stream_record(SW0, &advertise().stream_id).unwrap().talker_port, PortId(1));
    }

    #[test]
    fn listener_ready_installs_rule_before_relay() {
        let mut c = controller();
        c.handle(SW1, fwd(advertise(), 1), SimTime::ZERO);
        let out = c.handle(SW1, fwd(advertise().listener_ready(), 0), SimTime::from_us(10));
        assert_eq!(out.len(), 2);
        match &out[0].1.kind {
            ControlKind::FlowMod(FlowMod::Add { flow_match, actions, priority }) => {
                assert_eq!(*priority, STREAM_PRIORITY);
                assert_eq!(
                    *flow_match,
                    FlowMatch {
                        in_port: Some(PortId(1)),
                        eth_dst: Some(G),
                        eth_src: Some(C0),
                        vlan_vid: Some(2),
                        vlan_pcp: Some(6),
                    }
                );
                assert_eq!(*actions, vec![Action::Output(BTreeSet::from([PortId(0)]))]);
            }
            other => panic!("expected flow mod first, got {other:?}"),
        }
        assert_eq!(out[1].1, fwd(advertise().listener_ready(), 0));
    }

    #[test]
    fn second_listener_merges_outputs() {
        let mut c = controller();
        c.handle(SW1, fwd(advertise(), 1), SimTime::ZERO);
        c.handle(SW1, fwd(advertise().listener_ready(), 0), SimTime::ZERO);
        let out = c.handle(SW1, fwd(advertise().listener_ready(), 2), SimTime::ZERO);
        match &out[0].1.kind {
            ControlKind::FlowMod(FlowMod::Add { actions, .. }) => {
                assert_eq!(*actions, vec![Action::Output(BTreeSet::from([PortId(0), PortId(2)]))]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn listener_ready_without_talker_dropped() {
        let mut c = controller();
        assert!(c.handle(SW1, fwd(advertise().listener_ready(), 0), SimTime::ZERO).is_empty());
        assert_eq!(c.counters().unknown_stream, 1);
    }

    #[test]
    fn arp_broadcast_floods_and_learns() {
        let mut c = controller();
        let out = c.handle(SW0, packet_in(arp_request(), 0), SimTime::ZERO);
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].1.kind, ControlKind::PacketOut { out: OutPorts::Flood, .. }));
        assert_eq!(c.host_location(&C0), Some((SW0, PortId(0))));
        // seen again at sw1 via the fabric port: location unchanged
        c.handle(SW1, packet_in(arp_request(), 1), SimTime::ZERO);
        assert_eq!(c.host_location(&C0), Some((SW0, PortId(0))));
    }

    #[test]
    fn known_unicast_installs_reactive_rule() {
        let mut c = controller();
        c.handle(SW1, packet_in(udp(C1, MacAddress::BROADCAST), 0), SimTime::ZERO);
        let out = c.handle(SW0, packet_in(udp(C0, C1), 0), SimTime::ZERO);
        assert_eq!(out.len(), 2);
        match &out[0].1.kind {
            ControlKind::FlowMod(FlowMod::Add { flow_match, actions, priority }) => {
                assert_eq!(*priority, REACTIVE_PRIORITY);
                assert_eq!(flow_match.eth_dst, Some(C1));
                assert_eq!(flow_match.eth_src, Some(C0));
                assert_eq!(flow_match.in_port, Some(PortId(0)));
                assert_eq!(flow_match.vlan_vid, None);
                assert_eq!(*actions, vec![Action::Output(BTreeSet::from([PortId(1)]))]);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(&out[1].1.kind, ControlKind::PacketOut { out: OutPorts::Ports(p), .. } if *p == BTreeSet::from([PortId(1)])));
    }

    #[test]
    fn unknown_unicast_floods_without_rule() {
        let mut c = controller();
        let out = c.handle(SW0, packet_in(udp(C0, C1), 0), SimTime::ZERO);
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].1.kind, ControlKind::PacketOut { out: OutPorts::Flood, .. }));
        assert_eq!(c.counters().flow_mods, 0);
    }

    #[test]
    fn stream_groups_never_get_reactive_rules() {
        let mut c = controller();
        c.handle(SW0, fwd(advertise(), 0), SimTime::ZERO);
        let frame = EthernetFrame::new(
            C0,
            G,
            Some(VlanTag::new(2, 6).unwrap()),
            Payload::StreamData {
                stream_id: StreamId::new(C0, 1),
                seq: 0,
                sent_at: SimTime::ZERO,
            },
            150,
        )
        .unwrap();
        assert!(c.handle(SW0, packet_in(frame, 0), SimTime::ZERO).is_empty());
        assert_eq!(c.counters().stream_packet_in, 1);
    }
}
