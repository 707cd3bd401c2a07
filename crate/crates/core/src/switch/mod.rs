//! Time-sensitive switch: ingress filtering, forwarding (flow table or built-in
//! bridging), stream registration and TSN egress control.
//!
//! The pipeline for a received frame is filter, then forwarding decision, then
//! enqueue on the egress ports. SRP frames are trapped before the forwarding
//! stage: an SDN-managed switch relays them to the controller, a standalone
//! switch processes them locally.

pub mod cbs;
pub mod egress;
pub mod flow_table;
pub mod sr_table;

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};

use crate::control::{ControlKind, ControlMessage, FlowMod, OutPorts, PacketInReason};
use crate::engine::PortId;
use crate::frames::{EthernetFrame, MacAddress, Payload, SrpKind, SrpMessage};
use crate::srp::Reservation;
use crate::time::SimTime;

use egress::EgressPort;
use flow_table::{Action, FlowMatch, FlowTable, MissAction};
use sr_table::{FilterVerdict, IngressFilter, SrTable};

/// Destination of MSRP frames.
pub const SRP_GROUP: MacAddress = MacAddress([0x01, 0x80, 0xc2, 0x00, 0x00, 0x0e]);
pub const SRP_FRAME_BYTES: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardingMode {
    /// Flow-table forwarding under controller management.
    Sdn,
    /// Built-in bridging: SR-table forwarding for streams, MAC learning otherwise.
    Standalone,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwitchCounters {
    pub received: u64,
    pub forwarded: u64,
    pub dropped_filter: u64,
    pub dropped_miss: u64,
    pub dropped_action: u64,
    pub dropped_queue: u64,
    pub sent_to_controller: u64,
    /// Stream data frames that found no flow entry.
    pub stream_miss: u64,
    pub srp_unknown_stream: u64,
    pub admission_rejected: u64,
}

/// Pipeline stages a frame went through, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stage {
    Filter(FilterVerdict),
    SrpTrap,
    Lookup { hit: bool },
    Enqueue(PortId),
    ToController,
    Drop,
}

#[derive(Debug, Clone, Default)]
pub struct Effects {
    /// Egress ports that received a frame.
    pub enqueued: BTreeSet<PortId>,
    pub to_controller: Vec<ControlMessage>,
}

#[derive(Debug, Clone, Default)]
pub struct IngressReport {
    pub stages: Vec<Stage>,
    pub effects: Effects,
}

/// Entry of the switch's own state-change log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwitchLogKind {
    MissActionSet(MissAction),
    FlowInstalled { flow_match: FlowMatch, actions: Vec<Action> },
    TalkerRegistered { stream: crate::srp::StreamId, port: PortId },
    ListenerRegistered { stream: crate::srp::StreamId, port: PortId },
    SrpSent { kind: SrpKind, stream: crate::srp::StreamId, ports: BTreeSet<PortId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchLogEntry {
    pub time: SimTime,
    pub kind: SwitchLogKind,
}

#[derive(Debug, Clone)]
pub struct Switch {
    pub name: String,
    mode: ForwardingMode,
    ports: Vec<EgressPort>,
    pub flow_table: FlowTable,
    pub sr_table: SrTable,
    pub filter: IngressFilter,
    mac_table: BTreeMap<MacAddress, PortId>,
    counters: SwitchCounters,
    next_xid: u32,
    log: Vec<SwitchLogEntry>,
}

impl Switch {
    pub fn new(name: impl Into<String>, mode: ForwardingMode, ports: Vec<EgressPort>) -> Self {
        Switch {
            name: name.into(),
            mode,
            ports,
            flow_table: FlowTable::new(),
            sr_table: SrTable::new(),
            filter: IngressFilter::new(),
            mac_table: BTreeMap::new(),
            counters: SwitchCounters::default(),
            next_xid: 1,
            log: Vec::new(),
        }
    }

    pub fn mode(&self) -> ForwardingMode {
        self.mode
    }

    pub fn port_ids(&self) -> impl Iterator<Item = PortId> + '_ {
        (0..self.ports.len()).map(|p| PortId(p as u16))
    }

    pub fn port(&self, p: PortId) -> &EgressPort {
        &self.ports[p.0 as usize]
    }

    pub fn port_mut(&mut self, p: PortId) -> &mut EgressPort {
        &mut self.ports[p.0 as usize]
    }

    pub fn counters(&self) -> SwitchCounters {
        let mut c = self.counters.clone();
        c.dropped_filter = self.filter.drops();
        c
    }

    pub fn log(&self) -> &[SwitchLogEntry] {
        &self.log
    }

    fn xid(&mut self) -> u32 {
        let x = self.next_xid;
        self.next_xid += 1;
        x
    }

    /// Greeting sent when the control connection comes up.
    pub fn hello(&mut self) -> ControlMessage {
        ControlMessage::new(self.xid(), ControlKind::Hello)
    }

    fn flood_ports(&self, in_port: PortId) -> BTreeSet<PortId> {
        self.port_ids().filter(|&p| p != in_port).collect()
    }

    fn enqueue_on(&mut self, frame: &EthernetFrame, ports: &BTreeSet<PortId>, now: SimTime, report: &mut IngressReport) {
        for &p in ports {
            if p.0 as usize >= self.ports.len() {
                warn!("{}: output to nonexistent port {}", self.name, p);
                continue;
            }
            match self.ports[p.0 as usize].enqueue(frame.clone(), now) {
                Ok(()) => {
                    report.stages.push(Stage::Enqueue(p));
                    report.effects.enqueued.insert(p);
                }
                Err(e) => {
                    debug!("{}: port {}: {}", self.name, p, e);
                    self.counters.dropped_queue += 1;
                }
            }
        }
        if !report.effects.enqueued.is_empty() {
            self.counters.forwarded += 1;
        }
    }

    /// Runs the ingress pipeline for a frame received on `in_port`.
    pub fn ingress(&mut self, frame: EthernetFrame, in_port: PortId, now: SimTime) -> IngressReport {
        let mut report = IngressReport::default();
        self.counters.received += 1;

        let verdict = self.filter.check(&frame, in_port);
        report.stages.push(Stage::Filter(verdict));
        if let FilterVerdict::WrongPort { expected } = verdict {
            warn!(
                "{}: stream frame for {} on port {}, expected {}",
                self.name, frame.dst, in_port, expected
            );
            report.stages.push(Stage::Drop);
            return report;
        }

        if let Payload::Srp(srp) = &frame.payload {
            report.stages.push(Stage::SrpTrap);
            match self.mode {
                ForwardingMode::Sdn => {
                    let msg = ControlMessage::new(
                        self.xid(),
                        ControlKind::ForwardSrp {
                            srp: srp.clone(),
                            in_port,
                        },
                    );
                    self.counters.sent_to_controller += 1;
                    report.stages.push(Stage::ToController);
                    report.effects.to_controller.push(msg);
                }
                ForwardingMode::Standalone => {
                    let srp = srp.clone();
                    let eff = self.apply_srp(&srp, in_port, now);
                    report.effects.enqueued.extend(eff.enqueued);
                }
            }
            return report;
        }

        match self.mode {
            ForwardingMode::Sdn => self.flow_forward(frame, in_port, now, &mut report),
            ForwardingMode::Standalone => self.bridge_forward(frame, in_port, now, &mut report),
        }
        report
    }

    fn flow_forward(&mut self, frame: EthernetFrame, in_port: PortId, now: SimTime, report: &mut IngressReport) {
        let actions = self.flow_table.lookup(&frame, in_port).map(|e| e.actions.clone());
        report.stages.push(Stage::Lookup { hit: actions.is_some() });
        let actions = match actions {
            Some(a) => a,
            None => {
                if frame.payload.is_stream_data() {
                    self.counters.stream_miss += 1;
                }
                match self.flow_table.miss_action() {
                    MissAction::Drop => {
                        self.counters.dropped_miss += 1;
                        report.stages.push(Stage::Drop);
                        return;
                    }
                    MissAction::ToController => {
                        self.packet_in(frame, in_port, PacketInReason::TableMiss, report);
                        return;
                    }
                }
            }
        };
        for action in actions {
            match action {
                Action::Output(ports) => self.enqueue_on(&frame, &ports, now, report),
                Action::ToController => {
                    self.packet_in(frame.clone(), in_port, PacketInReason::Action, report)
                }
                Action::Drop => {
                    self.counters.dropped_action += 1;
                    report.stages.push(Stage::Drop);
                }
            }
        }
    }

    fn packet_in(&mut self, frame: EthernetFrame, in_port: PortId, reason: PacketInReason, report: &mut IngressReport) {
        let msg = ControlMessage::new(
            self.xid(),
            ControlKind::PacketIn {
                frame,
                in_port,
                reason,
            },
        );
        self.counters.sent_to_controller += 1;
        report.stages.push(Stage::ToController);
        report.effects.to_controller.push(msg);
    }

    fn bridge_forward(&mut self, frame: EthernetFrame, in_port: PortId, now: SimTime, report: &mut IngressReport) {
        if frame.vid().is_some() && frame.dst.is_multicast() {
            if let Some((_, reg)) = self.sr_table.lookup_frame(&frame) {
                let ports = reg.listener_ports.clone();
                report.stages.push(Stage::Lookup { hit: true });
                if ports.is_empty() {
                    report.stages.push(Stage::Drop);
                    return;
                }
                self.enqueue_on(&frame, &ports, now, report);
                return;
            }
        }
        if frame.payload.is_stream_data() {
            // unregistered stream traffic is not bridged
            self.counters.stream_miss += 1;
            self.counters.dropped_miss += 1;
            report.stages.push(Stage::Lookup { hit: false });
            report.stages.push(Stage::Drop);
            return;
        }
        if !frame.src.is_multicast() {
            self.mac_table.insert(frame.src, in_port);
        }
        let known = (!frame.dst.is_multicast())
            .then(|| self.mac_table.get(&frame.dst).copied())
            .flatten();
        report.stages.push(Stage::Lookup { hit: known.is_some() });
        let ports = match known {
            Some(p) if p == in_port => {
                report.stages.push(Stage::Drop);
                return;
            }
            Some(p) => BTreeSet::from([p]),
            None => self.flood_ports(in_port),
        };
        self.enqueue_on(&frame, &ports, now, report);
    }

    /// Applies an SRP message to the SR table and forwards it: advertises are
    /// broadcast on every other port, listener readies go out the talker port.
    pub fn apply_srp(&mut self, srp: &SrpMessage, in_port: PortId, now: SimTime) -> Effects {
        let mut report = IngressReport::default();
        let ports = match srp.kind {
            SrpKind::TalkerAdvertise => {
                self.sr_table.register_talker(srp, in_port);
                self.filter.expect(srp.dst_group, srp.vlan.vid(), in_port);
                self.log.push(SwitchLogEntry {
                    time: now,
                    kind: SwitchLogKind::TalkerRegistered {
                        stream: srp.stream_id,
                        port: in_port,
                    },
                });
                self.flood_ports(in_port)
            }
            SrpKind::ListenerReady => {
                let talker_port = match self.sr_table.register_listener(srp.stream_id, in_port) {
                    Ok(_) => self.sr_table.get(&srp.stream_id).map(|r| r.talker_port),
                    Err(e) => {
                        warn!("{}: {}, dropped", self.name, e);
                        self.counters.srp_unknown_stream += 1;
                        return Effects::default();
                    }
                };
                let Some(talker_port) = talker_port else {
                    return Effects::default();
                };
                self.log.push(SwitchLogEntry {
                    time: now,
                    kind: SwitchLogKind::ListenerRegistered {
                        stream: srp.stream_id,
                        port: in_port,
                    },
                });
                let reservation = Reservation::new(
                    srp.stream_id,
                    srp.sr_class,
                    srp.vlan.pcp(),
                    srp.max_frame_bytes,
                    srp.interval,
                );
                let admitted = match reservation {
                    Ok(r) => self.port_mut(in_port).admit(in_port, r, now).map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                if let Err(e) = admitted {
                    warn!("{}: {}", self.name, e);
                    self.counters.admission_rejected += 1;
                    return Effects::default();
                }
                BTreeSet::from([talker_port])
            }
        };
        let frame = EthernetFrame::new(
            srp.stream_id.talker,
            SRP_GROUP,
            None,
            Payload::Srp(srp.clone()),
            SRP_FRAME_BYTES,
        )
        .expect("SRP frame within size limits");
        self.enqueue_on(&frame, &ports, now, &mut report);
        self.log.push(SwitchLogEntry {
            time: now,
            kind: SwitchLogKind::SrpSent {
                kind: srp.kind,
                stream: srp.stream_id,
                ports: report.effects.enqueued.clone(),
            },
        });
        report.effects
    }

    /// Handles a message from the controller.
    pub fn handle_control(&mut self, msg: ControlMessage, now: SimTime) -> Effects {
        let mut report = IngressReport::default();
        match msg.kind {
            ControlKind::Hello => {}
            ControlKind::FeaturesRequest => {
                let ports = self.port_ids().collect();
                report
                    .effects
                    .to_controller
                    .push(ControlMessage::new(msg.xid, ControlKind::FeaturesReply { ports }));
            }
            ControlKind::FlowMod(FlowMod::SetMissAction(a)) => {
                self.flow_table.set_miss_action(a);
                self.log.push(SwitchLogEntry {
                    time: now,
                    kind: SwitchLogKind::MissActionSet(a),
                });
            }
            ControlKind::FlowMod(FlowMod::Add {
                flow_match,
                priority,
                actions,
            }) => match self.flow_table.install(flow_match, priority, actions.clone()) {
                Ok(_) => self.log.push(SwitchLogEntry {
                    time: now,
                    kind: SwitchLogKind::FlowInstalled { flow_match, actions },
                }),
                Err(e) => warn!("{}: rejected flow mod: {}", self.name, e),
            },
            ControlKind::PacketOut { frame, in_port, out } => {
                let ports = match out {
                    OutPorts::Ports(p) => p,
                    OutPorts::Flood => self.flood_ports(in_port),
                };
                self.enqueue_on(&frame, &ports, now, &mut report);
            }
            ControlKind::ForwardSrp { srp, in_port } => {
                return self.apply_srp(&srp, in_port, now);
            }
            ControlKind::FeaturesReply { .. } | ControlKind::PacketIn { .. } => {
                warn!("{}: unexpected {} from controller", self.name, msg.kind.name());
            }
        }
        report.effects
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{ArpKind, ArpMessage, ProtocolAddr, UdpDatagram, VlanTag};
    use crate::srp::{SrClass, StreamId};

    const T: MacAddress = MacAddress([0, 0, 0, 0, 0, 1]);
    const L: MacAddress = MacAddress([0, 0, 0, 0, 0, 2]);
    const G: MacAddress = MacAddress([0x91, 0xe0, 0xf0, 0, 0, 1]);

    fn sw(mode: ForwardingMode, ports: usize) -> Switch {
        Switch::new(
            "sw",
            mode,
            (0..ports).map(|_| EgressPort::with_defaults(100_000_000)).collect(),
        )
    }

    fn advertise() -> SrpMessage {
        SrpMessage::talker_advertise(
            StreamId::new(T, 1),
            G,
            VlanTag::new(2, 6).unwrap(),
            150,
            SimTime::from_us(125),
            SrClass::A,
        )
        .unwrap()
    }

    fn stream_frame(seq: u64) -> EthernetFrame {
        EthernetFrame::new(
            T,
            G,
            Some(VlanTag::new(2, 6).unwrap()),
            Payload::StreamData {
                stream_id: StreamId::new(T, 1),
                seq,
                sent_at: SimTime::ZERO,
            },
            150,
        )
        .unwrap()
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

    fn srp_frame(msg: SrpMessage) -> EthernetFrame {
        EthernetFrame::new(msg.stream_id.talker, SRP_GROUP, None, Payload::Srp(msg), 64).unwrap()
    }

    #[test]
    fn filter_precedes_lookup() {
        let mut s = sw(ForwardingMode::Sdn, 3);
        s.filter.expect(G, 2, PortId(0));
        let r = s.ingress(stream_frame(0), PortId(1), SimTime::ZERO);
        assert_eq!(
            r.stages,
            vec![Stage::Filter(FilterVerdict::WrongPort { expected: PortId(0) }), Stage::Drop]
        );
        assert_eq!(s.counters().dropped_filter, 1);
        assert_eq!(s.counters().stream_miss, 0);
    }

    #[test]
    fn multicast_output_set() {
        let mut s = sw(ForwardingMode::Sdn, 4);
        s.flow_table
            .install(
                FlowMatch {
                    eth_dst: Some(G),
                    ..Default::default()
                },
                10,
                vec![Action::Output([PortId(2), PortId(3)].into())],
            )
            .unwrap();
        let r = s.ingress(stream_frame(0), PortId(0), SimTime::ZERO);
        assert_eq!(r.effects.enqueued, BTreeSet::from([PortId(2), PortId(3)]));
        assert_eq!(s.port(PortId(2)).queue_len(6), 1);
        assert_eq!(s.port(PortId(3)).queue_len(6), 1);
        let tail = &r.stages[1..];
        assert_eq!(
            tail,
            [Stage::Lookup { hit: true }, Stage::Enqueue(PortId(2)), Stage::Enqueue(PortId(3))]
        );
    }

    #[test]
    fn miss_goes_to_controller_once_configured() {
        let mut s = sw(ForwardingMode::Sdn, 2);
        let r = s.ingress(udp(T, L), PortId(0), SimTime::ZERO);
        assert!(r.effects.to_controller.is_empty());
        assert_eq!(s.counters().dropped_miss, 1);

        s.handle_control(
            ControlMessage::new(1, ControlKind::FlowMod(FlowMod::SetMissAction(MissAction::ToController))),
            SimTime::ZERO,
        );
        let r = s.ingress(udp(T, L), PortId(0), SimTime::ZERO);
        assert_eq!(r.effects.to_controller.len(), 1);
        assert!(matches!(
            r.effects.to_controller[0].kind,
            ControlKind::PacketIn {
                reason: PacketInReason::TableMiss,
                ..
            }
        ));
    }

    #[test]
    fn sdn_switch_relays_srp() {
        let mut s = sw(ForwardingMode::Sdn, 3);
        let r = s.ingress(srp_frame(advertise()), PortId(0), SimTime::ZERO);
        assert!(r.effects.enqueued.is_empty());
        assert!(s.sr_table.is_empty());
        match &r.effects.to_controller[0].kind {
            ControlKind::ForwardSrp { srp, in_port } => {
                assert_eq!(*srp, advertise());
                assert_eq!(*in_port, PortId(0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn returned_advertise_updates_table_and_broadcasts() {
        let mut s = sw(ForwardingMode::Sdn, 3);
        let eff = s.handle_control(
            ControlMessage::new(
                7,
                ControlKind::ForwardSrp {
                    srp: advertise(),
                    in_port: PortId(0),
                },
            ),
            SimTime::ZERO,
        );
        assert_eq!(eff.enqueued, BTreeSet::from([PortId(1), PortId(2)]));
        let reg = s.sr_table.get(&StreamId::new(T, 1)).unwrap();
        assert_eq!(reg.talker_port, PortId(0));
        assert_eq!(s.filter.expected_port(G, 2), Some(PortId(0)));
    }

    #[test]
    fn listener_ready_reserves_and_heads_to_talker() {
        let mut s = sw(ForwardingMode::Standalone, 3);
        s.ingress(srp_frame(advertise()), PortId(0), SimTime::ZERO);
        let r = s.ingress(srp_frame(advertise().listener_ready()), PortId(2), SimTime::ZERO);
        assert_eq!(r.effects.enqueued, BTreeSet::from([PortId(0)]));
        assert_eq!(
            s.sr_table.get(&StreamId::new(T, 1)).unwrap().listener_ports,
            BTreeSet::from([PortId(2)])
        );
        assert_eq!(s.port(PortId(2)).shaper(6).unwrap().idle_slope_bps(), 10_880_000);
        // stream data now bridges to the listener port only
        let r = s.ingress(stream_frame(0), PortId(0), SimTime::ZERO);
        assert_eq!(r.effects.enqueued, BTreeSet::from([PortId(2)]));
    }

    #[test]
    fn listener_ready_for_unknown_stream_dropped() {
        let mut s = sw(ForwardingMode::Standalone, 2);
        let mut lr = advertise().listener_ready();
        lr.stream_id = StreamId::new(T, 99);
        let r = s.ingress(srp_frame(lr), PortId(1), SimTime::ZERO);
        assert!(r.effects.enqueued.is_empty());
        assert_eq!(s.counters().srp_unknown_stream, 1);
    }

    #[test]
    fn standalone_learns_and_floods() {
        let mut s = sw(ForwardingMode::Standalone, 3);
        let arp = EthernetFrame::new(
            T,
            MacAddress::BROADCAST,
            None,
            Payload::Arp(ArpMessage {
                kind: ArpKind::Request,
                asked: ProtocolAddr(2),
                answer: None,
            }),
            64,
        )
        .unwrap();
        let r = s.ingress(arp, PortId(0), SimTime::ZERO);
        assert_eq!(r.effects.enqueued, BTreeSet::from([PortId(1), PortId(2)]));
        let r = s.ingress(udp(L, T), PortId(2), SimTime::ZERO);
        assert_eq!(r.effects.enqueued, BTreeSet::from([PortId(0)]));
        // unknown unicast floods
        let r = s.ingress(udp(T, MacAddress([0, 0, 0, 0, 0, 7])), PortId(0), SimTime::ZERO);
        assert_eq!(r.effects.enqueued, BTreeSet::from([PortId(1), PortId(2)]));
    }

    #[test]
    fn packet_out_flood_skips_ingress() {
        let mut s = sw(ForwardingMode::Sdn, 3);
        let eff = s.handle_control(
            ControlMessage::new(
                3,
                ControlKind::PacketOut {
                    frame: udp(T, L),
                    in_port: PortId(1),
                    out: OutPorts::Flood,
                },
            ),
            SimTime::ZERO,
        );
        assert_eq!(eff.enqueued, BTreeSet::from([PortId(0), PortId(2)]));
    }

    #[test]
    fn features_reply_lists_ports() {
        let mut s = sw(ForwardingMode::Sdn, 2);
        let eff = s.handle_control(ControlMessage::new(4, ControlKind::FeaturesRequest), SimTime::ZERO);
        assert_eq!(
            eff.to_controller,
            vec![ControlMessage::new(
                4,
                ControlKind::FeaturesReply {
                    ports: vec![PortId(0), PortId(1)]
                }
            )]
        );
    }
}
