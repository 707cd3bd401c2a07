//! Builds the simulated network from a scenario and runs the event loop.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};

use crate::control::controller::{ControllerCounters, SrMutation};
use crate::control::{ControlChannel, ControlDirection, ControlMessage, ControlTraceEntry, Controller};
use crate::engine::{Engine, NodeId, PortId, SimError};
use crate::frames::{EthernetFrame, MacAddress, ProtocolAddr};
use crate::hosts::{Host, HostActions, HostTimer, NIC};
use crate::link::{Direction, Link};
use crate::scenario::config::{NodeKind, ScenarioConfig};
use crate::scenario::metrics::LatencyRecord;
use crate::srp::StreamId;
use crate::switch::egress::{EgressCounters, EgressMode, EgressPort};
use crate::switch::{ForwardingMode, Switch, SwitchCounters, SwitchLogEntry};
use crate::time::SimTime;

#[derive(Debug, Clone)]
pub enum SimEvent {
    /// Last bit of a frame received on `port`.
    Arrival { port: PortId, frame: EthernetFrame },
    /// The egress `port` finished serializing its frame.
    TxDone { port: PortId },
    /// A credit-blocked class on `port` may have become eligible.
    Wake { port: PortId },
    /// A switch opens its control connection.
    Connect,
    /// Control message delivered to a switch.
    FromController(ControlMessage),
    /// Control message delivered to the controller.
    ToController { from: NodeId, msg: ControlMessage },
    Timer(HostTimer),
}

#[derive(Debug, Clone)]
enum Node {
    Host(Box<Host>),
    Switch(Box<Switch>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamTimeline {
    pub stream: StreamId,
    pub talker: String,
    pub advertised_at: Option<SimTime>,
    /// Arrival of the ListenerReady at the talker; the reservation is complete.
    pub reserved_at: Option<SimTime>,
    pub first_send: Option<SimTime>,
    pub sent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpTimeline {
    pub src: ProtocolAddr,
    pub src_mac: MacAddress,
    pub dst: ProtocolAddr,
    pub dst_mac: Option<MacAddress>,
    pub start_at: SimTime,
    pub arp_requests: u32,
    pub resolved_at: Option<SimTime>,
    pub first_send: Option<SimTime>,
    pub sent: u64,
}

#[derive(Debug, Clone)]
pub struct SwitchReport {
    pub node: NodeId,
    pub name: String,
    pub counters: SwitchCounters,
    pub log: Vec<SwitchLogEntry>,
    pub egress: Vec<EgressCounters>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub name: String,
    pub sdn_enabled: bool,
    pub run_until: SimTime,
    pub records: Vec<LatencyRecord>,
    pub control_trace: Vec<ControlTraceEntry>,
    pub switches: Vec<SwitchReport>,
    pub controller: Option<ControllerCounters>,
    pub controller_sr_log: Vec<SrMutation>,
    pub streams: Vec<StreamTimeline>,
    pub udp: Vec<UdpTimeline>,
    /// Frames dropped at host NICs because the queue was full.
    pub host_drops: u64,
    pub warnings: Vec<(SimTime, String)>,
    pub dispatched: u64,
    pub digest: u64,
}

impl RunOutput {
    pub fn switch(&self, name: &str) -> Option<&SwitchReport> {
        self.switches.iter().find(|s| s.name == name)
    }

    /// Stream data frames that found no forwarding entry, network-wide.
    pub fn stream_misses(&self) -> u64 {
        self.switches.iter().map(|s| s.counters.stream_miss).sum()
    }
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    nodes: Vec<Node>,
    links: Vec<Link>,
    port_link: BTreeMap<(NodeId, PortId), (usize, Direction)>,
    controller: Option<Controller>,
    controller_node: NodeId,
    channels: BTreeMap<NodeId, ControlChannel>,
    control_trace: Vec<ControlTraceEntry>,
    wakes: BTreeSet<(NodeId, PortId, SimTime)>,
    records: Vec<LatencyRecord>,
    warnings: Vec<(SimTime, String)>,
    host_drops: u64,
}

impl<'a> World<'a> {
    fn build(cfg: &'a ScenarioConfig) -> Self {
        let mode = if cfg.faults.disable_shaper {
            EgressMode::Fifo
        } else {
            EgressMode::Tsn
        };
        let mut port_rate: BTreeMap<(NodeId, PortId), u64> = BTreeMap::new();
        let mut links = Vec::new();
        let mut port_link = BTreeMap::new();
        for (i, l) in cfg.links.iter().enumerate() {
            links.push(Link::new(l.a, l.b, l.rate_bps, l.propagation));
            port_link.insert(l.a, (i, Direction::AtoB));
            port_link.insert(l.b, (i, Direction::BtoA));
            port_rate.insert(l.a, l.rate_bps);
            port_rate.insert(l.b, l.rate_bps);
        }
        let mut nodes = Vec::new();
        for (i, n) in cfg.nodes.iter().enumerate() {
            let id = NodeId(i);
            let egress = |p: u16| EgressPort::new(port_rate[&(id, PortId(p))], n.queue_capacity, n.admission_fraction, mode);
            match &n.kind {
                NodeKind::Client {
                    mac,
                    ip,
                    processing_delay,
                } => {
                    let mut h = Host::new(n.name.clone(), *mac, *ip, egress(0));
                    h.processing_delay = *processing_delay;
                    nodes.push(Node::Host(Box::new(h)));
                }
                NodeKind::Switch => {
                    let fwd = if cfg.sdn_enabled {
                        ForwardingMode::Sdn
                    } else {
                        ForwardingMode::Standalone
                    };
                    let ports = (0..n.ports).map(egress).collect();
                    nodes.push(Node::Switch(Box::new(Switch::new(n.name.clone(), fwd, ports))));
                }
            }
        }
        for (node, t) in &cfg.talkers {
            if let Node::Host(h) = &mut nodes[node.0] {
                h.add_talker(t.clone()).expect("talker validated at load");
            }
        }
        for (node, stream) in &cfg.listeners {
            if let Node::Host(h) = &mut nodes[node.0] {
                h.add_listener(*stream);
            }
        }
        for (node, u) in &cfg.udp_sources {
            if let Node::Host(h) = &mut nodes[node.0] {
                h.add_udp_source(u.clone());
            }
        }

        let controller_node = NodeId(cfg.nodes.len());
        let mut channels = BTreeMap::new();
        let controller = cfg.controller.map(|c| {
            for sw in cfg.switches() {
                channels.insert(sw, ControlChannel::new(sw, c.one_way_delay, c.processing_delay));
            }
            Controller::new(cfg.topology(), cfg.switches())
        });
        World {
            cfg,
            nodes,
            links,
            port_link,
            controller,
            controller_node,
            channels,
            control_trace: Vec::new(),
            wakes: BTreeSet::new(),
            records: Vec::new(),
            warnings: Vec::new(),
            host_drops: 0,
        }
    }

    fn egress_mut(&mut self, node: NodeId, port: PortId) -> &mut EgressPort {
        match &mut self.nodes[node.0] {
            Node::Host(h) => &mut h.nic,
            Node::Switch(s) => s.port_mut(port),
        }
    }

    fn name(&self, node: NodeId) -> &str {
        &self.cfg.nodes[node.0].name
    }

    /// Starts the next transmission on an idle port, or arms a wake-up for a
    /// credit-blocked class.
    fn kick(&mut self, eng: &mut Engine<SimEvent>, node: NodeId, port: PortId) -> Result<(), SimError> {
        let now = eng.now();
        let Some(&(li, dir)) = self.port_link.get(&(node, port)) else {
            return Err(SimError::Model(format!("{} port {} has no link", self.name(node), port)));
        };
        let egress = self.egress_mut(node, port);
        match egress.transmission_selection(now) {
            Some(frame) => {
                let busy_until = egress.tx_busy_until();
                let tx = self.links[li].transmit(li, dir, &frame, now)?;

                if tx.tx_end != busy_until {
                    return Err(SimError::Model(format!(
                        "port and link rates disagree at {} port {}",
                        self.name(node),
                        port
                    )));
                }
                eng.schedule(tx.tx_end, node, SimEvent::TxDone { port })?;
                eng.schedule(tx.arrival, tx.far_end.0, SimEvent::Arrival { port: tx.far_end.1, frame })?;
            }
            None => {
                if egress.is_transmitting() {
                    return Ok(());
                }
                if let Some(at) = egress.next_eligible_at() {
                    let at = at.max(now);
                    if self.wakes.insert((node, port, at)) {
                        eng.schedule(at, node, SimEvent::Wake { port })?;
                    }
                }
            }
        }
        Ok(())
    }

    fn send_up(&mut self, eng: &mut Engine<SimEvent>, sw: NodeId, msg: ControlMessage) -> Result<(), SimError> {
        let now = eng.now();
        let Some(ch) = self.channels.get_mut(&sw) else {
            warn!("{}: no control channel, {} dropped", self.cfg.nodes[sw.0].name, msg);
            return Ok(());
        };
        let at = ch.deliver(ControlDirection::Up, now);
        self.control_trace.push(ControlTraceEntry {
            time_ns: now.as_ns(),
            dir: ControlDirection::Up,
            switch: self.cfg.nodes[sw.0].name.clone(),
            kind: msg.kind.name(),
            xid: msg.xid,
        });
        eng.schedule(at, self.controller_node, SimEvent::ToController { from: sw, msg })?;
        Ok(())
    }

    fn apply_host(&mut self, eng: &mut Engine<SimEvent>, node: NodeId, actions: HostActions) -> Result<(), SimError> {
        let now = eng.now();
        let Node::Host(h) = &mut self.nodes[node.0] else {
            unreachable!("host actions for a switch");
        };
        let mut any = false;
        for f in actions.send {
            match h.nic.enqueue(f, now) {
                Ok(()) => any = true,
                Err(e) => {
                    debug!("{}: {}", h.name, e);
                    self.host_drops += 1;
                }
            }
        }
        for w in actions.warnings {
            warn!("{w}");
            self.warnings.push((now, w));
        }
        self.records.extend(actions.records);
        for (at, t) in actions.timers {
            eng.schedule(at, node, SimEvent::Timer(t))?;
        }
        if any {
            self.kick(eng, node, NIC)?;
        }
        Ok(())
    }

    fn switch_effects(
        &mut self,
        eng: &mut Engine<SimEvent>,
        node: NodeId,
        enqueued: BTreeSet<PortId>,
        up: Vec<ControlMessage>,
    ) -> Result<(), SimError> {
        for p in enqueued {
            self.kick(eng, node, p)?;
        }
        for m in up {
            self.send_up(eng, node, m)?;
        }
        Ok(())
    }

    fn handle(&mut self, eng: &mut Engine<SimEvent>, ev: crate::engine::Event<SimEvent>) -> Result<(), SimError> {
        let now = eng.now();
        let node = ev.target;
        match ev.kind {
            SimEvent::Arrival { port, frame } => match &mut self.nodes[node.0] {
                Node::Host(h) => {
                    let actions = h.receive(frame, now)?;
                    self.apply_host(eng, node, actions)?;
                }
                Node::Switch(s) => {
                    let report = s.ingress(frame, port, now);
                    self.switch_effects(eng, node, report.effects.enqueued, report.effects.to_controller)?;
                }
            },
            SimEvent::TxDone { port } => {
                self.egress_mut(node, port).finish_transmission(now);
                self.kick(eng, node, port)?;
            }
            SimEvent::Wake { port } => {
                self.wakes.remove(&(node, port, now));
                self.kick(eng, node, port)?;
            }
            SimEvent::Timer(t) => {
                let Node::Host(h) = &mut self.nodes[node.0] else {
                    return Err(SimError::Model("host timer on a switch".into()));
                };
                let actions = h.on_timer(t, now);
                self.apply_host(eng, node, actions)?;
            }
            SimEvent::Connect => {
                let Node::Switch(s) = &mut self.nodes[node.0] else {
                    return Err(SimError::Model("connect on a host".into()));
                };
                let hello = s.hello();
                self.send_up(eng, node, hello)?;
            }
            SimEvent::FromController(msg) => {
                let Node::Switch(s) = &mut self.nodes[node.0] else {
                    return Err(SimError::Model("control message for a host".into()));
                };
                let eff = s.handle_control(msg, now);
                self.switch_effects(eng, node, eff.enqueued, eff.to_controller)?;
            }
            SimEvent::ToController { from, msg } => {
                let Some(ctrl) = self.controller.as_mut() else {
                    return Err(SimError::Model("control message without a controller".into()));
                };
                for (sw, m) in ctrl.handle(from, msg, now) {
                    let ch = self
                        .channels
                        .get_mut(&sw)
                        .ok_or_else(|| SimError::Model(format!("no channel to {sw}")))?;
                    let at = ch.deliver(ControlDirection::Down, now);
                    self.control_trace.push(ControlTraceEntry {
                        time_ns: now.as_ns(),
                        dir: ControlDirection::Down,
                        switch: self.cfg.nodes[sw.0].name.clone(),
                        kind: m.kind.name(),
                        xid: m.xid,
                    });
                    eng.schedule(at, sw, SimEvent::FromController(m))?;
                }
            }
        }
        Ok(())
    }

    fn finish(self, eng: &Engine<SimEvent>) -> RunOutput {
        let mut switches = Vec::new();
        let mut streams = Vec::new();
        let mut udp = Vec::new();
        let ip_to_mac: BTreeMap<ProtocolAddr, MacAddress> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Host(h) => Some((h.ip, h.mac)),
                Node::Switch(_) => None,
            })
            .collect();
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Switch(s) => switches.push(SwitchReport {
                    node: NodeId(i),
                    name: s.name.clone(),
                    counters: s.counters(),
                    log: s.log().to_vec(),
                    egress: s.port_ids().map(|p| s.port(p).counters().clone()).collect(),
                }),
                Node::Host(h) => {
                    for (cfg, st) in h.talker_states() {
                        streams.push(StreamTimeline {
                            stream: cfg.stream_id,
                            talker: h.name.clone(),
                            advertised_at: st.advertised_at,
                            reserved_at: st.listener_ready_at,
                            first_send: st.first_send,
                            sent: st.sent,
                        });
                    }
                    for (cfg, st) in h.udp_source_states() {
                        udp.push(UdpTimeline {
                            src: h.ip,
                            src_mac: h.mac,
                            dst: cfg.dst_addr,
                            dst_mac: ip_to_mac.get(&cfg.dst_addr).copied(),
                            start_at: cfg.start_at,
                            arp_requests: st.arp_attempts,
                            resolved_at: st.resolved_at,
                            first_send: st.first_send,
                            sent: st.sent,
                        });
                    }
                }
            }
        }
        RunOutput {
            name: self.cfg.name.clone(),
            sdn_enabled: self.cfg.sdn_enabled,
            run_until: self.cfg.run_until,
            records: self.records,
            control_trace: self.control_trace,
            switches,
            controller: self.controller.as_ref().map(|c| c.counters().clone()),
            controller_sr_log: self.controller.as_ref().map_or_else(Vec::new, |c| c.sr_log().to_vec()),
            streams,
            udp,
            host_drops: self.host_drops,
            warnings: self.warnings,
            dispatched: eng.dispatched(),
            digest: eng.trace_digest(),
        }
    }
}

/// Runs a validated scenario to `cfg.run_until`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    let mut world = World::build(cfg);
    let mut eng = Engine::new();
    if world.controller.is_some() {
        for sw in cfg.switches() {
            eng.schedule(SimTime::ZERO, sw, SimEvent::Connect)?;
        }
    }
    for (i, n) in world.nodes.iter().enumerate() {
        if let Node::Host(h) = n {
            for (at, t) in h.start() {
                eng.schedule(at, NodeId(i), SimEvent::Timer(t))?;
            }
        }
    }
    eng.run_until(cfg.run_until, |eng, ev| world.handle(eng, ev))?;
    Ok(world.finish(&eng))
}
