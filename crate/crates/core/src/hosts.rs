//! End hosts and their applications: stream talker, stream listener, UDP
//! source with ARP resolution, UDP sink and ARP responder.
//!
//! Hosts are passive state machines. The scenario feeds them received frames
//! and expired timers; they answer with frames to put on the NIC, timers to
//! arm and latency records.

use std::collections::BTreeMap;

use log::{debug, info, warn};

use crate::engine::{PortId, SimError};
use crate::frames::{
    ArpKind, ArpMessage, EthernetFrame, FrameError, MacAddress, Payload, ProtocolAddr, SrpKind, SrpMessage,
    UdpDatagram, VlanTag, MIN_FRAME_BYTES,
};
use crate::scenario::metrics::{Flow, LatencyRecord};
use crate::srp::{Reservation, SrClass, StreamId};
use crate::switch::egress::EgressPort;
use crate::switch::{SRP_FRAME_BYTES, SRP_GROUP};
use crate::time::SimTime;

/// Port id of a host's single NIC.
pub const NIC: PortId = PortId(0);
pub const DEFAULT_LISTENER_TIMEOUT: SimTime = SimTime::from_ms(50);
pub const DEFAULT_ARP_RETRIES: u32 = 3;
pub const DEFAULT_ARP_RETRY_INTERVAL: SimTime = SimTime::from_ms(1);

#[derive(Debug, Clone, PartialEq)]
pub struct TalkerConfig {
    pub stream_id: StreamId,
    pub dst_group: MacAddress,
    pub vlan: VlanTag,
    pub sr_class: SrClass,
    pub frame_bytes: u32,
    pub interval: SimTime,
    pub advertise_at: SimTime,
    /// A warning is raised if no ListenerReady has arrived this long after the advertise.
    pub listener_timeout: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossTrafficConfig {
    pub dst_addr: ProtocolAddr,
    pub frame_bytes: u32,
    pub send_interval: SimTime,
    pub start_at: SimTime,
    pub count: Option<u64>,
    pub arp_retries: u32,
    pub arp_retry_interval: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HostTimer {
    Advertise(usize),
    ListenerTimeout(usize),
    StreamSend(usize),
    /// ARP request number `attempt` (0-based) of UDP source `source`.
    ArpAttempt { source: usize, attempt: u32 },
    UdpSend(usize),
    /// Sends a frame held back by the host processing delay.
    Deferred(u64),
}

/// What a host wants done after handling an input.
#[derive(Debug, Default)]
pub struct HostActions {
    pub send: Vec<EthernetFrame>,
    pub timers: Vec<(SimTime, HostTimer)>,
    pub records: Vec<LatencyRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TalkerState {
    pub advertised_at: Option<SimTime>,
    pub listener_ready_at: Option<SimTime>,
    pub first_send: Option<SimTime>,
    pub sent: u64,
}

#[derive(Debug, Clone)]
struct Talker {
    cfg: TalkerConfig,
    state: TalkerState,
}

#[derive(Debug, Clone)]
struct Listener {
    stream_id: StreamId,
    /// Group learned from the advertise.
    group: Option<(MacAddress, u16)>,
    ready_sent_at: Option<SimTime>,
    last_seq: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UdpSourceState {
    pub resolved: Option<MacAddress>,
    pub resolved_at: Option<SimTime>,
    pub arp_attempts: u32,
    pub first_send: Option<SimTime>,
    pub sent: u64,
}

#[derive(Debug, Clone)]
struct UdpSource {
    cfg: CrossTrafficConfig,
    state: UdpSourceState,
}

#[derive(Debug, Clone)]
pub struct Host {
    pub name: String,
    pub mac: MacAddress,
    pub ip: ProtocolAddr,
    pub nic: EgressPort,
    /// Delay between receiving a frame that needs an answer and sending the answer.
    pub processing_delay: SimTime,
    talkers: Vec<Talker>,
    listeners: Vec<Listener>,
    sources: Vec<UdpSource>,
    arp_cache: BTreeMap<ProtocolAddr, MacAddress>,
    deferred: BTreeMap<u64, EthernetFrame>,
    next_deferred: u64,
    udp_received: u64,
}

impl Host {
    pub fn new(name: impl Into<String>, mac: MacAddress, ip: ProtocolAddr, nic: EgressPort) -> Self {
        Host {
            name: name.into(),
            mac,
            ip,
            nic,
            processing_delay: SimTime::ZERO,
            talkers: Vec::new(),
            listeners: Vec::new(),
            sources: Vec::new(),
            arp_cache: BTreeMap::new(),
            deferred: BTreeMap::new(),
            next_deferred: 0,
            udp_received: 0,
        }
    }

    pub fn add_talker(&mut self, cfg: TalkerConfig) -> Result<(), FrameError> {
        // validates the descriptor up front
        SrpMessage::talker_advertise(
            cfg.stream_id,
            cfg.dst_group,
            cfg.vlan,
            cfg.frame_bytes,
            cfg.interval,
            cfg.sr_class,
        )?;
        self.talkers.push(Talker {
            cfg,
            state: TalkerState::default(),
        });
        Ok(())
    }

    pub fn add_listener(&mut self, stream_id: StreamId) {
        self.listeners.push(Listener {
            stream_id,
            group: None,
            ready_sent_at: None,
            last_seq: None,
        });
    }

    pub fn add_udp_source(&mut self, cfg: CrossTrafficConfig) {
        self.sources.push(UdpSource {
            cfg,
            state: UdpSourceState::default(),
        });
    }

    pub fn talker_states(&self) -> impl Iterator<Item = (&TalkerConfig, &TalkerState)> {
        self.talkers.iter().map(|t| (&t.cfg, &t.state))
    }

    pub fn udp_source_states(&self) -> impl Iterator<Item = (&CrossTrafficConfig, &UdpSourceState)> {
        self.sources.iter().map(|s| (&s.cfg, &s.state))
    }

    /// Time the listener for `stream` answered the advertise, if it did.
    pub fn listener_ready_sent(&self, stream: &StreamId) -> Option<SimTime> {
        self.listeners
            .iter()
            .find(|l| l.stream_id == *stream)
            .and_then(|l| l.ready_sent_at)
    }

    pub fn udp_received(&self) -> u64 {
        self.udp_received
    }

    /// Timers every application needs armed at simulation start.
    pub fn start(&self) -> Vec<(SimTime, HostTimer)> {
        let mut timers = Vec::new();
        for (i, t) in self.talkers.iter().enumerate() {
            timers.push((t.cfg.advertise_at, HostTimer::Advertise(i)));
        }
        for (i, s) in self.sources.iter().enumerate() {
            timers.push((s.cfg.start_at, HostTimer::ArpAttempt { source: i, attempt: 0 }));
        }
        timers
    }

    fn frame(&self, dst: MacAddress, vlan: Option<VlanTag>, payload: Payload, bytes: u32) -> EthernetFrame {
        EthernetFrame::new(self.mac, dst, vlan, payload, bytes).expect("host frames are validated at configuration")
    }

    /// Sends now, or after the processing delay.
    fn reply(&mut self, frame: EthernetFrame, now: SimTime, out: &mut HostActions) {
        if self.processing_delay == SimTime::ZERO {
            out.send.push(frame);
        } else {
            let id = self.next_deferred;
            self.next_deferred += 1;
            self.deferred.insert(id, frame);
            out.timers.push((now + self.processing_delay, HostTimer::Deferred(id)));
        }
    }

    pub fn on_timer(&mut self, timer: HostTimer, now: SimTime) -> HostActions {
        let mut out = HostActions::default();
        match timer {
            HostTimer::Advertise(i) => {
                let cfg = &self.talkers[i].cfg;
                let srp = SrpMessage::talker_advertise(
                    cfg.stream_id,
                    cfg.dst_group,
                    cfg.vlan,
                    cfg.frame_bytes,
                    cfg.interval,
                    cfg.sr_class,
                )
                .expect("validated in add_talker");
                let timeout = now + cfg.listener_timeout;
                let f = self.frame(SRP_GROUP, None, Payload::Srp(srp), SRP_FRAME_BYTES);
                self.talkers[i].state.advertised_at = Some(now);
                out.send.push(f);
                out.timers.push((timeout, HostTimer::ListenerTimeout(i)));
            }
            HostTimer::ListenerTimeout(i) => {
                let t = &self.talkers[i];
                if t.state.listener_ready_at.is_none() {
                    out.warnings.push(format!(
                        "{}: no listener ready for stream {} within {}; stream not started",
                        self.name, t.cfg.stream_id, t.cfg.listener_timeout
                    ));
                }
            }
            HostTimer::StreamSend(i) => {
                let t = &self.talkers[i];
                let seq = t.state.sent;
                let payload = Payload::StreamData {
                    stream_id: t.cfg.stream_id,
                    seq,
                    sent_at: now,
                };
                let next = now + t.cfg.interval;
                let f = self.frame(t.cfg.dst_group, Some(t.cfg.vlan), payload, t.cfg.frame_bytes);
                let st = &mut self.talkers[i].state;
                st.first_send.get_or_insert(now);
                st.sent += 1;
                out.send.push(f);
                out.timers.push((next, HostTimer::StreamSend(i)));
            }
            HostTimer::ArpAttempt { source, attempt } => {
                let s = &self.sources[source];
                if s.state.resolved.is_some() {
                    return out;
                }
                if attempt > s.cfg.arp_retries {
                    out.warnings.push(format!(
                        "{}: ARP for {} unanswered after {} retries; UDP source silent",
                        self.name, s.cfg.dst_addr, s.cfg.arp_retries
                    ));
                    return out;
                }
                let asked = s.cfg.dst_addr;
                let retry = now + s.cfg.arp_retry_interval;
                if let Some(&mac) = self.arp_cache.get(&asked) {
                    self.resolve(source, mac, now, &mut out);
                    return out;
                }
                let f = self.frame(
                    MacAddress::BROADCAST,
                    None,
                    Payload::Arp(ArpMessage {
                        kind: ArpKind::Request,
                        asked,
                        answer: None,
                    }),
                    MIN_FRAME_BYTES,
                );
                self.sources[source].state.arp_attempts += 1;
                out.send.push(f);
                out.timers.push((
                    retry,
                    HostTimer::ArpAttempt {
                        source,
                        attempt: attempt + 1,
                    },
                ));
            }
            HostTimer::UdpSend(i) => self.send_udp(i, now, &mut out),
            HostTimer::Deferred(id) => {
                if let Some(f) = self.deferred.remove(&id) {
                    out.send.push(f);
                }
            }
        }
        out
    }

    fn send_udp(&mut self, i: usize, now: SimTime, out: &mut HostActions) {
        let s = &self.sources[i];
        let Some(dst) = s.state.resolved else {
            return;
        };
        if s.cfg.count.is_some_and(|c| s.state.sent >= c) {
            return;
        }
        let payload = Payload::Udp(UdpDatagram {
            src_addr: self.ip,
            dst_addr: s.cfg.dst_addr,
            seq: s.state.sent,
            sent_at: now,
        });
        let next = now + s.cfg.send_interval;
        let f = self.frame(dst, None, payload, s.cfg.frame_bytes);
        let st = &mut self.sources[i].state;
        st.first_send.get_or_insert(now);
        st.sent += 1;
        out.send.push(f);
        out.timers.push((next, HostTimer::UdpSend(i)));
    }

    fn resolve(&mut self, source: usize, mac: MacAddress, now: SimTime, out: &mut HostActions) {
        let st = &mut self.sources[source].state;
        if st.resolved.is_some() {
            return;
        }
        st.resolved = Some(mac);
        st.resolved_at = Some(now);
        info!("{}: {} resolved to {} at {}", self.name, self.sources[source].cfg.dst_addr, mac, now);
        self.send_udp(source, now, out);
    }

    fn accepts(&self, frame: &EthernetFrame) -> bool {
        frame.dst == self.mac
            || frame.dst.is_broadcast()
            || frame.dst == SRP_GROUP
            || self
                .listeners
                .iter()
                .any(|l| l.group.is_some_and(|(g, vid)| g == frame.dst && frame.vid() == Some(vid)))
    }

    /// Handles a frame fully received on the NIC at `now`.
    pub fn receive(&mut self, frame: EthernetFrame, now: SimTime) -> Result<HostActions, SimError> {
        let mut out = HostActions::default();
        if !self.accepts(&frame) {
            debug!("{}: ignoring frame for {}", self.name, frame.dst);
            return Ok(out);
        }
        match &frame.payload {
            Payload::Srp(srp) => self.on_srp(srp, now, &mut out),
            Payload::Arp(arp) => self.on_arp(&frame, *arp, now, &mut out),
            Payload::Udp(d) => {
                if d.dst_addr == self.ip {
                    self.udp_received += 1;
                    out.records.push(LatencyRecord {
                        flow: Flow::Udp(d.src_addr),
                        seq: d.seq,
                        send_time: d.sent_at,
                        recv_time: now,
                    });
                }
            }
            Payload::StreamData {
                stream_id,
                seq,
                sent_at,
            } => {
                let Some(l) = self.listeners.iter_mut().find(|l| l.stream_id == *stream_id) else {
                    return Ok(out);
                };
                if l.ready_sent_at.is_none() {
                    return Err(SimError::Model(format!(
                        "{}: stream data for {} before listener ready",
                        self.name, stream_id
                    )));
                }
                if l.last_seq.is_some_and(|last| *seq <= last) {
                    return Err(SimError::Model(format!(
                        "{}: stream {} seq {} after {}",
                        self.name,
                        stream_id,
                        seq,
                        l.last_seq.unwrap_or_default()
                    )));
                }
                l.last_seq = Some(*seq);
                out.records.push(LatencyRecord {
                    flow: Flow::Stream(*stream_id),
                    seq: *seq,
                    send_time: *sent_at,
                    recv_time: now,
                });
            }
        }
        Ok(out)
    }

    fn on_srp(&mut self, srp: &SrpMessage, now: SimTime, out: &mut HostActions) {
        match srp.kind {
            SrpKind::TalkerAdvertise => {
                let Some(idx) = self.listeners.iter().position(|l| l.stream_id == srp.stream_id) else {
                    return;
                };
                let l = &mut self.listeners[idx];
                if l.ready_sent_at.is_some() {
                    return;
                }
                l.group = Some((srp.dst_group, srp.vlan.vid()));
                l.ready_sent_at = Some(now + self.processing_delay);
                let f = self.frame(SRP_GROUP, None, Payload::Srp(srp.listener_ready()), SRP_FRAME_BYTES);
                self.reply(f, now, out);
            }
            SrpKind::ListenerReady => {
                let Some(idx) = self.talkers.iter().position(|t| t.cfg.stream_id == srp.stream_id) else {
                    return;
                };
                if self.talkers[idx].state.listener_ready_at.is_some() {
                    return;
                }
                let cfg = self.talkers[idx].cfg.clone();
                self.talkers[idx].state.listener_ready_at = Some(now);
                let reservation = Reservation::new(
                    cfg.stream_id,
                    cfg.sr_class,
                    cfg.vlan.pcp(),
                    cfg.frame_bytes,
                    cfg.interval,
                );
                match reservation.map(|r| self.nic.admit(NIC, r, now)) {
                    Ok(Ok(_)) => {}
                    Ok(Err(e)) => out.warnings.push(format!("{}: {}", self.name, e)),
                    Err(e) => out.warnings.push(format!("{}: {}", self.name, e)),
                }
                out.timers.push((now + cfg.interval, HostTimer::StreamSend(idx)));
            }
        }
    }

    fn on_arp(&mut self, frame: &EthernetFrame, arp: ArpMessage, now: SimTime, out: &mut HostActions) {
        match arp.kind {
            ArpKind::Request if arp.asked == self.ip => {
                let f = self.frame(
                    frame.src,
                    None,
                    Payload::Arp(ArpMessage {
                        kind: ArpKind::Reply,
                        asked: arp.asked,
                        answer: Some(self.mac),
                    }),
                    MIN_FRAME_BYTES,
                );
                self.reply(f, now, out);
            }
            ArpKind::Request => {}
            ArpKind::Reply => {
                let Some(mac) = arp.answer else {
                    warn!("{}: ARP reply without answer", self.name);
                    return;
                };
                self.arp_cache.insert(arp.asked, mac);
                let waiting: Vec<usize> = (0..self.sources.len())
                    .filter(|&i| self.sources[i].cfg.dst_addr == arp.asked)
                    .collect();
                for i in waiting {
                    self.resolve(i, mac, now, out);
                }
            }
        }
    }
}
