//! Scenario files: TOML tables of nodes, links and applications.
//!
//! ```toml
//! name = "example"
//! sdn_enabled = true
//! idle_setup = "100ms"
//! run_until = "150ms"
//!
//! [controller]
//! one_way_delay = "25us"
//! processing_delay = "25us"
//!
//! [[switch]]
//! name = "switch0"
//!
//! [[client]]
//! name = "client0"
//! mac = "00:00:00:00:00:01"
//! ip = "10.0.0.1"
//!
//! [[link]]
//! a = "client0:0"
//! b = "switch0:0"
//! ```
//!
//! Times take a unit suffix (`ns`, `us`, `ms`, `s`) or a bare integer of
//! nanoseconds. Validation errors name the offending field and its line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::engine::{NodeId, PortId};
use crate::frames::{MacAddress, ProtocolAddr, VlanTag, MAX_FRAME_BYTES};
use crate::hosts::{
    CrossTrafficConfig, TalkerConfig, DEFAULT_ARP_RETRIES, DEFAULT_ARP_RETRY_INTERVAL, DEFAULT_LISTENER_TIMEOUT,
};
use crate::link::DEFAULT_RATE_BPS;
use crate::srp::{SrClass, StreamId, DEFAULT_ADMISSION_FRACTION};
use crate::switch::egress::DEFAULT_QUEUE_CAPACITY;
use crate::time::SimTime;
use crate::topology::Topology;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{}", invalid_message(.field, *.line, .message))]
    Invalid {
        field: String,
        line: Option<usize>,
        message: String,
    },
}

fn invalid_message(field: &str, line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("invalid `{field}` (line {l}): {message}"),
        None => format!("invalid `{field}`: {message}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub one_way_delay: SimTime,
    pub processing_delay: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Client {
        mac: MacAddress,
        ip: ProtocolAddr,
        processing_delay: SimTime,
    },
    Switch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub name: String,
    pub kind: NodeKind,
    pub ports: u16,
    pub queue_capacity: usize,
    pub admission_fraction: f64,
}

impl NodeConfig {
    pub fn is_switch(&self) -> bool {
        matches!(self.kind, NodeKind::Switch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkConfig {
    pub a: (NodeId, PortId),
    pub b: (NodeId, PortId),
    pub rate_bps: u64,
    pub propagation: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChecksConfig {
    pub guarantee: bool,
    /// Overrides the number of scheduled ports derived from the topology.
    pub scheduled_ports: Option<u32>,
    /// Latest time after traffic start by which SDN and no-SDN UDP latencies must agree.
    pub convergence_bound: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FaultsConfig {
    /// Every egress port degrades to a single unshaped FIFO.
    pub disable_shaper: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricsConfig {
    pub window_start: Option<SimTime>,
    pub window_end: Option<SimTime>,
}

/// A validated scenario. Node ids are indices into `nodes`: clients first, then
/// switches, each in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub sdn_enabled: bool,
    pub idle_setup: SimTime,
    pub run_until: SimTime,
    pub controller: Option<ControllerConfig>,
    pub nodes: Vec<NodeConfig>,
    pub links: Vec<LinkConfig>,
    pub talkers: Vec<(NodeId, TalkerConfig)>,
    pub listeners: Vec<(NodeId, StreamId)>,
    pub udp_sources: Vec<(NodeId, CrossTrafficConfig)>,
    pub checks: ChecksConfig,
    pub faults: FaultsConfig,
    pub metrics: MetricsConfig,
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn topology(&self) -> Topology {
        let mut t = Topology::new(self.nodes.len());
        for l in &self.links {
            t.connect(l.a, l.b);
        }
        t
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn switches(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_switch()).map(NodeId)
    }

    /// Summary window: explicit bounds, defaulting to `[idle_setup, run_until)`.
    pub fn window(&self) -> (SimTime, SimTime) {
        (
            self.metrics.window_start.unwrap_or(self.idle_setup),
            self.metrics.window_end.unwrap_or(self.run_until),
        )
    }

    /// Stream talker and listener node pairs.
    pub fn stream_endpoints(&self) -> Vec<(StreamId, NodeId, NodeId)> {
        let mut out = Vec::new();
        for (talker, cfg) in &self.talkers {
            for (listener, stream) in &self.listeners {
                if *stream == cfg.stream_id {
                    out.push((cfg.stream_id, *talker, *listener));
                }
            }
        }
        out
    }

    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        let raw: RawScenario = toml::from_str(src)?;
        Resolver { src }.resolve(raw)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&src)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    sdn_enabled: bool,
    idle_setup: Spanned<SimTime>,
    run_until: SimTime,
    controller: Option<Spanned<RawController>>,
    #[serde(default)]
    switch: Vec<Spanned<RawSwitch>>,
    #[serde(default)]
    client: Vec<Spanned<RawClient>>,
    #[serde(default)]
    link: Vec<Spanned<RawLink>>,
    #[serde(default)]
    talker: Vec<Spanned<RawTalker>>,
    #[serde(default)]
    listener: Vec<Spanned<RawListener>>,
    #[serde(default)]
    udp_source: Vec<Spanned<RawUdpSource>>,
    #[serde(default)]
    checks: RawChecks,
    #[serde(default)]
    faults: FaultsConfig,
    #[serde(default)]
    metrics: RawMetrics,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    one_way_delay: SimTime,
    processing_delay: SimTime,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSwitch {
    name: Spanned<String>,
    queue_capacity: Option<usize>,
    admission_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClient {
    name: Spanned<String>,
    mac: Spanned<MacAddress>,
    ip: Spanned<ProtocolAddr>,
    #[serde(default)]
    processing_delay: Option<SimTime>,
    queue_capacity: Option<usize>,
    admission_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    a: Spanned<String>,
    b: Spanned<String>,
    rate_bps: Option<Spanned<u64>>,
    propagation: Option<SimTime>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTalker {
    host: Spanned<String>,
    unique_id: u16,
    dst_group: Spanned<MacAddress>,
    vid: Spanned<u16>,
    pcp: Option<Spanned<u8>>,
    sr_class: SrClass,
    frame_bytes: Spanned<u32>,
    interval: Spanned<SimTime>,
    advertise_at: Spanned<SimTime>,
    listener_timeout: Option<SimTime>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawListener {
    host: Spanned<String>,
    /// Client name of the talker.
    talker: Spanned<String>,
    unique_id: u16,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUdpSource {
    host: Spanned<String>,
    dst: ProtocolAddr,
    frame_bytes: Spanned<u32>,
    send_interval: Spanned<SimTime>,
    start_at: Spanned<SimTime>,
    count: Option<u64>,
    arp_retries: Option<u32>,
    arp_retry_interval: Option<SimTime>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChecks {
    #[serde(default = "yes")]
    guarantee: bool,
    scheduled_ports: Option<u32>,
    convergence_bound: Option<SimTime>,
}

fn yes() -> bool {
    true
}

impl Default for RawChecks {
    fn default() -> Self {
        RawChecks {
            guarantee: true,
            scheduled_ports: None,
            convergence_bound: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    window_start: Option<SimTime>,
    window_end: Option<SimTime>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

impl<'de> Deserialize<'de> for FaultsConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(default)]
            disable_shaper: bool,
        }
        let r = Raw::deserialize(d)?;
        Ok(FaultsConfig {
            disable_shaper: r.disable_shaper,
        })
    }
}

pub const DEFAULT_CONVERGENCE_BOUND: SimTime = SimTime::from_ms(10);

struct Resolver<'a> {
    src: &'a str,
}

impl Resolver<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        self.src[..span.start.min(self.src.len())].matches('\n').count() + 1
    }

    fn err<T>(&self, field: impl Into<String>, span: Option<Range<usize>>, message: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError::Invalid {
            field: field.into(),
            line: span.map(|s| self.line(s)),
            message: message.into(),
        })
    }

    fn node_port(
        &self,
        field: &str,
        s: &Spanned<String>,
        names: &BTreeMap<String, NodeId>,
    ) -> Result<(NodeId, PortId), ConfigError> {
        let Some((name, port)) = s.get_ref().rsplit_once(':') else {
            return self.err(field, Some(s.span()), format!("expected \"node:port\", got {:?}", s.get_ref()));
        };
        let Some(&node) = names.get(name) else {
            return self.err(field, Some(s.span()), format!("unknown node `{name}`"));
        };
        match port.parse::<u16>() {
            Ok(p) => Ok((node, PortId(p))),
            Err(_) => self.err(field, Some(s.span()), format!("bad port number {port:?}")),
        }
    }

    fn resolve(&self, raw: RawScenario) -> Result<ScenarioConfig, ConfigError> {
        let idle_setup = *raw.idle_setup.get_ref();

        let controller = match (&raw.controller, raw.sdn_enabled) {
            (Some(c), false) => {
                return self.err(
                    "controller",
                    Some(c.span()),
                    "a controller is not permitted when sdn_enabled = false",
                )
            }
            (None, true) => return self.err("controller", None, "sdn_enabled = true requires a [controller] table"),
            (Some(c), true) => Some(ControllerConfig {
                one_way_delay: c.get_ref().one_way_delay,
                processing_delay: c.get_ref().processing_delay,
            }),
            (None, false) => None,
        };

        let mut nodes = Vec::new();
        let mut names = BTreeMap::new();
        let mut macs = BTreeSet::new();
        let mut ips = BTreeMap::new();
        for (i, c) in raw.client.iter().enumerate() {
            let c = c.get_ref();
            let field = format!("client[{i}]");
            if !names.insert(c.name.get_ref().clone(), NodeId(nodes.len())).is_none() {
                return self.err(format!("{field}.name"), Some(c.name.span()), "duplicate node name");
            }
            let mac = *c.mac.get_ref();
            if mac.is_multicast() {
                return self.err(format!("{field}.mac"), Some(c.mac.span()), "client address must be unicast");
            }
            if !macs.insert(mac) {
                return self.err(format!("{field}.mac"), Some(c.mac.span()), "duplicate MAC address");
            }
            if ips.insert(*c.ip.get_ref(), NodeId(nodes.len())).is_some() {
                return self.err(format!("{field}.ip"), Some(c.ip.span()), "duplicate IP address");
            }
            let fraction = c.admission_fraction.unwrap_or(DEFAULT_ADMISSION_FRACTION);
            self.check_fraction(&field, fraction)?;
            nodes.push(NodeConfig {
                name: c.name.get_ref().clone(),
                kind: NodeKind::Client {
                    mac,
                    ip: *c.ip.get_ref(),
                    processing_delay: c.processing_delay.unwrap_or(SimTime::ZERO),
                },
                ports: 0,
                queue_capacity: c.queue_capacity.unwrap_or(DEFAULT_QUEUE_CAPACITY),
                admission_fraction: fraction,
            });
        }
        for (i, s) in raw.switch.iter().enumerate() {
            let s = s.get_ref();
            let field = format!("switch[{i}]");
            if names.insert(s.name.get_ref().clone(), NodeId(nodes.len())).is_some() {
                return self.err(format!("{field}.name"), Some(s.name.span()), "duplicate node name");
            }
            let fraction = s.admission_fraction.unwrap_or(DEFAULT_ADMISSION_FRACTION);
            self.check_fraction(&field, fraction)?;
            nodes.push(NodeConfig {
                name: s.name.get_ref().clone(),
                kind: NodeKind::Switch,
                ports: 0,
                queue_capacity: s.queue_capacity.unwrap_or(DEFAULT_QUEUE_CAPACITY),
                admission_fraction: fraction,
            });
        }
        if nodes.is_empty() {
            return self.err("client", None, "scenario has no nodes");
        }

        let mut links = Vec::new();
        let mut used: BTreeMap<NodeId, BTreeSet<u16>> = BTreeMap::new();
        for (i, l) in raw.link.iter().enumerate() {
            let span = l.span();
            let l = l.get_ref();
            let a = self.node_port(&format!("link[{i}].a"), &l.a, &names)?;
            let b = self.node_port(&format!("link[{i}].b"), &l.b, &names)?;
            if a.0 == b.0 {
                return self.err(format!("link[{i}]"), Some(span), "link connects a node to itself");
            }
            for (end, (node, port), s) in [("a", a, &l.a), ("b", b, &l.b)] {
                if !used.entry(node).or_default().insert(port.0) {
                    return self.err(format!("link[{i}].{end}"), Some(s.span()), "port already connected");
                }
            }
            let rate_bps = match &l.rate_bps {
                Some(r) if *r.get_ref() == 0 => {
                    return self.err(format!("link[{i}].rate_bps"), Some(r.span()), "rate must be positive")
                }
                Some(r) => *r.get_ref(),
                None => DEFAULT_RATE_BPS,
            };
            links.push(LinkConfig {
                a,
                b,
                rate_bps,
                propagation: l.propagation.unwrap_or(SimTime::ZERO),
            });
        }
        for (i, n) in nodes.iter_mut().enumerate() {
            let ports = used.get(&NodeId(i)).cloned().unwrap_or_default();
            let count = ports.len() as u16;
            if ports.iter().copied().ne(0..count) {
                return self.err(
                    format!("link ({})", n.name),
                    None,
                    format!("ports of `{}` must be numbered 0..{} without gaps", n.name, count),
                );
            }
            if !n.is_switch() && count != 1 {
                return self.err(
                    format!("link ({})", n.name),
                    None,
                    format!("client `{}` needs exactly one link on port 0, has {}", n.name, count),
                );
            }
            n.ports = count;
        }

        let cfg_nodes = nodes;
        let mut topo = Topology::new(cfg_nodes.len());
        for l in &links {
            topo.connect(l.a, l.b);
        }
        if !topo.is_connected() {
            return self.err("link", None, "topology is not connected");
        }

        let client = |field: String, s: &Spanned<String>| -> Result<(NodeId, MacAddress), ConfigError> {
            match names.get(s.get_ref()).map(|&n| (n, &cfg_nodes[n.0].kind)) {
                Some((n, NodeKind::Client { mac, .. })) => Ok((n, *mac)),
                Some(_) => self.err(field, Some(s.span()), format!("`{}` is not a client", s.get_ref())),
                None => self.err(field, Some(s.span()), format!("unknown client `{}`", s.get_ref())),
            }
        };
        let not_before_setup = |field: String, t: &Spanned<SimTime>| -> Result<(), ConfigError> {
            if *t.get_ref() < idle_setup {
                return self.err(
                    field,
                    Some(t.span()),
                    format!("must not be earlier than idle_setup ({idle_setup})"),
                );
            }
            Ok(())
        };

        let mut talkers = Vec::new();
        let mut streams = BTreeSet::new();
        for (i, t) in raw.talker.iter().enumerate() {
            let t = t.get_ref();
            let f = |name: &str| format!("talker[{i}].{name}");
            let (node, mac) = client(f("host"), &t.host)?;
            let stream_id = StreamId::new(mac, t.unique_id);
            if !streams.insert(stream_id) {
                return self.err(f("unique_id"), Some(t.host.span()), format!("duplicate stream {stream_id}"));
            }
            if !t.dst_group.get_ref().is_multicast() {
                return self.err(f("dst_group"), Some(t.dst_group.span()), "stream destination must be a group address");
            }
            let pcp = t.pcp.as_ref().map_or(t.sr_class.pcp(), |p| *p.get_ref());
            let vlan = match VlanTag::new(*t.vid.get_ref(), pcp) {
                Ok(v) => v,
                Err(e) => {
                    let span = t.pcp.as_ref().map_or(t.vid.span(), |p| p.span());
                    return self.err(f("vid"), Some(span), e.to_string());
                }
            };
            let bytes = *t.frame_bytes.get_ref();
            if bytes == 0 || bytes > MAX_FRAME_BYTES {
                return self.err(f("frame_bytes"), Some(t.frame_bytes.span()), format!("must be in 1..={MAX_FRAME_BYTES}"));
            }
            if *t.interval.get_ref() == SimTime::ZERO {
                return self.err(f("interval"), Some(t.interval.span()), "must be positive");
            }
            not_before_setup(f("advertise_at"), &t.advertise_at)?;
            talkers.push((
                node,
                TalkerConfig {
                    stream_id,
                    dst_group: *t.dst_group.get_ref(),
                    vlan,
                    sr_class: t.sr_class,
                    frame_bytes: bytes,
                    interval: *t.interval.get_ref(),
                    advertise_at: *t.advertise_at.get_ref(),
                    listener_timeout: t.listener_timeout.unwrap_or(DEFAULT_LISTENER_TIMEOUT),
                },
            ));
        }

        let mut listeners = Vec::new();
        for (i, l) in raw.listener.iter().enumerate() {
            let l = l.get_ref();
            let (node, _) = client(format!("listener[{i}].host"), &l.host)?;
            let (_, talker_mac) = client(format!("listener[{i}].talker"), &l.talker)?;
            let stream = StreamId::new(talker_mac, l.unique_id);
            if !streams.contains(&stream) {
                return self.err(
                    format!("listener[{i}].unique_id"),
                    Some(l.talker.span()),
                    format!("no talker declares stream {stream}"),
                );
            }
            listeners.push((node, stream));
        }

        let mut udp_sources = Vec::new();
        for (i, u) in raw.udp_source.iter().enumerate() {
            let u = u.get_ref();
            let f = |name: &str| format!("udp_source[{i}].{name}");
            let (node, _) = client(f("host"), &u.host)?;
            let bytes = *u.frame_bytes.get_ref();
            if bytes == 0 || bytes > MAX_FRAME_BYTES {
                return self.err(f("frame_bytes"), Some(u.frame_bytes.span()), format!("must be in 1..={MAX_FRAME_BYTES}"));
            }
            if *u.send_interval.get_ref() == SimTime::ZERO {
                return self.err(f("send_interval"), Some(u.send_interval.span()), "must be positive");
            }
            not_before_setup(f("start_at"), &u.start_at)?;
            udp_sources.push((
                node,
                CrossTrafficConfig {
                    dst_addr: u.dst,
                    frame_bytes: bytes,
                    send_interval: *u.send_interval.get_ref(),
                    start_at: *u.start_at.get_ref(),
                    count: u.count,
                    arp_retries: u.arp_retries.unwrap_or(DEFAULT_ARP_RETRIES),
                    arp_retry_interval: u.arp_retry_interval.unwrap_or(DEFAULT_ARP_RETRY_INTERVAL),
                },
            ));
        }

        Ok(ScenarioConfig {
            name: raw.name,
            sdn_enabled: raw.sdn_enabled,
            idle_setup,
            run_until: raw.run_until,
            controller,
            nodes: cfg_nodes,
            links,
            talkers,
            listeners,
            udp_sources,
            checks: ChecksConfig {
                guarantee: raw.checks.guarantee,
                scheduled_ports: raw.checks.scheduled_ports,
                convergence_bound: raw.checks.convergence_bound.unwrap_or(DEFAULT_CONVERGENCE_BOUND),
            },
            faults: raw.faults,
            metrics: MetricsConfig {
                window_start: raw.metrics.window_start,
                window_end: raw.metrics.window_end,
            },
            output_dir: raw.output.dir,
        })
    }

    fn check_fraction(&self, field: &str, fraction: f64) -> Result<(), ConfigError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return self.err(format!("{field}.admission_fraction"), None, "must be in (0, 1]");
        }
        Ok(())
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} nodes, {} links, sdn {})",
            self.name,
            self.nodes.len(),
            self.links.len(),
            if self.sdn_enabled { "on" } else { "off" }
        )
    }
}
