//! Comparisons between runs and derived startup metrics.
//!
//! Two runs of the same network, one with a controller and one without, are
//! matched frame by frame on `(flow, seq)`.

use std::collections::BTreeMap;

use crate::scenario::config::ScenarioConfig;
use crate::scenario::metrics::{check_guarantee, Flow, GuaranteeFailure, GuaranteeOutcome, LatencyRecord};
use crate::scenario::world::RunOutput;
use crate::srp::{count_scheduled_ports, StreamId};
use crate::switch::SwitchLogKind;
use crate::time::SimTime;

/// Guarantee check for every stream with a listener. A scenario without any
/// stream endpoint yields a single failure so that the check can never pass vacuously.
pub fn guarantee_checks(cfg: &ScenarioConfig, out: &RunOutput) -> Vec<(Option<StreamId>, GuaranteeOutcome)> {
    let topo = cfg.topology();
    let endpoints = cfg.stream_endpoints();
    if endpoints.is_empty() {
        return vec![(None, GuaranteeOutcome::Fail(GuaranteeFailure::NoStreamFrames))];
    }
    // one bound per stream, from its longest talker-listener path
    let mut ports: BTreeMap<StreamId, u32> = BTreeMap::new();
    for (stream, talker, listener) in endpoints {
        let n = match cfg.checks.scheduled_ports {
            Some(p) => p,
            None => count_scheduled_ports(&topo, talker, listener).expect("validated topology is connected"),
        };
        let e = ports.entry(stream).or_insert(n);
        *e = (*e).max(n);
    }
    ports
        .into_iter()
        .map(|(stream, n)| {
            let class = cfg
                .talkers
                .iter()
                .find(|(_, t)| t.stream_id == stream)
                .map(|(_, t)| t.sr_class)
                .expect("endpoint from a declared talker");
            let records: Vec<LatencyRecord> =
                out.records.iter().filter(|r| r.flow == Flow::Stream(stream)).copied().collect();
            (Some(stream), check_guarantee(&records, class, n))
        })
        .collect()
}

/// First stream data send time in `b` minus that in `a`, for the first stream of each run.
pub fn stream_start_delta(a: &RunOutput, b: &RunOutput) -> Option<i64> {
    let ta = a.streams.first()?.first_send?;
    let tb = b.streams.first()?.first_send?;
    Some(tb.as_ns() as i64 - ta.as_ns() as i64)
}

fn by_seq(out: &RunOutput, flow: Flow) -> BTreeMap<u64, LatencyRecord> {
    out.records.iter().filter(|r| r.flow == flow).map(|r| (r.seq, *r)).collect()
}

/// The point after which every frame of a flow has the same latency in both runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Convergence {
    pub flow: Flow,
    /// First sequence number of the identical tail.
    pub seq: u64,
    /// Send time of `seq` in the managed (later-starting) run.
    pub send_time: SimTime,
    /// Frames compared in the identical tail.
    pub matched: usize,
}

/// Finds the identical tail of `flow` between `sdn` and `nosdn`. `None` if the
/// last frame present in both runs differs or the flow is absent.
pub fn convergence(sdn: &RunOutput, nosdn: &RunOutput, flow: Flow) -> Option<Convergence> {
    let a = by_seq(sdn, flow);
    let b = by_seq(nosdn, flow);
    let common: Vec<(u64, &LatencyRecord, &LatencyRecord)> = a
        .iter()
        .filter_map(|(seq, ra)| b.get(seq).map(|rb| (*seq, ra, rb)))
        .collect();
    let mut first = None;
    let mut matched = 0;
    for (seq, ra, rb) in common.iter().rev() {
        if ra.latency() != rb.latency() {
            break;
        }
        first = Some((*seq, ra.send_time));
        matched += 1;
    }
    let (seq, send_time) = first?;
    Some(Convergence {
        flow,
        seq,
        send_time,
        matched,
    })
}

/// Flow label of the first UDP source in a run.
pub fn udp_flow(out: &RunOutput) -> Option<Flow> {
    out.udp.first().map(|u| Flow::Udp(u.src))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SteadyStateComparison {
    /// Frames sent at or after this time in the managed run are compared.
    pub from: SimTime,
    pub compared: usize,
    /// `(flow, seq, sdn latency, no-sdn latency)` of each mismatch.
    pub mismatches: Vec<(Flow, u64, SimTime, SimTime)>,
}

impl SteadyStateComparison {
    pub fn identical(&self) -> bool {
        self.compared > 0 && self.mismatches.is_empty()
    }
}

/// Compares every frame sent at or after `from` in the managed run against the
/// frame with the same flow and sequence number in the unmanaged run.
pub fn compare_after(sdn: &RunOutput, nosdn: &RunOutput, from: SimTime) -> SteadyStateComparison {
    let other: BTreeMap<(Flow, u64), &LatencyRecord> = nosdn.records.iter().map(|r| ((r.flow, r.seq), r)).collect();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for r in sdn.records.iter().filter(|r| r.send_time >= from) {
        let Some(o) = other.get(&(r.flow, r.seq)) else {
            continue;
        };
        compared += 1;
        if o.latency() != r.latency() {
            mismatches.push((r.flow, r.seq, r.latency(), o.latency()));
        }
    }
    SteadyStateComparison {
        from,
        compared,
        mismatches,
    }
}

/// Times at which switches installed the reactive rule for the first UDP flow,
/// in installation order.
pub fn udp_rule_installs(out: &RunOutput) -> Vec<(String, SimTime)> {
    let Some(u) = out.udp.first() else {
        return Vec::new();
    };
    let Some(dst) = u.dst_mac else {
        return Vec::new();
    };
    let mut installs: Vec<(String, SimTime)> = out
        .switches
        .iter()
        .filter_map(|s| {
            s.log.iter().find_map(|e| match &e.kind {
                SwitchLogKind::FlowInstalled { flow_match, .. }
                    if flow_match.eth_src == Some(u.src_mac) && flow_match.eth_dst == Some(dst) =>
                {
                    Some((s.name.clone(), e.time))
                }
                _ => None,
            })
        })
        .collect();
    installs.sort_by_key(|(_, t)| *t);
    installs
}

/// Stream latency levels between the events that put more of the path under cross-traffic load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plateaus {
    /// Segment start times: stream start, first UDP send, then each rule install.
    pub boundaries: Vec<SimTime>,
    /// Maximum stream latency of frames sent in each segment; the last segment runs to the end.
    pub levels: Vec<Option<SimTime>>,
}

impl Plateaus {
    /// Levels never decrease across segments, every segment has frames, and the
    /// segments before the last show at least two distinct levels.
    pub fn is_stepwise(&self) -> bool {
        let Some(levels) = self.levels.iter().copied().collect::<Option<Vec<SimTime>>>() else {
            return false;
        };
        if levels.len() < 3 {
            return false;
        }
        let monotone = levels.windows(2).all(|w| w[0] <= w[1]);
        let mut before: Vec<SimTime> = levels[..levels.len() - 1].to_vec();
        before.dedup();
        monotone && before.len() >= 2
    }
}

pub fn plateaus(out: &RunOutput) -> Option<Plateaus> {
    let stream = out.streams.first()?;
    let start = stream.first_send?;
    let udp_start = out.udp.first()?.first_send?;
    let mut boundaries = vec![start, udp_start];
    boundaries.extend(udp_rule_installs(out).into_iter().map(|(_, t)| t));
    let flow = Flow::Stream(stream.stream);
    let levels = (0..boundaries.len())
        .map(|i| {
            let lo = boundaries[i];
            let hi = boundaries.get(i + 1).copied().unwrap_or(SimTime::MAX);
            out.records
                .iter()
                .filter(|r| r.flow == flow && r.send_time >= lo && r.send_time < hi)
                .map(LatencyRecord::latency)
                .max()
        })
        .collect();
    Some(Plateaus { boundaries, levels })
}

/// Everything derived from a managed and an unmanaged run of the same network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    /// Managed minus unmanaged first stream send, in ns.
    pub stream_start_delta: Option<i64>,
    /// Managed minus unmanaged first UDP send, in ns.
    pub udp_start_delta: Option<i64>,
    /// Configured start of cross traffic in the managed run.
    pub traffic_start: Option<SimTime>,
    pub udp_convergence: Option<Convergence>,
    /// Frames of all flows sent at or after the UDP convergence point.
    pub steady: Option<SteadyStateComparison>,
    pub plateaus: Option<Plateaus>,
    pub first_udp_latency: Option<SimTime>,
    /// Largest UDP latency in the identical tail.
    pub steady_udp_max: Option<SimTime>,
}

impl Comparison {
    /// Time from the start of cross traffic to the UDP convergence point.
    pub fn convergence_after_start(&self) -> Option<SimTime> {
        let c = self.udp_convergence?;
        Some(c.send_time.saturating_sub(self.traffic_start?))
    }
}

pub fn compare(sdn: &RunOutput, nosdn: &RunOutput) -> Comparison {
    let udp = udp_flow(sdn);
    let udp_start_delta = match (sdn.udp.first(), nosdn.udp.first()) {
        (Some(a), Some(b)) => match (a.first_send, b.first_send) {
            (Some(x), Some(y)) => Some(x.as_ns() as i64 - y.as_ns() as i64),
            _ => None,
        },
        _ => None,
    };
    let udp_convergence = udp.and_then(|f| convergence(sdn, nosdn, f));
    let steady = udp_convergence.map(|c| compare_after(sdn, nosdn, c.send_time));
    let first_udp_latency = udp.and_then(|f| sdn.records.iter().find(|r| r.flow == f && r.seq == 0).map(|r| r.latency()));
    let steady_udp_max = udp_convergence.and_then(|c| {
        sdn.records
            .iter()
            .filter(|r| r.flow == c.flow && r.seq >= c.seq)
            .map(LatencyRecord::latency)
            .max()
    });
    Comparison {
        stream_start_delta: stream_start_delta(nosdn, sdn),
        udp_start_delta,
        traffic_start: sdn.udp.first().map(|u| u.start_at),
        udp_convergence,
        steady,
        plateaus: plateaus(sdn),
        first_udp_latency,
        steady_udp_max,
    }
}
