//! Per-frame latency records, summary statistics and the guarantee check.

use std::collections::BTreeMap;
use std::fmt;

use crate::frames::ProtocolAddr;
use crate::srp::{analytic_guarantee, SrClass, StreamId};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flow {
    Stream(StreamId),
    /// UDP cross traffic, labelled by its source address.
    Udp(ProtocolAddr),
}

impl Flow {
    pub fn is_stream(&self) -> bool {
        matches!(self, Flow::Stream(_))
    }
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flow::Stream(id) => write!(f, "stream:{id}"),
            Flow::Udp(src) => write!(f, "udp:{src}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRecord {
    pub flow: Flow,
    pub seq: u64,
    pub send_time: SimTime,
    pub recv_time: SimTime,
}

impl LatencyRecord {
    pub fn latency(&self) -> SimTime {
        self.recv_time - self.send_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub count: usize,
    pub min: SimTime,
    pub mean_ns: f64,
    pub max: SimTime,
}

/// Summary of one flow over a window; `Empty` when no frame of the flow was sent in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowSummary {
    Empty,
    Stats(SummaryStats),
}

impl FlowSummary {
    pub fn stats(&self) -> Option<&SummaryStats> {
        match self {
            FlowSummary::Stats(s) => Some(s),
            FlowSummary::Empty => None,
        }
    }
}

/// Min/mean/max latency per flow over frames sent in `[window_start, window_end)`.
/// Flows present in `records` but without frames in the window are reported as `Empty`.
pub fn summarize(records: &[LatencyRecord], window_start: SimTime, window_end: SimTime) -> BTreeMap<Flow, FlowSummary> {
    let mut acc: BTreeMap<Flow, Option<(usize, SimTime, u128, SimTime)>> = BTreeMap::new();
    for r in records {
        let slot = acc.entry(r.flow).or_insert(None);
        if r.send_time < window_start || r.send_time >= window_end {
            continue;
        }
        let l = r.latency();
        *slot = Some(match *slot {
            None => (1, l, l.as_ns() as u128, l),
            Some((n, min, sum, max)) => (n + 1, min.min(l), sum + l.as_ns() as u128, max.max(l)),
        });
    }
    acc.into_iter()
        .map(|(flow, v)| {
            let s = match v {
                None => FlowSummary::Empty,
                Some((count, min, sum, max)) => FlowSummary::Stats(SummaryStats {
                    count,
                    min,
                    mean_ns: sum as f64 / count as f64,
                    max,
                }),
            };
            (flow, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuaranteeOutcome {
    Pass { worst: LatencyRecord, bound: SimTime },
    Fail(GuaranteeFailure),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuaranteeFailure {
    NoStreamFrames,
    Violation { worst: LatencyRecord, bound: SimTime, violations: usize },
}

impl GuaranteeOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, GuaranteeOutcome::Pass { .. })
    }
}

impl fmt::Display for GuaranteeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuaranteeOutcome::Pass { worst, bound } => write!(
                f,
                "PASS: worst stream latency {} ns (seq {}) <= bound {} ns",
                worst.latency().as_ns(),
                worst.seq,
                bound.as_ns()
            ),
            GuaranteeOutcome::Fail(GuaranteeFailure::NoStreamFrames) => {
                write!(f, "FAIL: no stream frames observed")
            }
            GuaranteeOutcome::Fail(GuaranteeFailure::Violation {
                worst,
                bound,
                violations,
            }) => write!(
                f,
                "FAIL: {} frame(s) over the {} ns bound; worst {} ns (flow {}, seq {}, sent at {} ns)",
                violations,
                bound.as_ns(),
                worst.latency().as_ns(),
                worst.flow,
                worst.seq,
                worst.send_time.as_ns()
            ),
        }
    }
}

/// Checks every stream record against the analytic bound. An empty set of stream records fails.
pub fn check_guarantee(records: &[LatencyRecord], class: SrClass, scheduled_ports: u32) -> GuaranteeOutcome {
    let bound = analytic_guarantee(class, scheduled_ports);
    let streams = records.iter().filter(|r| r.flow.is_stream());
    let mut worst: Option<&LatencyRecord> = None;
    let mut violations = 0;
    for r in streams {
        if r.latency() > bound {
            violations += 1;
        }
        if worst.is_none_or(|w| r.latency() > w.latency()) {
            worst = Some(r);
        }
    }
    match worst {
        None => GuaranteeOutcome::Fail(GuaranteeFailure::NoStreamFrames),
        Some(w) if violations > 0 => GuaranteeOutcome::Fail(GuaranteeFailure::Violation {
            worst: *w,
            bound,
            violations,
        }),
        Some(w) => GuaranteeOutcome::Pass { worst: *w, bound },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::MacAddress;

    fn stream() -> Flow {
        Flow::Stream(StreamId::new(MacAddress([0, 0, 0, 0, 0, 1]), 1))
    }

    fn rec(flow: Flow, seq: u64, send_us: u64, latency_us: u64) -> LatencyRecord {
        LatencyRecord {
            flow,
            seq,
            send_time: SimTime::from_us(send_us),
            recv_time: SimTime::from_us(send_us + latency_us),
        }
    }

    #[test]
    fn summary_min_mean_max() {
        let rs = [rec(stream(), 0, 0, 100), rec(stream(), 1, 10, 200), rec(stream(), 2, 20, 300)];
        let s = summarize(&rs, SimTime::ZERO, SimTime::from_ms(1));
        let st = s[&stream()].stats().unwrap();
        assert_eq!(st.min, SimTime::from_us(100));
        assert_eq!(st.mean_ns, 200_000.0);
        assert_eq!(st.max, SimTime::from_us(300));
        assert_eq!(st.count, 3);
    }

    #[test]
    fn single_record_summary() {
        let s = summarize(&[rec(stream(), 0, 0, 42)], SimTime::ZERO, SimTime::from_ms(1));
        let st = s[&stream()].stats().unwrap();
        assert_eq!(st.min, st.max);
        assert_eq!(st.mean_ns, st.min.as_ns() as f64);
    }

    #[test]
    fn empty_window_is_marked_not_zero() {
        let s = summarize(&[rec(stream(), 0, 0, 42)], SimTime::from_ms(1), SimTime::from_ms(2));
        assert_eq!(s[&stream()], FlowSummary::Empty);
    }

    #[test]
    fn window_filters_by_send_time() {
        let udp = Flow::Udp(ProtocolAddr(1));
        let rs = [rec(udp, 0, 0, 900), rec(udp, 1, 500, 100), rec(udp, 2, 1000, 50)];
        let s = summarize(&rs, SimTime::from_us(500), SimTime::from_us(1000));
        let st = s[&udp].stats().unwrap();
        assert_eq!(st.count, 1);
        assert_eq!(st.max, SimTime::from_us(100));
    }

    #[test]
    fn guarantee_pass_and_fail() {
        let ok = [rec(stream(), 0, 0, 400), rec(stream(), 1, 125, 749)];
        assert!(check_guarantee(&ok, SrClass::A, 3).passed());
        let bad = [rec(stream(), 0, 0, 400), rec(stream(), 1, 125, 751), rec(Flow::Udp(ProtocolAddr(1)), 0, 0, 5_000)];
        match check_guarantee(&bad, SrClass::A, 3) {
            GuaranteeOutcome::Fail(GuaranteeFailure::Violation { worst, violations, .. }) => {
                assert_eq!(worst.seq, 1);
                assert_eq!(violations, 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn guarantee_never_passes_vacuously() {
        let only_udp = [rec(Flow::Udp(ProtocolAddr(1)), 0, 0, 10)];
        assert_eq!(
            check_guarantee(&only_udp, SrClass::A, 3),
            GuaranteeOutcome::Fail(GuaranteeFailure::NoStreamFrames)
        );
    }

    #[test]
    fn flow_labels() {
        assert_eq!(stream().to_string(), "stream:00-00-00-00-00-01:0001");
        assert_eq!(Flow::Udp(ProtocolAddr(0x0a000001)).to_string(), "udp:10.0.0.1");
    }
}
