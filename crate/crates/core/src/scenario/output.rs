//! CSV and text reports for single runs and comparisons.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::ControlTraceEntry;
use crate::scenario::analysis::{guarantee_checks, Comparison};
use crate::scenario::config::ScenarioConfig;
use crate::scenario::metrics::{summarize, FlowSummary, LatencyRecord};
use crate::scenario::world::RunOutput;
use crate::time::SimTime;

pub const FRAMES_CSV: &str = "frames.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const CONTROL_TRACE_CSV: &str = "control_trace.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Serialize)]
struct FrameRow {
    flow: String,
    seq: u64,
    send_ns: u64,
    recv_ns: u64,
    latency_ns: u64,
}

#[derive(Serialize)]
struct SummaryRow {
    flow: String,
    count: usize,
    min_ns: Option<u64>,
    mean_ns: Option<String>,
    max_ns: Option<u64>,
    window_start_ns: u64,
    window_end_ns: u64,
}

/// Header is written even when there are no rows.
fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    fs::write(path, text).map_err(|source| OutputError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn write_frames(path: &Path, records: &[LatencyRecord]) -> Result<(), OutputError> {
    write_rows(
        path,
        &["flow", "seq", "send_ns", "recv_ns", "latency_ns"],
        records.iter().map(|r| FrameRow {
            flow: r.flow.to_string(),
            seq: r.seq,
            send_ns: r.send_time.as_ns(),
            recv_ns: r.recv_time.as_ns(),
            latency_ns: r.latency().as_ns(),
        }),
    )
}

/// Empty windows get blank statistics rather than zeros.
pub fn write_summary(path: &Path, records: &[LatencyRecord], window: (SimTime, SimTime)) -> Result<(), OutputError> {
    let rows = summarize(records, window.0, window.1).into_iter().map(|(flow, s)| {
        let stats = match s {
            FlowSummary::Stats(st) => Some(st),
            FlowSummary::Empty => None,
        };
        SummaryRow {
            flow: flow.to_string(),
            count: stats.map_or(0, |s| s.count),
            min_ns: stats.map(|s| s.min.as_ns()),
            mean_ns: stats.map(|s| format!("{:.3}", s.mean_ns)),
            max_ns: stats.map(|s| s.max.as_ns()),
            window_start_ns: window.0.as_ns(),
            window_end_ns: window.1.as_ns(),
        }
    });
    write_rows(
        path,
        &["flow", "count", "min_ns", "mean_ns", "max_ns", "window_start_ns", "window_end_ns"],
        rows,
    )
}

pub fn write_control_trace(path: &Path, trace: &[ControlTraceEntry]) -> Result<(), OutputError> {
    write_rows(path, &["time_ns", "dir", "switch", "kind", "xid"], trace)
}

fn us(t: SimTime) -> String {
    format!("{:.3} us", t.as_us_f64())
}

fn opt_us(t: Option<SimTime>) -> String {
    t.map_or_else(|| "n/a".to_owned(), us)
}

fn delta_us(d: Option<i64>) -> String {
    d.map_or_else(|| "n/a".to_owned(), |ns| format!("{:+.3} us", ns as f64 / 1_000.0))
}

/// Plain-text description of one run.
pub fn run_report(cfg: &ScenarioConfig, out: &RunOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", out.name);
    let _ = writeln!(s, "sdn: {}", if out.sdn_enabled { "enabled" } else { "disabled" });
    let _ = writeln!(s, "run until: {}", us(out.run_until));
    let _ = writeln!(s, "events dispatched: {}", out.dispatched);
    let _ = writeln!(s, "trace digest: {:016x}", out.digest);
    let _ = writeln!(s);
    for st in &out.streams {
        let _ = writeln!(
            s,
            "stream {} on {}: advertised {}, reserved {}, first send {}, sent {}",
            st.stream,
            st.talker,
            opt_us(st.advertised_at),
            opt_us(st.reserved_at),
            opt_us(st.first_send),
            st.sent
        );
    }
    for u in &out.udp {
        let _ = writeln!(
            s,
            "udp {} -> {}: start {}, arp requests {}, resolved {}, first send {}, sent {}",
            u.src,
            u.dst,
            us(u.start_at),
            u.arp_requests,
            opt_us(u.resolved_at),
            opt_us(u.first_send),
            u.sent
        );
    }
    let (ws, we) = cfg.window();
    let _ = writeln!(s);
    let _ = writeln!(s, "latency window: [{}, {})", us(ws), us(we));
    for (flow, sum) in summarize(&out.records, ws, we) {
        match sum {
            FlowSummary::Empty => {
                let _ = writeln!(s, "  {flow}: no frames in window");
            }
            FlowSummary::Stats(st) => {
                let _ = writeln!(
                    s,
                    "  {flow}: n={} min={} mean={:.3} us max={}",
                    st.count,
                    us(st.min),
                    st.mean_ns / 1_000.0,
                    us(st.max)
                );
            }
        }
    }
    let _ = writeln!(s);
    for sw in &out.switches {
        let c = &sw.counters;
        let _ = writeln!(
            s,
            "{}: received {}, forwarded {}, miss drops {}, queue drops {}, to controller {}, stream misses {}",
            sw.name, c.received, c.forwarded, c.dropped_miss, c.dropped_queue, c.sent_to_controller, c.stream_miss
        );
    }
    if let Some(c) = &out.controller {
        let _ = writeln!(
            s,
            "controller: packet-ins {}, flow-mods {}, packet-outs {}, suppressed advertises {}",
            c.packet_in, c.flow_mods, c.packet_out, c.advertise_suppressed
        );
    }
    if out.host_drops > 0 {
        let _ = writeln!(s, "host drops: {}", out.host_drops);
    }
    for (t, w) in &out.warnings {
        let _ = writeln!(s, "warning at {}: {w}", us(*t));
    }
    if cfg.checks.guarantee {
        let _ = writeln!(s);
        for (stream, outcome) in guarantee_checks(cfg, out) {
            match stream {
                Some(id) => {
                    let _ = writeln!(s, "guarantee {id}: {outcome}");
                }
                None => {
                    let _ = writeln!(s, "guarantee: {outcome}");
                }
            }
        }
    }
    s
}

/// Plain-text comparison of a managed run against an unmanaged one.
pub fn compare_report(sdn_cfg: &ScenarioConfig, cmp: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "stream start delta (sdn - no-sdn): {}", delta_us(cmp.stream_start_delta));
    let _ = writeln!(s, "udp start delta (sdn - no-sdn): {}", delta_us(cmp.udp_start_delta));
    match cmp.udp_convergence {
        Some(c) => {
            let _ = writeln!(
                s,
                "udp converged at seq {} sent {} ({} after traffic start, bound {})",
                c.seq,
                us(c.send_time),
                opt_us(cmp.convergence_after_start()),
                us(sdn_cfg.checks.convergence_bound)
            );
        }
        None => {
            let _ = writeln!(s, "udp never converged");
        }
    }
    if let Some(st) = &cmp.steady {
        let _ = writeln!(
            s,
            "after convergence: {} frames compared, {} differ",
            st.compared,
            st.mismatches.len()
        );
        for (flow, seq, a, b) in st.mismatches.iter().take(10) {
            let _ = writeln!(s, "  {flow} seq {seq}: sdn {} vs no-sdn {}", us(*a), us(*b));
        }
    }
    let _ = writeln!(
        s,
        "first udp latency {} vs steady maximum {}",
        opt_us(cmp.first_udp_latency),
        opt_us(cmp.steady_udp_max)
    );
    if let Some(p) = &cmp.plateaus {
        let _ = writeln!(s, "stream latency by phase (stepwise: {}):", if p.is_stepwise() { "yes" } else { "no" });
        for (b, l) in p.boundaries.iter().zip(&p.levels) {
            let _ = writeln!(s, "  from {}: max {}", us(*b), opt_us(*l));
        }
    }
    if let Some(c) = &sdn_cfg.controller {
        let exchange = c.one_way_delay + c.one_way_delay + c.processing_delay;
        let _ = writeln!(s);
        let _ = writeln!(s, "reference, calibration-dependent:");
        let _ = writeln!(s, "  one request/response exchange: {}", us(exchange));
        let _ = writeln!(s, "  expected setup delay, four exchanges: {}", us(exchange * 4));
    }
    s
}

/// Writes the CSV files and `report.txt` of one run into `dir`.
pub fn write_run(dir: &Path, cfg: &ScenarioConfig, out: &RunOutput) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_owned(),
        source,
    })?;
    write_frames(&dir.join(FRAMES_CSV), &out.records)?;
    write_summary(&dir.join(SUMMARY_CSV), &out.records, cfg.window())?;
    write_control_trace(&dir.join(CONTROL_TRACE_CSV), &out.control_trace)?;
    write_text(&dir.join(REPORT_TXT), &run_report(cfg, out))
}

/// Writes each run into `dir/sdn` and `dir/nosdn` and the comparison into `dir/report.txt`.
pub fn write_comparison(
    dir: &Path,
    sdn: (&ScenarioConfig, &RunOutput),
    nosdn: (&ScenarioConfig, &RunOutput),
    cmp: &Comparison,
) -> Result<(), OutputError> {
    write_run(&dir.join("sdn"), sdn.0, sdn.1)?;
    write_run(&dir.join("nosdn"), nosdn.0, nosdn.1)?;
    write_text(&dir.join(REPORT_TXT), &compare_report(sdn.0, cmp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::ProtocolAddr;
    use crate::scenario::metrics::Flow;

    #[test]
    fn frames_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let r = LatencyRecord {
            flow: Flow::Udp(ProtocolAddr(0x0a000001)),
            seq: 3,
            send_time: SimTime::from_ns(100),
            recv_time: SimTime::from_ns(350),
        };
        write_frames(&p, &[r]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "flow,seq,send_ns,recv_ns,latency_ns\nudp:10.0.0.1,3,100,350,250\n");
    }

    #[test]
    fn header_without_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_control_trace(&p, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "time_ns,dir,switch,kind,xid\n");
    }

    #[test]
    fn empty_window_leaves_blank_stats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let r = LatencyRecord {
            flow: Flow::Udp(ProtocolAddr(1)),
            seq: 0,
            send_time: SimTime::from_ns(10),
            recv_time: SimTime::from_ns(20),
        };
        write_summary(&p, &[r], (SimTime::from_ns(100), SimTime::from_ns(200))).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "udp:0.0.0.1,0,,,,100,200");
    }
}
