//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use sha2::{Digest, Sha256};

use tssdn_sim::frames::{wire_bits, EthernetFrame, MacAddress, Payload, ProtocolAddr, UdpDatagram, VlanTag};
use tssdn_sim::scenario::analysis::{compare, guarantee_checks, stream_start_delta};
use tssdn_sim::scenario::output::{write_frames, FRAMES_CSV};
use tssdn_sim::scenario::{load_config, run_scenario, RunOutput, ScenarioConfig};
use tssdn_sim::srp::{Reservation, SrClass, StreamId};
use tssdn_sim::switch::egress::{EgressMode, EgressPort};
use tssdn_sim::switch::flow_table::{Action, FlowMatch, FlowTable};
use tssdn_sim::{PortId, SimTime};

const RATE: u64 = 100_000_000;
const MAX_WIRE_BITS: u64 = (1522 + 20) * 8;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> ScenarioConfig {
    load_config(scenario(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run(cfg: &ScenarioConfig) -> RunOutput {
    run_scenario(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

type Outcome = Result<String, String>;

struct Runs {
    sdn_cfg: ScenarioConfig,
    sdn: RunOutput,
    nosdn_cfg: ScenarioConfig,
    nosdn: RunOutput,
}

fn guarantee(runs: &Runs) -> Outcome {
    let mut details = Vec::new();
    for (cfg, out) in [(&runs.sdn_cfg, &runs.sdn), (&runs.nosdn_cfg, &runs.nosdn)] {
        for (_, o) in guarantee_checks(cfg, out) {
            if !o.passed() {
                return Err(format!("{}: {o}", cfg.name));
            }
            details.push(format!("{}: {o}", cfg.name));
        }
    }
    Ok(details.join("; "))
}

fn steady_state(runs: &Runs) -> Outcome {
    let cmp = compare(&runs.sdn, &runs.nosdn);
    let c = cmp.udp_convergence.ok_or("cross traffic never converged")?;
    let steady = cmp.steady.as_ref().ok_or("no steady state")?;
    if !steady.identical() {
        let (flow, seq, a, b) = steady.mismatches.first().copied().ok_or("no frames compared")?;
        return Err(format!(
            "{} of {} frames differ after {} ns; first {flow} seq {seq}: {} vs {} ns",
            steady.mismatches.len(),
            steady.compared,
            c.send_time.as_ns(),
            a.as_ns(),
            b.as_ns()
        ));
    }
    Ok(format!(
        "{} frames identical from {} ns (udp seq {})",
        steady.compared,
        c.send_time.as_ns(),
        c.seq
    ))
}

fn setup_delay(runs: &Runs) -> Outcome {
    let d = stream_start_delta(&runs.nosdn, &runs.sdn).ok_or("stream never started")?;
    if d != 300_000 {
        return Err(format!("start delta {d} ns, expected 300000"));
    }
    let mut zero = runs.sdn_cfg.clone();
    let ctl = zero.controller.as_mut().ok_or("managed scenario without controller")?;
    ctl.one_way_delay = SimTime::ZERO;
    ctl.processing_delay = SimTime::ZERO;
    let z = stream_start_delta(&runs.nosdn, &run(&zero)).ok_or("stream never started")?;
    if z != 0 {
        return Err(format!("zero-delay start delta {z} ns, expected 0"));
    }
    Ok(format!("delta {d} ns; with zero control delays {z} ns"))
}

fn first_frame_penalty(runs: &Runs) -> Outcome {
    let cmp = compare(&runs.sdn, &runs.nosdn);
    let first = cmp.first_udp_latency.ok_or("no udp frames")?;
    let steady = cmp.steady_udp_max.ok_or("udp never converged")?;
    let after = cmp.convergence_after_start().ok_or("udp never converged")?;
    let bound = runs.sdn_cfg.checks.convergence_bound;
    if first <= steady {
        return Err(format!("first udp {} ns not above steady {} ns", first.as_ns(), steady.as_ns()));
    }
    if after > bound {
        return Err(format!("converged {} ns after start, bound {} ns", after.as_ns(), bound.as_ns()));
    }
    Ok(format!(
        "first {} ns > steady max {} ns; converged {} ns after start (bound {} ns)",
        first.as_ns(),
        steady.as_ns(),
        after.as_ns(),
        bound.as_ns()
    ))
}

fn stepwise(runs: &Runs) -> Outcome {
    let p = compare(&runs.sdn, &runs.nosdn).plateaus.ok_or("no plateaus")?;
    let levels: Vec<String> = p
        .levels
        .iter()
        .map(|l| l.map_or("-".to_owned(), |t| t.as_ns().to_string()))
        .collect();
    let text = format!("levels [{}] ns at {} boundaries", levels.join(", "), p.boundaries.len());
    if p.is_stepwise() {
        Ok(text)
    } else {
        Err(text)
    }
}

fn no_stream_misses(runs: &Runs) -> Outcome {
    let misses = runs.sdn.stream_misses();
    let frames = runs.sdn.records.iter().filter(|r| r.flow.is_stream()).count();
    if misses != 0 {
        return Err(format!("{misses} stream table misses"));
    }
    if frames == 0 {
        return Err("no stream frames delivered".to_owned());
    }
    Ok(format!("0 misses over {frames} delivered stream frames"))
}

fn mac(b: u8) -> MacAddress {
    MacAddress([0, 0, 0, 0, 0, b])
}

fn udp_payload() -> Payload {
    Payload::Udp(UdpDatagram {
        src_addr: ProtocolAddr(1),
        dst_addr: ProtocolAddr(2),
        seq: 0,
        sent_at: SimTime::ZERO,
    })
}

fn flow_match() -> impl Strategy<Value = FlowMatch> {
    (
        proptest::option::of(0u16..3),
        proptest::option::of(1u8..4),
        proptest::option::of(1u8..4),
        proptest::option::of(1u16..3),
        proptest::option::of(prop_oneof![Just(0u8), Just(5), Just(6)]),
    )
        .prop_map(|(p, d, s, v, c)| FlowMatch {
            in_port: p.map(PortId),
            eth_dst: d.map(mac),
            eth_src: s.map(mac),
            vlan_vid: v,
            vlan_pcp: c,
        })
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        Just(Action::Drop),
        Just(Action::ToController),
        proptest::collection::btree_set(0u16..4, 1..3).prop_map(|s| Action::Output(s.into_iter().map(PortId).collect())),
    ]
}

fn opt_eq<T: PartialEq>(want: Option<T>, got: Option<T>) -> bool {
    match want {
        None => true,
        Some(w) => got == Some(w),
    }
}

fn flow_match_oracle() -> Outcome {
    let entries = proptest::collection::vec((flow_match(), 0u16..4, proptest::collection::vec(action(), 1..3)), 0..12);
    let frame = (
        1u8..4,
        1u8..4,
        proptest::option::of((1u16..3, prop_oneof![Just(0u8), Just(5), Just(6)])),
        0u16..3,
    );
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&(entries, frame), |(entries, (src, dst, tag, port))| {
        let vlan = tag.map(|(v, p)| VlanTag::new(v, p).unwrap());
        let f = EthernetFrame::new(mac(src), mac(dst), vlan, udp_payload(), 100).unwrap();
        let in_port = PortId(port);
        let mut table = FlowTable::new();
        let mut linear: Vec<(FlowMatch, u16, Vec<Action>)> = Vec::new();
        for (m, prio, acts) in entries {
            table.install(m, prio, acts.clone()).unwrap();
            match linear.iter_mut().find(|e| e.0 == m && e.1 == prio) {
                Some(e) => e.2 = acts,
                None => linear.push((m, prio, acts)),
            }
        }
        let mut expected: Option<&(FlowMatch, u16, Vec<Action>)> = None;
        for e in &linear {
            let m = &e.0;
            let hit = opt_eq(m.in_port, Some(in_port))
                && opt_eq(m.eth_dst, Some(f.dst))
                && opt_eq(m.eth_src, Some(f.src))
                && opt_eq(m.vlan_vid, f.vlan.map(|t| t.vid()))
                && opt_eq(m.vlan_pcp, f.vlan.map(|t| t.pcp()));
            if hit && expected.is_none_or(|b| e.1 > b.1) {
                expected = Some(e);
            }
        }
        let got = table.lookup(&f, in_port).map(|e| (e.flow_match, e.priority, e.actions.clone()));
        prop_assert_eq!(got, expected.cloned());
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!("{cases} random cases agree with a linear scan")),
        Err(e) => Err(e.to_string()),
    }
}

struct Sent {
    start: SimTime,
    end: SimTime,
    bits: u64,
}

/// Drives one egress port through the given arrivals. Returns the shaped-class transmissions.
fn drive_port(port: &mut EgressPort, pcp: u8, mut arrivals: Vec<(SimTime, EthernetFrame)>) -> Result<Vec<Sent>, String> {
    arrivals.sort_by_key(|(t, _)| *t);
    let mut next = 0;
    let mut sent = Vec::new();
    let mut current: Option<(SimTime, u8, u64)> = None;
    let mut steps = 0;
    loop {
        steps += 1;
        if steps > 1_000_000 {
            return Err("port did not drain".to_owned());
        }
        let candidates = [
            arrivals.get(next).map(|(t, _)| *t),
            current.map(|_| port.tx_busy_until()),
            port.next_eligible_at(),
        ];
        let Some(now) = candidates.into_iter().flatten().min() else {
            break;
        };
        if let Some((start, p, bits)) = current {
            if now == port.tx_busy_until() {
                port.finish_transmission(now);
                current = None;
                if p == pcp {
                    sent.push(Sent { start, end: now, bits });
                }
                let credit = port.shaper(pcp).map_or(0, |cs| cs.credit_nanobits());
                if port.queue_len(pcp) == 0 && credit > 0 {
                    return Err(format!("credit {credit} nb left positive on an empty queue at {} ns", now.as_ns()));
                }
            }
        }
        while arrivals.get(next).is_some_and(|(t, _)| *t == now) {
            let _ = port.enqueue(arrivals[next].1.clone(), now);
            next += 1;
        }
        if current.is_none() {
            if let Some(f) = port.transmission_selection(now) {
                current = Some((now, f.pcp(), wire_bits(&f)));
            }
        }
    }
    Ok(sent)
}

/// `(max stream frame, interval in us, stream arrivals, best-effort arrivals)`, arrivals as `(ns, bytes)`.
type CbsPattern = (u32, u64, Vec<(u64, u32)>, Vec<(u64, u32)>);

fn cbs_pattern() -> impl Strategy<Value = CbsPattern> {
    (64u32..=1000, prop_oneof![Just(125u64), Just(250), Just(500)]).prop_flat_map(|(max_frame, interval_us)| {
        let horizon = interval_us * 1_000 * 40;
        (
            Just(max_frame),
            Just(interval_us),
            proptest::collection::vec((0..horizon, 64u32..=max_frame), 10..120),
            proptest::collection::vec((0..horizon, 64u32..=1522), 0..120),
        )
    })
}

fn cbs_conservation() -> Outcome {
    let cases = 200;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let pcp = SrClass::A.pcp();
    let result = runner.run(&cbs_pattern(), |(max_frame, interval_us, stream, best_effort)| {
        let interval = SimTime::from_us(interval_us);
        let mut port = EgressPort::new(RATE, 1_000, 0.75, EgressMode::Tsn);
        let res = Reservation::new(StreamId::new(mac(1), 1), SrClass::A, pcp, max_frame, interval).unwrap();
        port.admit(PortId(0), res, SimTime::ZERO).unwrap();
        let idle = port.shaper(pcp).unwrap().idle_slope_bps();
        let tag = VlanTag::new(2, pcp).unwrap();
        let mut arrivals = Vec::new();
        for (t, bytes) in stream {
            arrivals.push((SimTime::from_ns(t), EthernetFrame::new(mac(1), mac(2), Some(tag), udp_payload(), bytes).unwrap()));
        }
        for (t, bytes) in best_effort {
            arrivals.push((SimTime::from_ns(t), EthernetFrame::new(mac(3), mac(2), None, udp_payload(), bytes).unwrap()));
        }
        let sent = drive_port(&mut port, pcp, arrivals).map_err(TestCaseError::fail)?;
        let end = sent.last().map_or(SimTime::ZERO, |s| s.end);
        let mut starts: BTreeSet<SimTime> = sent.iter().flat_map(|s| [s.start, s.end]).collect();
        starts.insert(SimTime::ZERO);
        for w in [10u64, 13, 20, 30] {
            let len = interval * w;
            for &t0 in &starts {
                let t1 = t0 + len;
                if t1 > end + len {
                    continue;
                }
                // nanobits on the wire inside [t0, t1)
                let on_wire: u128 = sent
                    .iter()
                    .map(|s| {
                        let lo = s.start.max(t0);
                        let hi = s.end.min(t1);
                        let overlap = hi.saturating_sub(lo).as_ns() as u128 * RATE as u128;
                        overlap.min(s.bits as u128 * 1_000_000_000)
                    })
                    .sum();
                let allowed = idle as u128 * len.as_ns() as u128 + MAX_WIRE_BITS as u128 * 1_000_000_000;
                prop_assert!(
                    on_wire <= allowed,
                    "window [{}, {}) ns carried {} nb, allowed {} nb",
                    t0.as_ns(),
                    t1.as_ns(),
                    on_wire,
                    allowed
                );
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!("{cases} random traffic patterns within idle slope plus one frame")),
        Err(e) => Err(e.to_string()),
    }
}

fn frames_digest(out: &RunOutput, dir: &Path) -> Vec<u8> {
    let path = dir.join(FRAMES_CSV);
    write_frames(&path, &out.records).unwrap();
    Sha256::digest(std::fs::read(&path).unwrap()).to_vec()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut n = 0;
    for name in ["case_study_sdn.toml", "case_study_nosdn.toml", "fault_injection.toml"] {
        let cfg = load(name);
        let a = tmp.path().join(format!("{name}.a"));
        let b = tmp.path().join(format!("{name}.b"));
        std::fs::create_dir_all(&a).unwrap();
        std::fs::create_dir_all(&b).unwrap();
        let (ra, rb) = (run(&cfg), run(&cfg));
        if frames_digest(&ra, &a) != frames_digest(&rb, &b) || ra.digest != rb.digest {
            return Err(format!("{name}: repeated runs differ"));
        }
        n += 1;
    }
    Ok(format!("{n} scenarios produce identical frame CSV hashes on repeat"))
}

fn fault_detected() -> Outcome {
    let cfg = load("fault_injection.toml");
    let out = run(&cfg);
    let checks = guarantee_checks(&cfg, &out);
    match checks.iter().find(|(_, o)| !o.passed()) {
        Some((_, o)) => Ok(o.to_string()),
        None => Err("guarantee check passed with the shaper disabled".to_owned()),
    }
}

fn main() -> ExitCode {
    let sdn_cfg = load("case_study_sdn.toml");
    let nosdn_cfg = load("case_study_nosdn.toml");
    let runs = Runs {
        sdn: run(&sdn_cfg),
        nosdn: run(&nosdn_cfg),
        sdn_cfg,
        nosdn_cfg,
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("1 guarantee satisfaction", guarantee(&runs)),
        ("2 identical steady state", steady_state(&runs)),
        ("3 setup delay", setup_delay(&runs)),
        ("4 first-frame penalty", first_frame_penalty(&runs)),
        ("5 stepwise load propagation", stepwise(&runs)),
        ("6 zero stream table misses", no_stream_misses(&runs)),
        ("7 flow match oracle", flow_match_oracle()),
        ("8 shaper conservation", cbs_conservation()),
        ("9 determinism", determinism()),
        ("10 fault detection", fault_detected()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS criterion {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
