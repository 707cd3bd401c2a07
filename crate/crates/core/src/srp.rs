//! Stream reservation semantics: stream identity, SR classes, latency
//! guarantees and per-port bandwidth admission.

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;

use crate::engine::{NodeId, PortId};
use crate::frames::{MacAddress, WIRE_OVERHEAD_BYTES};
use crate::time::SimTime;
use crate::topology::Topology;

pub const DEFAULT_ADMISSION_FRACTION: f64 = 0.75;

/// Talker MAC plus a 16-bit id unique on that talker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StreamId {
    pub talker: MacAddress,
    pub unique_id: u16,
}

impl StreamId {
    pub fn new(talker: MacAddress, unique_id: u16) -> Self {
        StreamId { talker, unique_id }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.talker.0;
        write!(
            f,
            "{:02x}-{:02x}-{:02x}-{:02x}-{:02x}-{:02x}:{:04x}",
            o[0], o[1], o[2], o[3], o[4], o[5], self.unique_id
        )
    }
}

/// Stream reservation class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum SrClass {
    A,
    B,
}

impl SrClass {
    pub fn pcp(self) -> u8 {
        match self {
            SrClass::A => 6,
            SrClass::B => 5,
        }
    }

    /// Worst-case latency contributed by one scheduled egress port.
    pub fn per_hop_max_latency(self) -> SimTime {
        match self {
            SrClass::A => SimTime::from_us(250),
            SrClass::B => SimTime::from_us(500),
        }
    }

    /// Class measurement interval.
    pub fn default_interval(self) -> SimTime {
        match self {
            SrClass::A => SimTime::from_us(125),
            SrClass::B => SimTime::from_us(250),
        }
    }
}

impl fmt::Display for SrClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrClass::A => f.write_str("A"),
            SrClass::B => f.write_str("B"),
        }
    }
}

/// Upper bound on end-to-end latency for a stream crossing `scheduled_ports` egress ports.
pub fn analytic_guarantee(class: SrClass, scheduled_ports: u32) -> SimTime {
    assert!(scheduled_ports >= 1, "a stream crosses at least one scheduled port");
    class.per_hop_max_latency() * scheduled_ports as u64
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReservationError {
    #[error("reservation needs a positive frame size")]
    ZeroFrame,
    #[error("reservation needs a positive interval")]
    ZeroInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub stream_id: StreamId,
    pub sr_class: SrClass,
    pub pcp: u8,
    pub max_frame_bytes: u32,
    pub interval: SimTime,
    reserved_bps: u64,
}

impl Reservation {
    pub fn new(
        stream_id: StreamId,
        sr_class: SrClass,
        pcp: u8,
        max_frame_bytes: u32,
        interval: SimTime,
    ) -> Result<Self, ReservationError> {
        if max_frame_bytes == 0 {
            return Err(ReservationError::ZeroFrame);
        }
        if interval == SimTime::ZERO {
            return Err(ReservationError::ZeroInterval);
        }
        let bits = (max_frame_bytes + WIRE_OVERHEAD_BYTES) as u128 * 8;
        // rounded up so the shaper never under-provisions the stream
        let reserved_bps = (bits * 1_000_000_000).div_ceil(interval.as_ns() as u128) as u64;
        Ok(Reservation {
            stream_id,
            sr_class,
            pcp,
            max_frame_bytes,
            interval,
            reserved_bps,
        })
    }

    pub fn reserved_bps(&self) -> u64 {
        self.reserved_bps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// The stream already holds a reservation on this port.
    AlreadyReserved,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("port {port} rejects {stream}: {requested_bps} bit/s on top of {reserved_bps} bit/s exceeds {limit_bps} bit/s")]
pub struct Rejected {
    pub port: PortId,
    pub stream: StreamId,
    pub requested_bps: u64,
    pub reserved_bps: u64,
    pub limit_bps: u64,
}

/// Reservations held on one egress port.
#[derive(Debug, Clone)]
pub struct ReservationLedger {
    port_rate_bps: u64,
    limit_bps: u64,
    streams: BTreeMap<StreamId, Reservation>,
}

impl ReservationLedger {
    pub fn new(port_rate_bps: u64, admission_fraction: f64) -> Self {
        assert!((0.0..=1.0).contains(&admission_fraction));
        ReservationLedger {
            port_rate_bps,
            limit_bps: (port_rate_bps as f64 * admission_fraction).floor() as u64,
            streams: BTreeMap::new(),
        }
    }

    pub fn port_rate_bps(&self) -> u64 {
        self.port_rate_bps
    }

    pub fn total_bps(&self) -> u64 {
        self.streams.values().map(Reservation::reserved_bps).sum()
    }

    /// Sum of reservations on one priority, i.e. that class's idle slope.
    pub fn class_bps(&self, pcp: u8) -> u64 {
        self.streams
            .values()
            .filter(|r| r.pcp == pcp)
            .map(Reservation::reserved_bps)
            .sum()
    }

    pub fn contains(&self, stream: &StreamId) -> bool {
        self.streams.contains_key(stream)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Reservation> {
        self.streams.values()
    }
}

/// Admits `reservation` on `port` if the port's reserved total stays within the admission limit.
pub fn admit(
    ledger: &mut ReservationLedger,
    port: PortId,
    reservation: Reservation,
) -> Result<Admission, Rejected> {
    if ledger.streams.contains_key(&reservation.stream_id) {
        return Ok(Admission::AlreadyReserved);
    }
    let reserved = ledger.total_bps();
    if reserved + reservation.reserved_bps > ledger.limit_bps {
        return Err(Rejected {
            port,
            stream: reservation.stream_id,
            requested_bps: reservation.reserved_bps,
            reserved_bps: reserved,
            limit_bps: ledger.limit_bps,
        });
    }
    ledger.streams.insert(reservation.stream_id, reservation);
    Ok(Admission::Admitted)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no path from {from} to {to}")]
pub struct NoPath {
    pub from: NodeId,
    pub to: NodeId,
}

/// Egress ports a stream is scheduled at, the talker's own NIC included.
pub fn count_scheduled_ports(topology: &Topology, talker: NodeId, listener: NodeId) -> Result<u32, NoPath> {
    topology
        .path(talker, listener)
        .map(|hops| hops.len() as u32)
        .ok_or(NoPath {
            from: talker,
            to: listener,
        })
}
