//! Dataplane traffic: Ethernet frames and the payloads the simulator models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer};

use crate::srp::{SrClass, StreamId};
use crate::time::SimTime;

pub const MIN_FRAME_BYTES: u32 = 64;
pub const MAX_FRAME_BYTES: u32 = 1522;
/// Preamble (7) + SFD (1) + interframe gap (12).
pub const WIRE_OVERHEAD_BYTES: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xff; 6]);

    pub fn is_multicast(self) -> bool {
        self.0[0] & 0x01 == 0x01
    }

    pub fn is_broadcast(self) -> bool {
        self == Self::BROADCAST
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid MAC address `{0}`")]
pub struct ParseMacError(String);

impl FromStr for MacAddress {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut octets = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for o in octets.iter_mut() {
            let p = parts.next().ok_or_else(|| ParseMacError(s.into()))?;
            if p.len() != 2 {
                return Err(ParseMacError(s.into()));
            }
            *o = u8::from_str_radix(p, 16).map_err(|_| ParseMacError(s.into()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.into()));
        }
        Ok(MacAddress(octets))
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("VLAN id {0} out of range 0..=4095")]
    Vid(u16),
    #[error("priority code point {0} out of range 0..=7")]
    Pcp(u8),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES}-byte maximum")]
    Oversize(u32),
    #[error("stream data must be VLAN tagged")]
    UntaggedStream,
    #[error("SRP listener group {0} is not a multicast address")]
    UnicastGroup(MacAddress),
}

/// 802.1Q tag fields used for stream identification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VlanTag {
    vid: u16,
    pcp: u8,
}

impl VlanTag {
    pub fn new(vid: u16, pcp: u8) -> Result<Self, FrameError> {
        if vid > 4095 {
            return Err(FrameError::Vid(vid));
        }
        if pcp > 7 {
            return Err(FrameError::Pcp(pcp));
        }
        Ok(VlanTag { vid, pcp })
    }

    pub fn vid(self) -> u16 {
        self.vid
    }

    pub fn pcp(self) -> u8 {
        self.pcp
    }
}

/// Abstract protocol (network-layer) address used by ARP and UDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtocolAddr(pub u32);

impl fmt::Display for ProtocolAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0.to_be_bytes();
        write!(f, "{}.{}.{}.{}", b[0], b[1], b[2], b[3])
    }
}

impl FromStr for ProtocolAddr {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ip: std::net::Ipv4Addr = s.parse()?;
        Ok(ProtocolAddr(u32::from(ip)))
    }
}

impl<'de> Deserialize<'de> for ProtocolAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SrpKind {
    TalkerAdvertise,
    ListenerReady,
}

/// Stream reservation message. A ListenerReady echoes the descriptor of the
/// advertise it answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrpMessage {
    pub kind: SrpKind,
    pub stream_id: StreamId,
    pub dst_group: MacAddress,
    pub vlan: VlanTag,
    pub max_frame_bytes: u32,
    pub interval: SimTime,
    pub sr_class: SrClass,
}

impl SrpMessage {
    pub fn talker_advertise(
        stream_id: StreamId,
        dst_group: MacAddress,
        vlan: VlanTag,
        max_frame_bytes: u32,
        interval: SimTime,
        sr_class: SrClass,
    ) -> Result<Self, FrameError> {
        if !dst_group.is_multicast() {
            return Err(FrameError::UnicastGroup(dst_group));
        }
        Ok(SrpMessage {
            kind: SrpKind::TalkerAdvertise,
            stream_id,
            dst_group,
            vlan,
            max_frame_bytes,
            interval,
            sr_class,
        })
    }

    /// The ListenerReady answering this advertise.
    pub fn listener_ready(&self) -> SrpMessage {
        SrpMessage {
            kind: SrpKind::ListenerReady,
            ..self.clone()
        }
    }

    /// True when both messages describe the same reservation.
    pub fn same_descriptor(&self, other: &SrpMessage) -> bool {
        self.stream_id == other.stream_id
            && self.dst_group == other.dst_group
            && self.vlan == other.vlan
            && self.max_frame_bytes == other.max_frame_bytes
            && self.interval == other.interval
            && self.sr_class == other.sr_class
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArpKind {
    Request,
    Reply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArpMessage {
    pub kind: ArpKind,
    /// Protocol address being resolved.
    pub asked: ProtocolAddr,
    /// Resolved hardware address, replies only.
    pub answer: Option<MacAddress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UdpDatagram {
    pub src_addr: ProtocolAddr,
    pub dst_addr: ProtocolAddr,
    pub seq: u64,
    pub sent_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Srp(SrpMessage),
    Arp(ArpMessage),
    Udp(UdpDatagram),
    StreamData {
        stream_id: StreamId,
        seq: u64,
        sent_at: SimTime,
    },
}

impl Payload {
    pub fn is_stream_data(&self) -> bool {
        matches!(self, Payload::StreamData { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthernetFrame {
    pub src: MacAddress,
    pub dst: MacAddress,
    pub vlan: Option<VlanTag>,
    pub payload: Payload,
    frame_bytes: u32,
}

impl EthernetFrame {
    /// Builds a frame, padding it to the 64-byte minimum.
    pub fn new(
        src: MacAddress,
        dst: MacAddress,
        vlan: Option<VlanTag>,
        payload: Payload,
        frame_bytes: u32,
    ) -> Result<Self, FrameError> {
        if frame_bytes > MAX_FRAME_BYTES {
            return Err(FrameError::Oversize(frame_bytes));
        }
        if payload.is_stream_data() && vlan.is_none() {
            return Err(FrameError::UntaggedStream);
        }
        Ok(EthernetFrame {
            src,
            dst,
            vlan,
            payload,
            frame_bytes: frame_bytes.max(MIN_FRAME_BYTES),
        })
    }

    pub fn frame_bytes(&self) -> u32 {
        self.frame_bytes
    }

    /// Priority code point used for queue selection; untagged frames map to 0.
    pub fn pcp(&self) -> u8 {
        self.vlan.map_or(0, VlanTag::pcp)
    }

    pub fn vid(&self) -> Option<u16> {
        self.vlan.map(VlanTag::vid)
    }
}

/// Bytes occupied on the wire including preamble, SFD and interframe gap.
pub fn wire_size(frame: &EthernetFrame) -> u32 {
    frame.frame_bytes + WIRE_OVERHEAD_BYTES
}

pub fn wire_bits(frame: &EthernetFrame) -> u64 {
    wire_size(frame) as u64 * 8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(s: &str) -> MacAddress {
        s.parse().unwrap()
    }

    fn arp_frame(bytes: u32) -> EthernetFrame {
        EthernetFrame::new(
            mac("00:00:00:00:00:01"),
            MacAddress::BROADCAST,
            None,
            Payload::Arp(ArpMessage {
                kind: ArpKind::Request,
                asked: ProtocolAddr(1),
                answer: None,
            }),
            bytes,
        )
        .unwrap()
    }

    #[test]
    fn wire_size_adds_overhead() {
        assert_eq!(wire_size(&arp_frame(64)), 84);
        assert_eq!(wire_size(&arp_frame(1522)), 1542);
    }

    #[test]
    fn short_frames_are_padded() {
        let f = arp_frame(28);
        assert_eq!(f.frame_bytes(), 64);
        assert_eq!(wire_size(&f), 84);
    }

    #[test]
    fn oversize_frames_rejected() {
        let err = EthernetFrame::new(
            mac("00:00:00:00:00:01"),
            MacAddress::BROADCAST,
            None,
            Payload::Arp(ArpMessage {
                kind: ArpKind::Request,
                asked: ProtocolAddr(1),
                answer: None,
            }),
            1523,
        )
        .unwrap_err();
        assert_eq!(err, FrameError::Oversize(1523));
    }

    #[test]
    fn multicast_bit() {
        assert!(mac("01:00:5E:00:00:01").is_multicast());
        assert!(!mac("00:11:22:33:44:55").is_multicast());
        assert!(mac("FF:FF:FF:FF:FF:FF").is_multicast());
        assert!(mac("ff-ff-ff-ff-ff-ff").is_broadcast());
    }

    #[test]
    fn mac_parse_errors() {
        assert!("00:11:22:33:44".parse::<MacAddress>().is_err());
        assert!("00:11:22:33:44:55:66".parse::<MacAddress>().is_err());
        assert!("0g:11:22:33:44:55".parse::<MacAddress>().is_err());
        assert_eq!(mac("00:1A:22:33:44:55").to_string(), "00:1a:22:33:44:55");
    }

    #[test]
    fn vlan_ranges() {
        assert!(VlanTag::new(4095, 7).is_ok());
        assert_eq!(VlanTag::new(4096, 0), Err(FrameError::Vid(4096)));
        assert_eq!(VlanTag::new(1, 8), Err(FrameError::Pcp(8)));
    }

    #[test]
    fn stream_data_needs_a_tag() {
        let sid = StreamId::new(mac("00:00:00:00:00:01"), 1);
        let err = EthernetFrame::new(
            sid.talker,
            mac("91:e0:f0:00:00:01"),
            None,
            Payload::StreamData {
                stream_id: sid,
                seq: 0,
                sent_at: SimTime::ZERO,
            },
            150,
        )
        .unwrap_err();
        assert_eq!(err, FrameError::UntaggedStream);
    }

    #[test]
    fn advertise_requires_multicast_group() {
        let sid = StreamId::new(mac("00:00:00:00:00:01"), 1);
        let vlan = VlanTag::new(2, 6).unwrap();
        let err = SrpMessage::talker_advertise(
            sid,
            mac("00:00:00:00:00:02"),
            vlan,
            150,
            SimTime::from_us(125),
            SrClass::A,
        )
        .unwrap_err();
        assert!(matches!(err, FrameError::UnicastGroup(_)));
        let ta = SrpMessage::talker_advertise(
            sid,
            mac("91:e0:f0:00:00:01"),
            vlan,
            150,
            SimTime::from_us(125),
            SrClass::A,
        )
        .unwrap();
        let lr = ta.listener_ready();
        assert_eq!(lr.kind, SrpKind::ListenerReady);
        assert!(lr.same_descriptor(&ta));
    }

    #[test]
    fn untagged_frames_use_queue_zero() {
        assert_eq!(arp_frame(64).pcp(), 0);
    }
}
