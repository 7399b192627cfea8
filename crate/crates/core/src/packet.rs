//! Packet-header value types: TCP flag semantics, the IPv4 decimal codec and
//! the per-packet validity rules.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IpParseError {
    #[error("expected 4 dot-separated components, found {0}")]
    ComponentCount(usize),
    #[error("component {index} ({text:?}) is not a decimal integer in 0..=255")]
    Component { index: usize, text: String },
}

/// Converts a dotted-quad address to its base-256 positional value.
pub fn ip_to_decimal(ip: &str) -> Result<u32, IpParseError> {
    let parts: Vec<&str> = ip.trim().split('.').collect();
    if parts.len() != 4 {
        return Err(IpParseError::ComponentCount(parts.len()));
    }
    let mut value = 0u32;
    for (index, part) in parts.iter().enumerate() {
        let octet = parse_octet(part).ok_or_else(|| IpParseError::Component {
            index,
            text: (*part).to_string(),
        })?;
        value = (value << 8) | u32::from(octet);
    }
    Ok(value)
}

fn parse_octet(text: &str) -> Option<u8> {
    if text.is_empty() || text.len() > 3 || !text.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse::<u16>().ok().and_then(|v| u8::try_from(v).ok())
}

pub fn decimal_to_ip(n: u32) -> String {
    Ipv4Addr::from(n).to_string()
}

pub fn parse_ipv4(ip: &str) -> Result<Ipv4Addr, IpParseError> {
    ip_to_decimal(ip).map(Ipv4Addr::from)
}

/// IP protocol numbers carried in header records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Icmp,
    Igmp,
    Tcp,
    Udp,
}

impl Protocol {
    pub const fn number(self) -> u8 {
        match self {
            Protocol::Icmp => 1,
            Protocol::Igmp => 2,
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Protocol::Icmp),
            2 => Some(Protocol::Igmp),
            6 => Some(Protocol::Tcp),
            17 => Some(Protocol::Udp),
            _ => None,
        }
    }

    /// Upper-case name as printed in match reports ("TCP", "ICMP", ...).
    pub const fn name(self) -> &'static str {
        match self {
            Protocol::Icmp => "ICMP",
            Protocol::Igmp => "IGMP",
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
        }
    }

    /// Accepts either the numeric form or the name, case-insensitively.
    pub fn parse(text: &str) -> Option<Self> {
        if let Ok(n) = text.parse::<u8>() {
            return Self::from_number(n);
        }
        match text.to_ascii_uppercase().as_str() {
            "ICMP" => Some(Protocol::Icmp),
            "IGMP" => Some(Protocol::Igmp),
            "TCP" => Some(Protocol::Tcp),
            "UDP" => Some(Protocol::Udp),
            _ => None,
        }
    }

    pub const fn has_ports(self) -> bool {
        matches!(self, Protocol::Tcp | Protocol::Udp)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The six TCP control bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TcpFlags {
    pub urg: bool,
    pub ack: bool,
    pub psh: bool,
    pub rst: bool,
    pub syn: bool,
    pub fin: bool,
}

impl TcpFlags {
    pub const URG: u8 = 32;
    pub const ACK: u8 = 16;
    pub const PSH: u8 = 8;
    pub const RST: u8 = 4;
    pub const SYN: u8 = 2;
    pub const FIN: u8 = 1;

    pub const NONE: TcpFlags = TcpFlags::from_decimal(0);
    pub const SYN_ONLY: TcpFlags = TcpFlags::from_decimal(Self::SYN);
    pub const SYN_ACK: TcpFlags = TcpFlags::from_decimal(Self::SYN | Self::ACK);
    pub const ACK_ONLY: TcpFlags = TcpFlags::from_decimal(Self::ACK);
    pub const PSH_ACK: TcpFlags = TcpFlags::from_decimal(Self::PSH | Self::ACK);
    pub const FIN_ACK: TcpFlags = TcpFlags::from_decimal(Self::FIN | Self::ACK);

    /// Builds flags from the low six bits; higher bits are ignored.
    pub const fn from_decimal(bits: u8) -> Self {
        TcpFlags {
            urg: bits & Self::URG != 0,
            ack: bits & Self::ACK != 0,
            psh: bits & Self::PSH != 0,
            rst: bits & Self::RST != 0,
            syn: bits & Self::SYN != 0,
            fin: bits & Self::FIN != 0,
        }
    }

    pub const fn to_decimal(self) -> u8 {
        (self.urg as u8) * Self::URG
            + (self.ack as u8) * Self::ACK
            + (self.psh as u8) * Self::PSH
            + (self.rst as u8) * Self::RST
            + (self.syn as u8) * Self::SYN
            + (self.fin as u8) * Self::FIN
    }

    pub const fn is_empty(self) -> bool {
        self.to_decimal() == 0
    }

    pub const fn is_syn_only(self) -> bool {
        self.to_decimal() == Self::SYN
    }
}

pub fn flags_to_decimal(flags: TcpFlags) -> u8 {
    flags.to_decimal()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbnormalFlags {
    /// SYN and FIN together, with or without other bits.
    SynFin,
    /// FIN with no other bit, typical of stealth port scans.
    FinOnlyScan,
    /// No bit set at all.
    NullFlags,
}

/// Per-packet verdict on a flag combination. Multi-packet sequences such as
/// the handshake are not validated here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlagVerdict {
    Normal,
    Abnormal(AbnormalFlags),
}

impl FlagVerdict {
    pub fn is_normal(self) -> bool {
        matches!(self, FlagVerdict::Normal)
    }
}

pub fn classify_flag_combination(flags: TcpFlags) -> FlagVerdict {
    if flags.syn && flags.fin {
        FlagVerdict::Abnormal(AbnormalFlags::SynFin)
    } else if flags.to_decimal() == TcpFlags::FIN {
        FlagVerdict::Abnormal(AbnormalFlags::FinOnlyScan)
    } else if flags.is_empty() {
        FlagVerdict::Abnormal(AbnormalFlags::NullFlags)
    } else {
        FlagVerdict::Normal
    }
}

/// Where a header record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceFormat {
    NetfilterLog,
    CustomLog,
    Simulated,
}

/// One normalized packet-header observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    /// Seconds since the Unix epoch, microsecond resolution.
    pub timestamp: f64,
    pub tos: u8,
    /// Total datagram length in bytes (headers included).
    pub pkt_size: u32,
    pub ttl: u8,
    pub proto: Protocol,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: TcpFlags,
    pub window: u32,
    pub urgp: u16,
    /// Combined IP + transport header length in bytes.
    pub header_len: u32,
    pub seq: u32,
    pub ack_nr: u32,
    /// Raw option bytes from netfilter's OPT field, never decoded.
    pub options: Option<String>,
    pub source_format: SourceFormat,
}

impl HeaderRecord {
    /// A zeroed record for the given endpoints; callers fill in the rest.
    pub fn new(proto: Protocol, src_ip: Ipv4Addr, dst_ip: Ipv4Addr) -> Self {
        HeaderRecord {
            timestamp: 0.0,
            tos: 0,
            pkt_size: 0,
            ttl: 64,
            proto,
            src_ip,
            dst_ip,
            src_port: 0,
            dst_port: 0,
            flags: TcpFlags::NONE,
            window: 0,
            urgp: 0,
            header_len: default_header_len(proto),
            seq: 0,
            ack_nr: 0,
            options: None,
            source_format: SourceFormat::Simulated,
        }
    }

    pub fn payload_size(&self) -> u32 {
        self.pkt_size.saturating_sub(self.header_len)
    }
}

/// IPv4 header plus the minimal transport header for `proto`.
pub const fn default_header_len(proto: Protocol) -> u32 {
    match proto {
        Protocol::Tcp => 40,
        Protocol::Udp | Protocol::Icmp | Protocol::Igmp => 28,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PacketViolation {
    /// TCP/UDP packet with source or destination port 0.
    PortZero,
    /// ACK bit set while the acknowledgement number is 0.
    AckNumberZeroWithAck,
    /// A SYN-only packet carrying payload bytes.
    SynCarriesData,
    /// Destination address ending in .255.
    BroadcastDestination,
}

/// Applies the invalid-packet rules; an empty list means the packet is valid.
pub fn validate_packet(record: &HeaderRecord) -> Vec<PacketViolation> {
    let mut violations = Vec::new();
    if record.proto.has_ports() && (record.src_port == 0 || record.dst_port == 0) {
        violations.push(PacketViolation::PortZero);
    }
    if record.proto == Protocol::Tcp {
        if record.flags.ack && record.ack_nr == 0 {
            violations.push(PacketViolation::AckNumberZeroWithAck);
        }
        if record.flags.is_syn_only() && record.payload_size() > 0 {
            violations.push(PacketViolation::SynCarriesData);
        }
    }
    if is_broadcast(record.dst_ip) {
        violations.push(PacketViolation::BroadcastDestination);
    }
    violations
}

/// Last-octet heuristic; no netmask information is available.
pub fn is_broadcast(ip: Ipv4Addr) -> bool {
    ip.octets()[3] == 255
}
