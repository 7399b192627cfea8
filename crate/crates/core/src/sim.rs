//! Deterministic attack and benign traffic, emitted as log lines in either
//! ingestion format.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{micros_to_secs, secs_to_micros, to_custom_line, to_netfilter_line};
use crate::packet::{HeaderRecord, Protocol, TcpFlags};
use crate::sensor::FlowKey;

/// 25-10-2013 21:18:30 UTC.
pub const DEFAULT_START_TIME: f64 = 1_382_735_910.0;

/// Gap used for a "zero interval" flood ping; timestamps must still increase.
pub const FLOOD_PING_INTERVAL: f64 = 0.0001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("packet_count must be at least 1")]
    EmptyScenario,
    #[error("interarrival_seconds must be finite and non-negative, got {0}")]
    Interarrival(f64),
    #[error("smurf traffic needs a fixed payload size")]
    SmurfPayload,
    #[error("mixed scenario has no components")]
    EmptyMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    NetfilterLog,
    CustomLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Fixed(u32),
    Varying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScenarioKind {
    SynFlood,
    PingFlood,
    Smurf,
    Benign,
    /// Interleaves the component scenarios by timestamp.
    Mixed(Vec<Scenario>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub packet_count: usize,
    /// Gap between packets for floods; gap between sessions for benign
    /// traffic.
    pub interarrival_seconds: f64,
    pub payload: Payload,
    pub rng_seed: u64,
    pub output_format: OutputFormat,
    pub start_time: f64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        let (interarrival_seconds, payload) = match kind {
            ScenarioKind::SynFlood => (0.001, Payload::Fixed(0)),
            ScenarioKind::PingFlood => (FLOOD_PING_INTERVAL, Payload::Fixed(56)),
            ScenarioKind::Smurf => (0.001, Payload::Fixed(64)),
            ScenarioKind::Benign | ScenarioKind::Mixed(_) => (1.0, Payload::Varying),
        };
        Scenario {
            kind,
            src_ip: Ipv4Addr::new(10, 0, 0, 10),
            dst_ip: Ipv4Addr::new(192, 168, 0, 254),
            dst_port: 80,
            packet_count: 1000,
            interarrival_seconds,
            payload,
            rng_seed: 0,
            output_format: OutputFormat::NetfilterLog,
            start_time: DEFAULT_START_TIME,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let ScenarioKind::Mixed(parts) = &self.kind {
            if parts.is_empty() {
                return Err(SimError::EmptyMix);
            }
            return parts.iter().try_for_each(Scenario::validate);
        }
        if self.packet_count == 0 {
            return Err(SimError::EmptyScenario);
        }
        if !(self.interarrival_seconds >= 0.0 && self.interarrival_seconds.is_finite()) {
            return Err(SimError::Interarrival(self.interarrival_seconds));
        }
        if self.kind == ScenarioKind::Smurf && self.payload == Payload::Varying {
            return Err(SimError::SmurfPayload);
        }
        Ok(())
    }

    /// Smurf traffic always targets the .255 address of the destination.
    fn effective_dst(&self) -> Ipv4Addr {
        match self.kind {
            ScenarioKind::Smurf => {
                let [a, b, c, _] = self.dst_ip.octets();
                Ipv4Addr::new(a, b, c, 255)
            }
            _ => self.dst_ip,
        }
    }
}

/// Generates the scenario's records with strictly increasing timestamps.
pub fn generate_records(scenario: &Scenario) -> Result<Vec<HeaderRecord>, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let mut records = match &scenario.kind {
        ScenarioKind::SynFlood => syn_flood(scenario, &mut rng),
        ScenarioKind::PingFlood | ScenarioKind::Smurf => icmp_flood(scenario, &mut rng),
        ScenarioKind::Benign => benign(scenario, &mut rng),
        ScenarioKind::Mixed(parts) => {
            let mut tagged = Vec::new();
            for (i, part) in parts.iter().enumerate() {
                tagged.extend(generate_records(part)?.into_iter().enumerate().map(|(j, r)| (i, j, r)));
            }
            tagged.sort_by(|a, b| {
                a.2.timestamp
                    .total_cmp(&b.2.timestamp)
                    .then(a.0.cmp(&b.0))
                    .then(a.1.cmp(&b.1))
            });
            tagged.into_iter().map(|(_, _, r)| r).collect()
        }
    };
    make_strictly_increasing(&mut records);
    Ok(records)
}

/// Generates the scenario as log lines in its output format.
pub fn generate(scenario: &Scenario) -> Result<Vec<String>, SimError> {
    let records = generate_records(scenario)?;
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| match scenario.output_format {
            OutputFormat::NetfilterLog => to_netfilter_line(r),
            OutputFormat::CustomLog => to_custom_line(r, i as u64 + 1),
        })
        .collect())
}

/// Flows a perfect detector should flag.
pub fn label_ground_truth(scenario: &Scenario) -> BTreeSet<FlowKey> {
    let dst = scenario.effective_dst();
    let key = |proto, dst_port| FlowKey {
        src_ip: scenario.src_ip,
        dst_ip: dst,
        dst_port,
        proto,
    };
    match &scenario.kind {
        ScenarioKind::SynFlood => BTreeSet::from([key(Protocol::Tcp, scenario.dst_port)]),
        ScenarioKind::PingFlood | ScenarioKind::Smurf => BTreeSet::from([key(Protocol::Icmp, 0)]),
        ScenarioKind::Benign => BTreeSet::new(),
        ScenarioKind::Mixed(parts) => parts.iter().flat_map(label_ground_truth).collect(),
    }
}

fn timestamp(scenario: &Scenario, i: usize) -> f64 {
    let offset = secs_to_micros(i as f64 * scenario.interarrival_seconds);
    micros_to_secs(secs_to_micros(scenario.start_time) + offset)
}

fn make_strictly_increasing(records: &mut [HeaderRecord]) {
    let mut prev: Option<i64> = None;
    for r in records.iter_mut() {
        let mut us = secs_to_micros(r.timestamp);
        if let Some(p) = prev {
            if us <= p {
                us = p + 1;
            }
        }
        r.timestamp = micros_to_secs(us);
        prev = Some(us);
    }
}

fn payload_size(payload: Payload, rng: &mut impl Rng) -> u32 {
    match payload {
        Payload::Fixed(n) => n,
        Payload::Varying => rng.gen_range(32..=1400),
    }
}

fn syn_flood(s: &Scenario, rng: &mut impl Rng) -> Vec<HeaderRecord> {
    (0..s.packet_count)
        .map(|i| {
            let mut r = HeaderRecord::new(Protocol::Tcp, s.src_ip, s.dst_ip);
            r.timestamp = timestamp(s, i);
            r.src_port = rng.gen_range(1024..=65535);
            r.dst_port = s.dst_port;
            r.flags = TcpFlags::SYN_ONLY;
            r.seq = rng.gen();
            r.window = 29200;
            r.pkt_size = r.header_len;
            r
        })
        .collect()
}

fn icmp_flood(s: &Scenario, rng: &mut impl Rng) -> Vec<HeaderRecord> {
    let dst = s.effective_dst();
    (0..s.packet_count)
        .map(|i| {
            let mut r = HeaderRecord::new(Protocol::Icmp, s.src_ip, dst);
            r.timestamp = timestamp(s, i);
            r.seq = (i as u32 + 1) & 0xffff;
            r.pkt_size = r.header_len + payload_size(s.payload, rng);
            r
        })
        .collect()
}

/// Handshake, one data segment, and teardown per session:
/// SYN, SYN/ACK, ACK, PSH/ACK, FIN/ACK, ACK.
fn benign(s: &Scenario, rng: &mut impl Rng) -> Vec<HeaderRecord> {
    let mut out = Vec::with_capacity(s.packet_count);
    let mut session_start = secs_to_micros(s.start_time);
    while out.len() < s.packet_count {
        let client_port: u16 = rng.gen_range(32768..=60999);
        let client_isn: u32 = rng.gen_range(1..u32::MAX / 2);
        let server_isn: u32 = rng.gen_range(1..u32::MAX / 2);
        let data = payload_size(s.payload, rng);
        let mut t = session_start;
        let steps: [(bool, TcpFlags, u32, u32, u32); 6] = [
            (true, TcpFlags::SYN_ONLY, client_isn, 0, 0),
            (false, TcpFlags::SYN_ACK, server_isn, client_isn + 1, 0),
            (true, TcpFlags::ACK_ONLY, client_isn + 1, server_isn + 1, 0),
            (true, TcpFlags::PSH_ACK, client_isn + 1, server_isn + 1, data),
            (true, TcpFlags::FIN_ACK, client_isn + 1 + data, server_isn + 1, 0),
            (false, TcpFlags::ACK_ONLY, server_isn + 1, client_isn + 2 + data, 0),
        ];
        for (from_client, flags, seq, ack_nr, payload) in steps {
            if out.len() == s.packet_count {
                break;
            }
            let mut r = if from_client {
                let mut r = HeaderRecord::new(Protocol::Tcp, s.src_ip, s.dst_ip);
                r.src_port = client_port;
                r.dst_port = s.dst_port;
                r
            } else {
                let mut r = HeaderRecord::new(Protocol::Tcp, s.dst_ip, s.src_ip);
                r.src_port = s.dst_port;
                r.dst_port = client_port;
                r
            };
            r.timestamp = micros_to_secs(t);
            r.flags = flags;
            r.seq = seq;
            r.ack_nr = ack_nr;
            r.window = 29200;
            r.pkt_size = r.header_len + payload;
            out.push(r);
            t += rng.gen_range(5_000..50_000);
        }
        session_start += secs_to_micros(s.interarrival_seconds).max(t - session_start + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_stream, LogFormat};
    use crate::packet::{classify_flag_combination, validate_packet, PacketViolation};

    #[test]
    fn syn_flood_lines_parse_as_syn() {
        let s = Scenario {
            packet_count: 1000,
            ..Scenario::new(ScenarioKind::SynFlood)
        };
        let lines = generate(&s).unwrap();
        assert_eq!(lines.len(), 1000);
        let report = ingest_stream(&lines, LogFormat::NetfilterLog, 0.001);
        assert!(report.rejected.is_empty());
        assert!(report.records.iter().all(|r| r.flags == TcpFlags::SYN_ONLY));
        assert!(report.records.iter().all(|r| validate_packet(r).is_empty()));
    }

    #[test]
    fn smurf_records_hit_broadcast() {
        let s = Scenario {
            dst_ip: Ipv4Addr::new(192, 168, 1, 7),
            payload: Payload::Fixed(64),
            packet_count: 200,
            ..Scenario::new(ScenarioKind::Smurf)
        };
        let report = ingest_stream(generate(&s).unwrap(), LogFormat::NetfilterLog, 0.001);
        assert_eq!(report.records.len(), 200);
        let size = report.records[0].pkt_size;
        for r in &report.records {
            assert_eq!(r.dst_ip, Ipv4Addr::new(192, 168, 1, 255));
            assert!(validate_packet(r).contains(&PacketViolation::BroadcastDestination));
            assert_eq!(r.pkt_size, size);
        }
    }

    #[test]
    fn seeds_fix_the_output() {
        let s = Scenario {
            rng_seed: 77,
            ..Scenario::new(ScenarioKind::SynFlood)
        };
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = Scenario {
            rng_seed: 78,
            ..s.clone()
        };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn benign_flags_are_normal() {
        let s = Scenario {
            packet_count: 60,
            rng_seed: 4,
            ..Scenario::new(ScenarioKind::Benign)
        };
        let records = generate_records(&s).unwrap();
        assert_eq!(records.len(), 60);
        for r in &records {
            assert!(classify_flag_combination(r.flags).is_normal());
            assert!(validate_packet(r).is_empty(), "{r:?}");
        }
        assert!(label_ground_truth(&s).is_empty());
    }

    #[test]
    fn ground_truth_sets() {
        let flood = Scenario::new(ScenarioKind::SynFlood);
        let key = FlowKey {
            src_ip: flood.src_ip,
            dst_ip: flood.dst_ip,
            dst_port: 80,
            proto: Protocol::Tcp,
        };
        assert_eq!(label_ground_truth(&flood), BTreeSet::from([key]));

        let benign = Scenario {
            src_ip: Ipv4Addr::new(10, 0, 0, 99),
            ..Scenario::new(ScenarioKind::Benign)
        };
        let mixed = Scenario::new(ScenarioKind::Mixed(vec![flood.clone(), benign.clone()]));
        let expected: BTreeSet<FlowKey> = label_ground_truth(&flood)
            .union(&label_ground_truth(&benign))
            .copied()
            .collect();
        assert_eq!(label_ground_truth(&mixed), expected);
        assert_eq!(label_ground_truth(&mixed).len(), 1);
    }

    #[test]
    fn timestamps_strictly_increase() {
        let flood = Scenario {
            interarrival_seconds: 0.0,
            packet_count: 50,
            ..Scenario::new(ScenarioKind::SynFlood)
        };
        let benign = Scenario {
            src_ip: Ipv4Addr::new(10, 0, 0, 99),
            packet_count: 30,
            ..Scenario::new(ScenarioKind::Benign)
        };
        for s in [flood.clone(), Scenario::new(ScenarioKind::Mixed(vec![flood, benign]))] {
            let records = generate_records(&s).unwrap();
            assert!(records.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
        }
    }

    #[test]
    fn invalid_scenarios() {
        assert_eq!(
            generate(&Scenario {
                packet_count: 0,
                ..Scenario::new(ScenarioKind::SynFlood)
            }),
            Err(SimError::EmptyScenario)
        );
        assert!(generate(&Scenario {
            interarrival_seconds: -1.0,
            ..Scenario::new(ScenarioKind::SynFlood)
        })
        .is_err());
        assert_eq!(
            generate(&Scenario {
                payload: Payload::Varying,
                ..Scenario::new(ScenarioKind::Smurf)
            }),
            Err(SimError::SmurfPayload)
        );
        assert_eq!(
            generate(&Scenario::new(ScenarioKind::Mixed(vec![]))),
            Err(SimError::EmptyMix)
        );
    }
}
