//! Stage one: per-flow sliding windows over header records, the fuzzy
//! pre-filter, and LDB entry encoding.
//!
//! Records are grouped into buckets of `bucket_seconds`; a flow's window is
//! the newest bucket plus the preceding ones up to `window_seconds`. Flows are
//! keyed without the source port since floods randomize it.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::fuzzy::{
    classify, FilterAction, Inputs, LinguisticRule, MembershipFunction, RuleSpec, TermLibrary, TruthValue,
};
use crate::ldb::FlowTuple;
use crate::packet::{classify_flag_combination, validate_packet, HeaderRecord, PacketViolation, Protocol};

pub const VAR_PACKET_COUNT: &str = "packet_count";
pub const VAR_PACKET_RATE: &str = "packet_rate";
pub const VAR_SYN_RATIO: &str = "syn_ratio";
pub const VAR_ABNORMAL_RATIO: &str = "abnormal_ratio";
pub const VAR_MEAN_INTERARRIVAL: &str = "mean_interarrival";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Packets per window above which a flow counts as HIGH. 500 packets is
    /// roughly a quarter of the default Linux receive buffer (2,129,920 bytes)
    /// at under 1 KiB per initial connection.
    pub packet_threshold: u32,
    pub bucket_seconds: f64,
    pub window_seconds: f64,
    /// Trapezoid over packets per second for the HIGH-rate term.
    pub rate_high: [f64; 4],
    /// Mean gap below which broadcast ICMP with constant payload is Smurf.
    pub smurf_interval: f64,
    /// Minimum pre-filter degree for a flow to escalate.
    pub escalation_threshold: f64,
    /// How far behind a flow's newest record a record may arrive and still
    /// be counted.
    pub clock_skew_tolerance: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            packet_threshold: 500,
            bucket_seconds: 1.0,
            window_seconds: 5.0,
            rate_high: [0.0, 100.0, f64::INFINITY, f64::INFINITY],
            smurf_interval: 0.01,
            escalation_threshold: 0.75,
            clock_skew_tolerance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensorConfigError {
    #[error("bucket_seconds must be positive, got {0}")]
    Bucket(f64),
    #[error("window_seconds must be at least bucket_seconds, got {0}")]
    Window(f64),
    #[error("rate_high: {0}")]
    RateHigh(crate::fuzzy::FuzzyError),
    #[error("escalation_threshold must be in (0, 1], got {0}")]
    Escalation(f64),
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SensorConfigError> {
        if !(self.bucket_seconds > 0.0 && self.bucket_seconds.is_finite()) {
            return Err(SensorConfigError::Bucket(self.bucket_seconds));
        }
        if !(self.window_seconds >= self.bucket_seconds && self.window_seconds.is_finite()) {
            return Err(SensorConfigError::Window(self.window_seconds));
        }
        let [a, b, c, d] = self.rate_high;
        MembershipFunction::trapezoid(a, b, c, d).map_err(SensorConfigError::RateHigh)?;
        if !(self.escalation_threshold > 0.0 && self.escalation_threshold <= 1.0) {
            return Err(SensorConfigError::Escalation(self.escalation_threshold));
        }
        Ok(())
    }

    fn window_buckets(&self) -> i64 {
        ((self.window_seconds / self.bucket_seconds).round() as i64).max(1)
    }

    fn bucket_of(&self, ts: f64) -> i64 {
        (ts / self.bucket_seconds).floor() as i64
    }

    /// Built-in terms: HIGH count (crisp step at `packet_threshold`), HIGH
    /// rate (`rate_high`), and ratio terms for SYN-only and abnormal flags.
    pub fn term_library(&self) -> TermLibrary {
        let mut lib = TermLibrary::new();
        lib.insert(
            VAR_PACKET_COUNT,
            "high",
            MembershipFunction::CrispStep(f64::from(self.packet_threshold)),
        );
        lib.insert(VAR_PACKET_RATE, "high", MembershipFunction::Trapezoid(self.rate_high));
        let dominant = MembershipFunction::Trapezoid([0.5, 0.9, f64::INFINITY, f64::INFINITY]);
        lib.insert(VAR_SYN_RATIO, "high", dominant);
        lib.insert(VAR_ABNORMAL_RATIO, "high", dominant);
        lib.insert(
            VAR_MEAN_INTERARRIVAL,
            "short",
            MembershipFunction::Trapezoid([f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, self.smurf_interval]),
        );
        lib
    }
}

/// `IF packets > threshold AND time intervals HIGH THEN threat`.
pub fn default_sensor_rules() -> Vec<RuleSpec> {
    vec![RuleSpec::new(
        "packet_count IS high AND packet_rate IS high",
        crate::fuzzy::THREAT,
        1.0,
    )]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub proto: Protocol,
}

impl FlowKey {
    pub fn of(record: &HeaderRecord) -> Self {
        FlowKey {
            src_ip: record.src_ip,
            dst_ip: record.dst_ip,
            dst_port: if record.proto.has_ports() { record.dst_port } else { 0 },
            proto: record.proto,
        }
    }

    /// `src dst dst_port proto`, the ground-truth file format.
    pub fn parse(text: &str) -> Option<Self> {
        let mut parts = text.split_whitespace();
        let key = FlowKey {
            src_ip: parts.next()?.parse().ok()?,
            dst_ip: parts.next()?.parse().ok()?,
            dst_port: parts.next()?.parse().ok()?,
            proto: Protocol::parse(parts.next()?)?,
        };
        parts.next().is_none().then_some(key)
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.src_ip,
            self.dst_ip,
            self.dst_port,
            self.proto.number()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub packet_count: usize,
    pub window_start: f64,
    pub window_end: f64,
    pub mean_interarrival: f64,
    pub syn_only_count: usize,
    pub distinct_payload_sizes: usize,
    pub last_payload_size: u32,
    pub broadcast_target: bool,
    pub abnormal_flag_count: usize,
}

impl WindowStats {
    /// Packets per second over the window span, never dividing by less than
    /// one bucket.
    pub fn packet_rate(&self, bucket_seconds: f64) -> f64 {
        let span = (self.window_end - self.window_start).max(bucket_seconds);
        self.packet_count as f64 / span
    }

    pub fn fuzzy_inputs(&self, bucket_seconds: f64) -> Inputs {
        let n = self.packet_count.max(1) as f64;
        Inputs::from([
            (VAR_PACKET_COUNT.to_string(), self.packet_count as f64),
            (VAR_PACKET_RATE.to_string(), self.packet_rate(bucket_seconds)),
            (VAR_SYN_RATIO.to_string(), self.syn_only_count as f64 / n),
            (VAR_ABNORMAL_RATIO.to_string(), self.abnormal_flag_count as f64 / n),
            (VAR_MEAN_INTERARRIVAL.to_string(), self.mean_interarrival),
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuspicionKind {
    TcpFlood,
    IcmpFlood,
    Smurf,
    FlagAnomaly,
}

impl SuspicionKind {
    /// Ledger flag tag.
    pub fn tag(self) -> &'static str {
        match self {
            SuspicionKind::TcpFlood => "tcp-flood",
            SuspicionKind::IcmpFlood => "icmp-flood",
            SuspicionKind::Smurf => "smurf",
            SuspicionKind::FlagAnomaly => "flag-anomaly",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suspicion {
    pub flow: FlowKey,
    pub degree: TruthValue,
    pub target_entry: String,
    pub evidence: WindowStats,
    pub kind: SuspicionKind,
    /// Packets per second at escalation.
    pub packet_rate: f64,
    /// Timestamp of the record that triggered escalation.
    pub observed_at: f64,
}

/// `srcDec:srcPort:dstDec:dstPort:pktSize:proto`.
pub fn encode_ldb_entry(record: &HeaderRecord) -> String {
    flow_tuple(record).encode()
}

pub fn flow_tuple(record: &HeaderRecord) -> FlowTuple {
    FlowTuple {
        src_ip: record.src_ip,
        src_port: record.src_port,
        dst_ip: record.dst_ip,
        dst_port: record.dst_port,
        pkt_size: record.pkt_size,
        proto: record.proto,
    }
}

pub fn detect_smurf_signature(stats: &WindowStats, record: &HeaderRecord, config: &SensorConfig) -> bool {
    record.proto == Protocol::Icmp
        && stats.broadcast_target
        && stats.distinct_payload_sizes == 1
        && stats.packet_count >= 2
        && stats.mean_interarrival < config.smurf_interval
}

/// Runs the fuzzy rules over a window. Emits a suspicion only when the
/// winning threat degree reaches the escalation threshold.
pub fn pre_filter(
    flow: &FlowKey,
    stats: &WindowStats,
    last_record: &HeaderRecord,
    config: &SensorConfig,
    rules: &[LinguisticRule],
) -> Option<Suspicion> {
    let threshold = TruthValue::saturating(config.escalation_threshold);
    let decision = match classify(rules, &stats.fuzzy_inputs(config.bucket_seconds), threshold) {
        Ok(d) => d,
        Err(e) => {
            log::error!("sensor rules failed for flow {flow}: {e}");
            return None;
        }
    };
    if decision.action != FilterAction::Drop || decision.degree < threshold {
        return None;
    }
    let kind = if flow.proto == Protocol::Icmp {
        if detect_smurf_signature(stats, last_record, config) {
            SuspicionKind::Smurf
        } else {
            SuspicionKind::IcmpFlood
        }
    } else if stats.abnormal_flag_count * 2 > stats.packet_count {
        SuspicionKind::FlagAnomaly
    } else {
        SuspicionKind::TcpFlood
    };
    Some(Suspicion {
        flow: *flow,
        degree: decision.degree,
        target_entry: encode_ldb_entry(last_record),
        evidence: stats.clone(),
        kind,
        packet_rate: stats.packet_rate(config.bucket_seconds),
        observed_at: last_record.timestamp,
    })
}

#[derive(Debug, Clone)]
struct FlowWindow {
    /// Retained records, ordered by timestamp.
    records: VecDeque<HeaderRecord>,
    syn_only: usize,
    abnormal: usize,
    broadcast: usize,
    payload_counts: HashMap<u32, usize>,
    newest_ts: f64,
    last: HeaderRecord,
}

struct Traits {
    syn_only: bool,
    abnormal: bool,
    broadcast: bool,
    payload: u32,
}

fn traits(record: &HeaderRecord) -> Traits {
    Traits {
        syn_only: record.proto == Protocol::Tcp && record.flags.is_syn_only(),
        abnormal: record.proto == Protocol::Tcp && !classify_flag_combination(record.flags).is_normal(),
        broadcast: validate_packet(record).contains(&PacketViolation::BroadcastDestination),
        payload: record.payload_size(),
    }
}

impl FlowWindow {
    fn new(record: &HeaderRecord) -> Self {
        FlowWindow {
            records: VecDeque::new(),
            syn_only: 0,
            abnormal: 0,
            broadcast: 0,
            payload_counts: HashMap::new(),
            newest_ts: record.timestamp,
            last: record.clone(),
        }
    }

    fn add(&mut self, record: &HeaderRecord) {
        let t = traits(record);
        self.syn_only += usize::from(t.syn_only);
        self.abnormal += usize::from(t.abnormal);
        self.broadcast += usize::from(t.broadcast);
        *self.payload_counts.entry(t.payload).or_default() += 1;
        let pos = self.records.partition_point(|r| r.timestamp <= record.timestamp);
        self.records.insert(pos, record.clone());
    }

    fn remove_front(&mut self) {
        let Some(record) = self.records.pop_front() else { return };
        let t = traits(&record);
        self.syn_only -= usize::from(t.syn_only);
        self.abnormal -= usize::from(t.abnormal);
        self.broadcast -= usize::from(t.broadcast);
        if let Some(c) = self.payload_counts.get_mut(&t.payload) {
            *c -= 1;
            if *c == 0 {
                self.payload_counts.remove(&t.payload);
            }
        }
    }

    fn stats(&self) -> WindowStats {
        let n = self.records.len();
        let start = self.records.front().map_or(self.newest_ts, |r| r.timestamp);
        let end = self.records.back().map_or(self.newest_ts, |r| r.timestamp);
        WindowStats {
            packet_count: n,
            window_start: start,
            window_end: end,
            mean_interarrival: if n > 1 { (end - start) / (n - 1) as f64 } else { 0.0 },
            syn_only_count: self.syn_only,
            distinct_payload_sizes: self.payload_counts.len(),
            last_payload_size: self.last.payload_size(),
            broadcast_target: self.broadcast > 0,
            abnormal_flag_count: self.abnormal,
        }
    }
}

/// What the sensor made of one record.
#[derive(Debug, Clone)]
pub struct Observation {
    pub flow: FlowKey,
    /// False when the record arrived too late to be windowed.
    pub counted: bool,
    pub stats: WindowStats,
    pub suspicion: Option<Suspicion>,
}

/// Stateful stage-one engine. Owned by a single updater.
#[derive(Debug, Clone)]
pub struct Sensor {
    config: SensorConfig,
    rules: Vec<LinguisticRule>,
    flows: BTreeMap<FlowKey, FlowWindow>,
    late_records: u64,
}

impl Sensor {
    pub fn new(config: SensorConfig, rules: Vec<LinguisticRule>) -> Self {
        Sensor {
            config,
            rules,
            flows: BTreeMap::new(),
            late_records: 0,
        }
    }

    /// Default configuration with the built-in flood rule.
    pub fn with_defaults() -> Self {
        let config = SensorConfig::default();
        let lib = config.term_library();
        let rules = default_sensor_rules()
            .iter()
            .map(|r| r.compile(&lib).expect("built-in sensor rule compiles"))
            .collect();
        Sensor::new(config, rules)
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn late_records(&self) -> u64 {
        self.late_records
    }

    /// Adds a record to its flow's window and evicts records that fell out
    /// of the window. Returns the flow's stats after the update.
    pub fn update_window(&mut self, record: &HeaderRecord) -> (FlowKey, bool, WindowStats) {
        let key = FlowKey::of(record);
        let config = &self.config;
        let window = self.flows.entry(key).or_insert_with(|| FlowWindow::new(record));

        let counted = if record.timestamp + config.clock_skew_tolerance < window.newest_ts {
            self.late_records += 1;
            log::warn!(
                "flow {key}: record at {} is more than {}s behind {}; not counted",
                record.timestamp,
                config.clock_skew_tolerance,
                window.newest_ts
            );
            false
        } else {
            window.add(record);
            if record.timestamp >= window.newest_ts {
                window.newest_ts = record.timestamp;
                window.last = record.clone();
            }
            true
        };

        let horizon = config.bucket_of(window.newest_ts) - (config.window_buckets() - 1);
        while window
            .records
            .front()
            .is_some_and(|r| config.bucket_of(r.timestamp) < horizon)
        {
            window.remove_front();
        }
        (key, counted, window.stats())
    }

    /// Updates the window and runs the pre-filter.
    pub fn observe(&mut self, record: &HeaderRecord) -> Observation {
        let (flow, counted, stats) = self.update_window(record);
        let suspicion = if counted {
            let last = &self.flows[&flow].last;
            pre_filter(&flow, &stats, last, &self.config, &self.rules)
        } else {
            None
        };
        Observation {
            flow,
            counted,
            stats,
            suspicion,
        }
    }

    pub fn stats(&self, flow: &FlowKey) -> Option<WindowStats> {
        self.flows.get(flow).map(FlowWindow::stats)
    }

    /// Records currently retained in a flow's window, oldest first.
    pub fn window_records(&self, flow: &FlowKey) -> impl Iterator<Item = &HeaderRecord> {
        self.flows.get(flow).into_iter().flat_map(|w| w.records.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::TcpFlags;

    fn syn(ts: f64, src_port: u16) -> HeaderRecord {
        let mut r = HeaderRecord::new(
            Protocol::Tcp,
            Ipv4Addr::new(10, 0, 0, 10),
            Ipv4Addr::new(192, 168, 0, 254),
        );
        r.timestamp = ts;
        r.src_port = src_port;
        r.dst_port = 80;
        r.flags = TcpFlags::SYN_ONLY;
        r.pkt_size = 40;
        r
    }

    fn icmp(ts: f64, dst: Ipv4Addr, size: u32) -> HeaderRecord {
        let mut r = HeaderRecord::new(Protocol::Icmp, Ipv4Addr::new(10, 0, 0, 5), dst);
        r.timestamp = ts;
        r.pkt_size = size;
        r
    }

    #[test]
    fn encode_examples() {
        let mut r = syn(0.0, 25233);
        r.src_ip = Ipv4Addr::new(192, 168, 2, 24);
        r.dst_ip = Ipv4Addr::new(192, 168, 3, 40);
        r.pkt_size = 1500;
        assert_eq!(encode_ldb_entry(&r), "3232236056:25233:3232236328:80:1500:6");

        let mut r = syn(0.0, 3325);
        r.pkt_size = 160;
        assert_eq!(encode_ldb_entry(&r), "167772170:3325:3232235774:80:160:6");

        let r = HeaderRecord::new(Protocol::Icmp, Ipv4Addr::UNSPECIFIED, Ipv4Addr::UNSPECIFIED);
        let mut r = r;
        r.pkt_size = 0;
        assert_eq!(encode_ldb_entry(&r), "0:0:0:0:0:1");
    }

    #[test]
    fn counts_and_interarrival() {
        let mut s = Sensor::with_defaults();
        for i in 0..3 {
            s.update_window(&syn(10.0 + 0.1 * i as f64, 1000 + i as u16));
        }
        let stats = s.stats(&FlowKey::of(&syn(0.0, 1))).unwrap();
        assert_eq!(stats.packet_count, 3);
        assert!((stats.mean_interarrival - 0.1).abs() < 1e-9);
        assert_eq!(stats.syn_only_count, 3);
        assert_eq!(stats.distinct_payload_sizes, 1);
    }

    #[test]
    fn old_records_evicted() {
        let mut s = Sensor::with_defaults();
        s.update_window(&syn(100.2, 1));
        s.update_window(&syn(104.9, 2));
        let (_, _, stats) = s.update_window(&syn(105.1, 3));
        // Buckets 101..=105 are retained; bucket 100 is gone.
        assert_eq!(stats.packet_count, 2);
        assert_eq!(stats.window_start, 104.9);
    }

    #[test]
    fn late_records_not_counted() {
        let mut s = Sensor::with_defaults();
        s.update_window(&syn(50.0, 1));
        let (_, counted, stats) = s.update_window(&syn(48.0, 2));
        assert!(!counted);
        assert_eq!(stats.packet_count, 1);
        assert_eq!(s.late_records(), 1);
        let (_, counted, stats) = s.update_window(&syn(49.5, 3));
        assert!(counted);
        assert_eq!(stats.packet_count, 2);
        assert_eq!(stats.window_start, 49.5);
    }

    #[test]
    fn threshold_is_strict() {
        let mut s = Sensor::with_defaults();
        let mut last = None;
        for i in 0..500 {
            last = Some(s.observe(&syn(7.0 + i as f64 * 0.001, i as u16 + 1)));
        }
        assert!(last.unwrap().suspicion.is_none());
        let obs = s.observe(&syn(7.5, 9999));
        assert_eq!(obs.stats.packet_count, 501);
        let sus = obs.suspicion.expect("501 packets in one bucket escalate");
        assert_eq!(sus.kind, SuspicionKind::TcpFlood);
        assert_eq!(sus.degree, TruthValue::ONE);
        assert_eq!(sus.target_entry, encode_ldb_entry(&syn(7.5, 9999)));
    }

    #[test]
    fn slow_traffic_never_escalates() {
        let config = SensorConfig {
            window_seconds: 600.0,
            ..SensorConfig::default()
        };
        let lib = config.term_library();
        let rules: Vec<_> = default_sensor_rules()
            .iter()
            .map(|r| r.compile(&lib).unwrap())
            .collect();
        let mut s = Sensor::new(config, rules);
        let mut fired = false;
        for i in 0..800 {
            fired |= s.observe(&syn(i as f64 * 0.75, i as u16 + 1)).suspicion.is_some();
        }
        assert!(!fired);
    }

    #[test]
    fn smurf_signature() {
        let config = SensorConfig::default();
        let bcast = Ipv4Addr::new(192, 168, 1, 255);
        let mut s = Sensor::with_defaults();
        for i in 0..10 {
            s.update_window(&icmp(1.0 + i as f64 * 0.001, bcast, 92));
        }
        let rec = icmp(1.01, bcast, 92);
        let (_, _, stats) = s.update_window(&rec);
        assert!(detect_smurf_signature(&stats, &rec, &config));

        let uni = Ipv4Addr::new(192, 168, 1, 7);
        let mut s = Sensor::with_defaults();
        let mut stats = None;
        for i in 0..10 {
            stats = Some(s.update_window(&icmp(1.0 + i as f64 * 0.001, uni, 92)).2);
        }
        assert!(!detect_smurf_signature(&stats.unwrap(), &icmp(1.0, uni, 92), &config));

        let mut s = Sensor::with_defaults();
        let mut stats = None;
        for i in 0..10 {
            stats = Some(s.update_window(&icmp(1.0 + i as f64 * 0.001, bcast, 60 + i)).2);
        }
        assert!(!detect_smurf_signature(&stats.unwrap(), &rec, &config));
    }

    #[test]
    fn flow_key_text() {
        let key = FlowKey::of(&syn(0.0, 1));
        assert_eq!(key.to_string(), "10.0.0.10 192.168.0.254 80 6");
        assert_eq!(FlowKey::parse(&key.to_string()), Some(key));
        assert_eq!(FlowKey::parse("1.2.3.4 5.6.7.8 80"), None);
    }

    #[test]
    fn config_validation() {
        assert!(SensorConfig::default().validate().is_ok());
        assert!(SensorConfig {
            bucket_seconds: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SensorConfig {
            window_seconds: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SensorConfig {
            rate_high: [5.0, 1.0, 2.0, 3.0],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
