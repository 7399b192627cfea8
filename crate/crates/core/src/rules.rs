//! Stage three: the fuzzy final decision, iptables rule rendering, and
//! enforcement through a pluggable sink with ledger dedup.

use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{classify, FilterAction, LinguisticRule, MembershipFunction, RuleSpec, TermLibrary, TruthValue};
use crate::ga::{DecodedMatch, MatchResult};
use crate::ldb::{LdbError, LearningDb, RecordOutcome, RuleAction, RuleLedgerEntry, RuleTuple};
use crate::packet::Protocol;
use crate::sensor::{Suspicion, SuspicionKind, VAR_PACKET_RATE};

pub const VAR_SUSPICION: &str = "suspicion";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub drop_threshold: f64,
    /// Ban length in seconds; the block is time-limited and expires in the
    /// ledger.
    pub ban_seconds: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            drop_threshold: crate::fuzzy::DEFAULT_DROP_THRESHOLD,
            ban_seconds: 300,
        }
    }
}

/// Terms for the final filter: `suspicion IS high` is the identity on the
/// sensor's degree. Sensor terms are merged in by the caller.
pub fn filter_terms(sensor_terms: &TermLibrary) -> TermLibrary {
    let mut lib = sensor_terms.clone();
    lib.insert(
        VAR_SUSPICION,
        "high",
        MembershipFunction::Trapezoid([0.0, 1.0, f64::INFINITY, f64::INFINITY]),
    );
    lib
}

pub fn default_filter_rules() -> Vec<RuleSpec> {
    vec![RuleSpec::new("suspicion IS high", crate::fuzzy::THREAT, 1.0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Drop,
    Ban { seconds: u64 },
    Accept,
}

/// Final classification. Accepts unless the GA hit is confirmed in the LDB
/// and the filter rules reach the drop threshold.
pub fn decide(suspicion: &Suspicion, result: &MatchResult, rules: &[LinguisticRule], config: &FilterConfig) -> Action {
    if !result.is_confirmed() {
        return Action::Accept;
    }
    let mut inputs = suspicion.evidence.fuzzy_inputs(1.0);
    inputs.insert(VAR_PACKET_RATE.to_string(), suspicion.packet_rate);
    inputs.insert(VAR_SUSPICION.to_string(), suspicion.degree.value());
    match classify(rules, &inputs, TruthValue::saturating(config.drop_threshold)) {
        Ok(d) if d.action == FilterAction::Drop => Action::Ban {
            seconds: config.ban_seconds,
        },
        Ok(_) => Action::Accept,
        Err(e) => {
            log::error!("filter rules failed: {e}");
            Action::Accept
        }
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("nothing to render for an Accept action")]
    AcceptNotRenderable,
    #[error("unknown protocol {0:?} in decoded match")]
    Protocol(String),
    #[error("bad source address {0:?}")]
    Address(String),
    #[error(transparent)]
    Ledger(#[from] LdbError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirewallRule {
    pub action: RuleAction,
    pub src_ip: Ipv4Addr,
    pub proto: Protocol,
    pub dst_port: Option<u16>,
    pub rendered: String,
}

impl FirewallRule {
    pub fn new(action: RuleAction, src_ip: Ipv4Addr, proto: Protocol, dst_port: Option<u16>) -> Self {
        let dst_port = dst_port.filter(|_| proto.has_ports());
        let rendered = render_text(src_ip, proto, dst_port);
        FirewallRule {
            action,
            src_ip,
            proto,
            dst_port,
            rendered,
        }
    }

    pub fn tuple(&self) -> RuleTuple {
        RuleTuple::new(self.src_ip, self.proto, self.dst_port)
    }
}

fn render_text(src_ip: Ipv4Addr, proto: Protocol, dst_port: Option<u16>) -> String {
    let proto = proto.name().to_ascii_lowercase();
    match dst_port {
        Some(port) => format!("iptables -A INPUT -s {src_ip} -p {proto} --dport {port} -j DROP"),
        None => format!("iptables -A INPUT -s {src_ip} -p {proto} -j DROP"),
    }
}

/// Renders `iptables -A INPUT -s <src> -p <proto>[ --dport <port>] -j DROP`.
/// Ban durations travel as metadata only.
pub fn render_rule(action: Action, decoded: &DecodedMatch) -> Result<FirewallRule, RuleError> {
    let action = match action {
        Action::Accept => return Err(RuleError::AcceptNotRenderable),
        Action::Drop => RuleAction::Drop,
        Action::Ban { seconds } => RuleAction::Ban { seconds },
    };
    let proto = Protocol::parse(&decoded.proto_name).ok_or_else(|| RuleError::Protocol(decoded.proto_name.clone()))?;
    let src_ip: Ipv4Addr = decoded
        .src_ip
        .parse()
        .map_err(|_| RuleError::Address(decoded.src_ip.clone()))?;
    Ok(FirewallRule::new(action, src_ip, proto, Some(decoded.dst_port)))
}

/// Receives rendered rule text. Implementations must treat repeated
/// identical text as a no-op.
pub trait RuleSink {
    fn apply(&mut self, rendered: &str) -> Result<(), String>;
}

/// Appends rules to a file, one per line, skipping lines already present.
#[derive(Debug)]
pub struct FileSink {
    path: PathBuf,
    seen: HashSet<String>,
}

impl FileSink {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let seen = match fs::read_to_string(&path) {
            Ok(text) => text.lines().map(str::to_string).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashSet::new(),
            Err(e) => return Err(e),
        };
        Ok(FileSink { path, seen })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RuleSink for FileSink {
    fn apply(&mut self, rendered: &str) -> Result<(), String> {
        if self.seen.contains(rendered) {
            return Ok(());
        }
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| e.to_string())?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| format!("{}: {e}", self.path.display()))?;
        writeln!(file, "{rendered}").map_err(|e| format!("{}: {e}", self.path.display()))?;
        self.seen.insert(rendered.to_string());
        Ok(())
    }
}

/// Executes each rule as a command (first word is the program). Off by
/// default; requires privileges for iptables.
#[derive(Debug, Default)]
pub struct CommandSink {
    applied: HashSet<String>,
}

impl RuleSink for CommandSink {
    fn apply(&mut self, rendered: &str) -> Result<(), String> {
        if self.applied.contains(rendered) {
            return Ok(());
        }
        let mut words = rendered.split_whitespace();
        let program = words.next().ok_or("empty rule")?;
        let status = Command::new(program)
            .args(words)
            .status()
            .map_err(|e| format!("{program}: {e}"))?;
        if !status.success() {
            return Err(format!("{program} exited with {status}"));
        }
        self.applied.insert(rendered.to_string());
        Ok(())
    }
}

/// Collects applied rules in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub applied: Vec<String>,
}

impl RuleSink for MemorySink {
    fn apply(&mut self, rendered: &str) -> Result<(), String> {
        if !self.applied.iter().any(|r| r == rendered) {
            self.applied.push(rendered.to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnforceOutcome {
    Applied,
    /// A live ledger row already covers the tuple; its hit count was bumped.
    Skipped {
        hit_count: u64,
    },
    Failed(String),
}

/// Applies a rule unless the ledger already holds a live row for its tuple.
/// A failing sink leaves the ledger unchanged. `now` is the event time used
/// for ledger expiry.
pub fn enforce(
    rule: &FirewallRule,
    kind: SuspicionKind,
    now: f64,
    store: &mut LearningDb,
    sink: &mut dyn RuleSink,
) -> Result<EnforceOutcome, RuleError> {
    let row = RuleLedgerEntry::new(rule.tuple(), rule.action, now).with_flags(["auto", kind.tag()]);
    if store.contains_rule(&rule.tuple(), now) {
        return match store.record_rule(row)? {
            RecordOutcome::AlreadyPresent { hit_count } => Ok(EnforceOutcome::Skipped { hit_count }),
            RecordOutcome::Recorded => Ok(EnforceOutcome::Skipped { hit_count: 1 }),
        };
    }
    if let Err(reason) = sink.apply(&rule.rendered) {
        return Ok(EnforceOutcome::Failed(reason));
    }
    store.record_rule(row)?;
    Ok(EnforceOutcome::Applied)
}
