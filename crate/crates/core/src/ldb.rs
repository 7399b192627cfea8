//! The learning database: an append-only text file of encoded flow tuples
//! (the GA search space) and a tab-separated ledger of emitted rules.
//!
//! Entry lines have the form `srcDec:srcPort:dstDec:dstPort:pktSize:proto`.
//! Ledger lines are
//! `src_ip proto dst_port action duration created_at hit_count flags`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::Protocol;

/// Rotation limit used when none is configured.
pub const DEFAULT_ROTATE_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum LdbError {
    #[error("malformed LDB entry {raw:?}: {reason}")]
    Grammar { raw: String, reason: String },
    #[error("malformed ledger line {line}: {reason}")]
    Ledger { line: usize, reason: String },
    #[error("storage error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn grammar(raw: &str, reason: impl Into<String>) -> LdbError {
    LdbError::Grammar {
        raw: raw.to_string(),
        reason: reason.into(),
    }
}

/// The six decoded fields of an entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowTuple {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub pkt_size: u32,
    pub proto: Protocol,
}

impl FlowTuple {
    pub fn encode(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}:{}",
            u32::from(self.src_ip),
            self.src_port,
            u32::from(self.dst_ip),
            self.dst_port,
            self.pkt_size,
            self.proto.number()
        )
    }

    /// Strict inverse of [`FlowTuple::encode`]: six canonical base-10 fields,
    /// no sign, no leading zeros.
    pub fn decode(raw: &str) -> Result<Self, LdbError> {
        let fields: Vec<&str> = raw.split(':').collect();
        if fields.len() != 6 {
            return Err(grammar(raw, format!("expected 6 fields, found {}", fields.len())));
        }
        let mut numbers = [0u64; 6];
        for (i, field) in fields.iter().enumerate() {
            if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
                return Err(grammar(
                    raw,
                    format!("field {} ({field:?}) is not a decimal integer", i + 1),
                ));
            }
            if field.len() > 1 && field.starts_with('0') {
                return Err(grammar(raw, format!("field {} ({field:?}) has leading zeros", i + 1)));
            }
            numbers[i] = field
                .parse()
                .map_err(|_| grammar(raw, format!("field {} ({field:?}) is out of range", i + 1)))?;
        }
        let ip = |i: usize| {
            u32::try_from(numbers[i])
                .map(Ipv4Addr::from)
                .map_err(|_| grammar(raw, format!("field {} exceeds 32 bits", i + 1)))
        };
        let port =
            |i: usize| u16::try_from(numbers[i]).map_err(|_| grammar(raw, format!("field {} exceeds 65535", i + 1)));
        let proto = u8::try_from(numbers[5])
            .ok()
            .and_then(Protocol::from_number)
            .ok_or_else(|| grammar(raw, format!("unknown protocol {}", numbers[5])))?;
        Ok(FlowTuple {
            src_ip: ip(0)?,
            src_port: port(1)?,
            dst_ip: ip(2)?,
            dst_port: port(3)?,
            pkt_size: u32::try_from(numbers[4]).map_err(|_| grammar(raw, "packet size exceeds 32 bits"))?,
            proto,
        })
    }
}

/// One learning-database row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdbEntry {
    raw: String,
    decoded: FlowTuple,
    /// Event time of insertion. Not persisted in the entry file, so entries
    /// loaded from disk carry `None`.
    pub inserted_at: Option<f64>,
}

impl LdbEntry {
    pub fn parse(raw: &str) -> Result<Self, LdbError> {
        let decoded = FlowTuple::decode(raw)?;
        Ok(LdbEntry {
            raw: raw.to_string(),
            decoded,
            inserted_at: None,
        })
    }

    pub fn from_tuple(decoded: FlowTuple) -> Self {
        LdbEntry {
            raw: decoded.encode(),
            decoded,
            inserted_at: None,
        }
    }

    pub fn at(mut self, inserted_at: f64) -> Self {
        self.inserted_at = Some(inserted_at);
        self
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn decoded(&self) -> &FlowTuple {
        &self.decoded
    }
}

impl fmt::Display for LdbEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Identity of an emitted rule. ICMP and IGMP tuples use `dst_port = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RuleTuple {
    pub src_ip: Ipv4Addr,
    pub proto: Protocol,
    pub dst_port: u16,
}

impl RuleTuple {
    pub fn new(src_ip: Ipv4Addr, proto: Protocol, dst_port: Option<u16>) -> Self {
        let dst_port = if proto.has_ports() { dst_port.unwrap_or(0) } else { 0 };
        RuleTuple {
            src_ip,
            proto,
            dst_port,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleAction {
    Drop,
    Ban { seconds: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleLedgerEntry {
    pub tuple: RuleTuple,
    pub action: RuleAction,
    pub created_at: f64,
    pub hit_count: u64,
    pub flags: BTreeSet<String>,
}

impl RuleLedgerEntry {
    pub fn new(tuple: RuleTuple, action: RuleAction, created_at: f64) -> Self {
        RuleLedgerEntry {
            tuple,
            action,
            created_at,
            hit_count: 1,
            flags: BTreeSet::new(),
        }
    }

    pub fn with_flags<S: AsRef<str>>(mut self, flags: impl IntoIterator<Item = S>) -> Self {
        self.flags.extend(flags.into_iter().map(|f| f.as_ref().to_string()));
        self
    }

    /// Drop rules never expire; bans expire `seconds` after creation.
    pub fn is_live(&self, now: f64) -> bool {
        match self.action {
            RuleAction::Drop => true,
            RuleAction::Ban { seconds } => now <= self.created_at + seconds as f64,
        }
    }

    fn to_line(&self) -> String {
        let (action, duration) = match self.action {
            RuleAction::Drop => ("drop", 0),
            RuleAction::Ban { seconds } => ("ban", seconds),
        };
        let flags: Vec<&str> = self.flags.iter().map(String::as_str).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.tuple.src_ip,
            self.tuple.proto.number(),
            self.tuple.dst_port,
            action,
            duration,
            self.created_at,
            self.hit_count,
            if flags.is_empty() {
                "-".to_string()
            } else {
                flags.join(",")
            }
        )
    }

    fn from_line(line: &str, lineno: usize) -> Result<Self, LdbError> {
        let bad = |reason: &str| LdbError::Ledger {
            line: lineno,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 8 {
            return Err(bad("expected 8 tab-separated columns"));
        }
        let src_ip: Ipv4Addr = cols[0].parse().map_err(|_| bad("bad src_ip"))?;
        let proto = cols[1]
            .parse::<u8>()
            .ok()
            .and_then(Protocol::from_number)
            .ok_or_else(|| bad("bad proto"))?;
        let dst_port: u16 = cols[2].parse().map_err(|_| bad("bad dst_port"))?;
        let duration: u64 = cols[4].parse().map_err(|_| bad("bad duration"))?;
        let action = match cols[3] {
            "drop" => RuleAction::Drop,
            "ban" if duration > 0 => RuleAction::Ban { seconds: duration },
            _ => return Err(bad("bad action")),
        };
        let created_at: f64 = cols[5].parse().map_err(|_| bad("bad created_at"))?;
        let hit_count: u64 = cols[6].parse().map_err(|_| bad("bad hit_count"))?;
        if hit_count == 0 {
            return Err(bad("hit_count must be at least 1"));
        }
        let flags = if cols[7] == "-" {
            BTreeSet::new()
        } else {
            cols[7].split(',').map(str::to_string).collect()
        };
        Ok(RuleLedgerEntry {
            tuple: RuleTuple {
                src_ip,
                proto,
                dst_port,
            },
            action,
            created_at,
            hit_count,
            flags,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Recorded,
    AlreadyPresent { hit_count: u64 },
}

#[derive(Debug)]
struct Files {
    entries: PathBuf,
    ledger: PathBuf,
    writer: BufWriter<File>,
}

/// Append-only entry log plus rule ledger. Mutations take `&mut self`;
/// share across threads behind a lock.
#[derive(Debug)]
pub struct LearningDb {
    entries: Vec<LdbEntry>,
    ledger: Vec<RuleLedgerEntry>,
    files: Option<Files>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LdbError + '_ {
    move |source| LdbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl LearningDb {
    pub fn in_memory() -> Self {
        LearningDb {
            entries: Vec::new(),
            ledger: Vec::new(),
            files: None,
        }
    }

    /// Opens (creating if absent) the entry file and ledger file.
    pub fn open(entries_path: impl AsRef<Path>, ledger_path: impl AsRef<Path>) -> Result<Self, LdbError> {
        let entries_path = entries_path.as_ref().to_path_buf();
        let ledger_path = ledger_path.as_ref().to_path_buf();

        let mut entries = Vec::new();
        if entries_path.exists() {
            let file = File::open(&entries_path).map_err(io_err(&entries_path))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io_err(&entries_path))?;
                if !line.trim().is_empty() {
                    entries.push(LdbEntry::parse(line.trim())?);
                }
            }
        }
        let mut ledger = Vec::new();
        if ledger_path.exists() {
            let text = fs::read_to_string(&ledger_path).map_err(io_err(&ledger_path))?;
            for (i, line) in text.lines().enumerate() {
                if !line.trim().is_empty() {
                    ledger.push(RuleLedgerEntry::from_line(line, i + 1)?);
                }
            }
        }
        let writer = Self::open_writer(&entries_path)?;
        Ok(LearningDb {
            entries,
            ledger,
            files: Some(Files {
                entries: entries_path,
                ledger: ledger_path,
                writer,
            }),
        })
    }

    fn open_writer(path: &Path) -> Result<BufWriter<File>, LdbError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(BufWriter::new(file))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, entry: LdbEntry) -> Result<(), LdbError> {
        self.append_all(std::iter::once(entry))
    }

    /// Appends in order and flushes once at the end.
    pub fn append_all(&mut self, entries: impl IntoIterator<Item = LdbEntry>) -> Result<(), LdbError> {
        for entry in entries {
            // Entries built through the public constructors are always valid;
            // re-check to catch a raw/decoded mismatch.
            if entry.decoded.encode() != entry.raw {
                return Err(grammar(&entry.raw, "raw text does not match decoded fields"));
            }
            if let Some(files) = &mut self.files {
                writeln!(files.writer, "{}", entry.raw).map_err(io_err(&files.entries))?;
            }
            self.entries.push(entry);
        }
        if let Some(files) = &mut self.files {
            files.writer.flush().map_err(io_err(&files.entries))?;
        }
        Ok(())
    }

    /// Parses and appends a raw entry line.
    pub fn append_raw(&mut self, raw: &str) -> Result<(), LdbError> {
        self.append(LdbEntry::parse(raw)?)
    }

    /// Point-in-time copy; later appends never change it.
    pub fn snapshot(&self) -> Vec<LdbEntry> {
        self.entries.clone()
    }

    pub fn ledger(&self) -> &[RuleLedgerEntry] {
        &self.ledger
    }

    fn live_index(&self, tuple: &RuleTuple, now: f64) -> Option<usize> {
        self.ledger.iter().position(|r| r.tuple == *tuple && r.is_live(now))
    }

    pub fn contains_rule(&self, tuple: &RuleTuple, now: f64) -> bool {
        self.live_index(tuple, now).is_some()
    }

    /// Records a rule, or bumps the hit count of a live rule with the same
    /// tuple. Expired rows for the tuple are replaced.
    pub fn record_rule(&mut self, entry: RuleLedgerEntry) -> Result<RecordOutcome, LdbError> {
        let outcome = match self.live_index(&entry.tuple, entry.created_at) {
            Some(i) => {
                let row = &mut self.ledger[i];
                row.hit_count += 1;
                row.flags.extend(entry.flags);
                RecordOutcome::AlreadyPresent {
                    hit_count: row.hit_count,
                }
            }
            None => {
                self.ledger.retain(|r| r.tuple != entry.tuple);
                self.ledger.push(entry);
                RecordOutcome::Recorded
            }
        };
        self.persist_ledger()?;
        Ok(outcome)
    }

    fn persist_ledger(&self) -> Result<(), LdbError> {
        let Some(files) = &self.files else { return Ok(()) };
        let mut text = String::new();
        for row in &self.ledger {
            text.push_str(&row.to_line());
            text.push('\n');
        }
        write_atomically(&files.ledger, text.as_bytes())
    }

    /// Keeps only the newest `max_entries` entries; the ledger is untouched.
    pub fn rotate(&mut self, max_entries: usize) -> Result<(), LdbError> {
        let max_entries = max_entries.max(1);
        if self.entries.len() <= max_entries {
            return Ok(());
        }
        let excess = self.entries.len() - max_entries;
        self.entries.drain(..excess);
        if let Some(files) = &mut self.files {
            files.writer.flush().map_err(io_err(&files.entries))?;
            let mut text = String::with_capacity(self.entries.len() * 40);
            for e in &self.entries {
                text.push_str(&e.raw);
                text.push('\n');
            }
            write_atomically(&files.entries, text.as_bytes())?;
            files.writer = Self::open_writer(&files.entries)?;
        }
        Ok(())
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), LdbError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
