//! Parsers for the two on-disk header log formats: netfilter kernel log
//! lines and the 26-field custom capture log.

use std::fmt::Write as _;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{default_header_len, parse_ipv4, HeaderRecord, Protocol, SourceFormat, TcpFlags};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing required field {0}")]
    MissingField(&'static str),
    #[error("invalid value for {key}: {value:?}")]
    InvalidValue { key: String, value: String },
    #[error("invalid Time {0:?}, expected DD-MM-YYYY HH:MM:SS.mmm")]
    InvalidTime(String),
}

fn invalid(key: &str, value: &str) -> ParseError {
    ParseError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    NetfilterLog,
    CustomLog,
    AutoDetect,
}

/// Result of ingesting a stream: accepted records plus rejected lines with
/// their 1-based line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub records: Vec<HeaderRecord>,
    pub rejected: Vec<(usize, String)>,
}

// Timestamps travel as f64 seconds but are quantized to microseconds on both
// the read and write side so text round-trips are exact.
pub(crate) fn micros_to_secs(micros: i64) -> f64 {
    micros.div_euclid(1_000_000) as f64 + micros.rem_euclid(1_000_000) as f64 / 1e6
}

pub(crate) fn secs_to_micros(secs: f64) -> i64 {
    (secs * 1e6).round() as i64
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ParseError> {
    value.parse::<T>().map_err(|_| invalid(key, value))
}

fn parse_hex_or_dec(key: &str, value: &str) -> Result<u8, ParseError> {
    match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16).map_err(|_| invalid(key, value)),
        None => parse_num(key, value),
    }
}

/// A leading RFC 3339 timestamp or a kernel `[uptime]` stamp, if any.
fn prefix_timestamp(prefix: &[&str]) -> Option<f64> {
    if let Some(first) = prefix.first() {
        if let Ok(dt) = DateTime::parse_from_rfc3339(first) {
            let micros = dt.timestamp() * 1_000_000 + i64::from(dt.timestamp_subsec_micros());
            return Some(micros_to_secs(micros));
        }
    }
    let joined = prefix.join(" ");
    let start = joined.find('[')?;
    let end = start + joined[start..].find(']')?;
    let uptime: f64 = joined[start + 1..end].trim().parse().ok()?;
    Some(micros_to_secs(secs_to_micros(uptime)))
}

/// Parses one netfilter/iptables LOG line. Text before `IN=` is treated as a
/// prefix; a timestamp found there is used, otherwise the record's timestamp
/// is left at 0 for the caller to assign.
pub fn parse_netfilter_line(line: &str) -> Result<HeaderRecord, ParseError> {
    parse_netfilter_tokens(line).map(|(record, _)| record)
}

fn parse_netfilter_tokens(line: &str) -> Result<(HeaderRecord, bool), ParseError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let body_start = tokens.iter().position(|t| t.starts_with("IN=")).unwrap_or(0);
    let timestamp = prefix_timestamp(&tokens[..body_start]);

    let mut src = None;
    let mut dst = None;
    let mut proto = None;
    let mut len = None;
    let mut record_fields: Vec<(&str, &str)> = Vec::new();
    let mut flags = TcpFlags::NONE;
    let mut options = None;

    let mut iter = tokens[body_start..].iter().peekable();
    while let Some(token) = iter.next() {
        match token.split_once('=') {
            Some(("SRC", v)) => src = Some(parse_ipv4(v).map_err(|_| invalid("SRC", v))?),
            Some(("DST", v)) => dst = Some(parse_ipv4(v).map_err(|_| invalid("DST", v))?),
            Some(("PROTO", v)) => proto = Some(Protocol::parse(v).ok_or_else(|| invalid("PROTO", v))?),
            // UDP lines repeat LEN for the datagram length; the first is the IP length.
            Some(("LEN", v)) if len.is_none() => len = Some(parse_num::<u32>("LEN", v)?),
            Some((key, v)) => record_fields.push((key, v)),
            None => match *token {
                "URG" => flags.urg = true,
                "ACK" => flags.ack = true,
                "PSH" => flags.psh = true,
                "RST" => flags.rst = true,
                "SYN" => flags.syn = true,
                "FIN" => flags.fin = true,
                "OPT" => {
                    if let Some(next) = iter.next_if(|t| t.starts_with('(')) {
                        options = Some(next.trim_start_matches('(').trim_end_matches(')').to_string());
                    }
                }
                _ => {}
            },
        }
    }

    let src = src.ok_or(ParseError::MissingField("SRC"))?;
    let dst = dst.ok_or(ParseError::MissingField("DST"))?;
    let proto = proto.ok_or(ParseError::MissingField("PROTO"))?;

    let mut record = HeaderRecord::new(proto, src, dst);
    record.source_format = SourceFormat::NetfilterLog;
    record.timestamp = timestamp.unwrap_or(0.0);
    record.pkt_size = len.unwrap_or(0);
    for (key, v) in record_fields {
        match key {
            "TOS" => record.tos = parse_hex_or_dec(key, v)?,
            "TTL" => record.ttl = parse_num(key, v)?,
            "SPT" => record.src_port = parse_num(key, v)?,
            "DPT" => record.dst_port = parse_num(key, v)?,
            "SEQ" => record.seq = parse_num(key, v)?,
            "ACK" => record.ack_nr = parse_num(key, v)?,
            "WINDOW" => record.window = parse_num(key, v)?,
            "URGP" => record.urgp = parse_num(key, v)?,
            _ => {}
        }
    }
    if proto == Protocol::Tcp {
        record.flags = flags;
    }
    let option_bytes = options.as_ref().map_or(0, |o| o.len() as u32 / 2);
    record.header_len = default_header_len(proto) + option_bytes;
    record.options = options;
    Ok((record, timestamp.is_some()))
}

const CUSTOM_TIME_FORMAT: &str = "%d-%m-%Y %H:%M:%S%.f";

fn parse_custom_time(text: &str) -> Result<f64, ParseError> {
    let dt = NaiveDateTime::parse_from_str(text, CUSTOM_TIME_FORMAT)
        .map_err(|_| ParseError::InvalidTime(text.to_string()))?
        .and_utc();
    let micros = dt.timestamp() * 1_000_000 + i64::from(dt.timestamp_subsec_micros());
    Ok(micros_to_secs(micros))
}

fn format_custom_time(secs: f64) -> String {
    let micros = secs_to_micros(secs);
    let dt = DateTime::from_timestamp_micros(micros).unwrap_or_default();
    // Whole milliseconds keep the 3-digit layout; finer stamps widen to 6.
    if micros.rem_euclid(1000) == 0 {
        dt.format("%d-%m-%Y %H:%M:%S%.3f").to_string()
    } else {
        dt.format("%d-%m-%Y %H:%M:%S%.6f").to_string()
    }
}

fn parse_flag_bit(key: &str, value: &str) -> Result<bool, ParseError> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(invalid(key, value)),
    }
}

/// Parses one custom-log line of `KEY=VALUE` pairs. `Time` spans two tokens
/// (date and time of day) and is interpreted as UTC.
pub fn parse_custom_line(line: &str) -> Result<HeaderRecord, ParseError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let mut pairs: Vec<(&str, String)> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if let Some((key, value)) = tokens[i].split_once('=') {
            if key == "Time" && i + 1 < tokens.len() && !tokens[i + 1].contains('=') {
                pairs.push((key, format!("{} {}", value, tokens[i + 1])));
                i += 1;
            } else {
                pairs.push((key, value.to_string()));
            }
        }
        i += 1;
    }
    let lookup = |key: &str| pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str());

    let src = lookup("SRC").ok_or(ParseError::MissingField("SRC"))?;
    let dst = lookup("DST").ok_or(ParseError::MissingField("DST"))?;
    let proto = lookup("PROTO").ok_or(ParseError::MissingField("PROTO"))?;
    let time = lookup("Time").ok_or(ParseError::MissingField("Time"))?;

    let proto = Protocol::parse(proto).ok_or_else(|| invalid("PROTO", proto))?;
    let mut record = HeaderRecord::new(
        proto,
        parse_ipv4(src).map_err(|_| invalid("SRC", src))?,
        parse_ipv4(dst).map_err(|_| invalid("DST", dst))?,
    );
    record.source_format = SourceFormat::CustomLog;
    record.timestamp = parse_custom_time(time)?;

    let mut ihl = None;
    let mut tcphl = None;
    let mut hdrl = None;
    for (key, v) in &pairs {
        let v = v.as_str();
        match *key {
            "TOS" => record.tos = parse_hex_or_dec(key, v)?,
            "PKTSIZE" => record.pkt_size = parse_num(key, v)?,
            "TTL" => record.ttl = parse_num(key, v)?,
            "SPT" => record.src_port = parse_num(key, v)?,
            "DPT" => record.dst_port = parse_num(key, v)?,
            "SEQ" => record.seq = parse_num(key, v)?,
            "ACKNR" => record.ack_nr = parse_num(key, v)?,
            "URG" => record.flags.urg = parse_flag_bit(key, v)?,
            "ACK" => record.flags.ack = parse_flag_bit(key, v)?,
            "PSH" => record.flags.psh = parse_flag_bit(key, v)?,
            "RST" => record.flags.rst = parse_flag_bit(key, v)?,
            "SYN" => record.flags.syn = parse_flag_bit(key, v)?,
            "FIN" => record.flags.fin = parse_flag_bit(key, v)?,
            "WIN" => record.window = parse_num(key, v)?,
            "URGP" => record.urgp = parse_num(key, v)?,
            "IHL" => ihl = Some(parse_num::<u32>(key, v)?),
            "TCPHL" => tcphl = Some(parse_num::<u32>(key, v)?),
            "TCPIP_HDRL" => hdrl = Some(parse_num::<u32>(key, v)?),
            _ => {}
        }
    }
    record.header_len = match (hdrl, ihl, tcphl) {
        (Some(h), _, _) => h,
        (None, Some(i), Some(t)) => i + t,
        _ => default_header_len(proto),
    };
    Ok(record)
}

/// Parses a sequence of lines. Blank lines are skipped; failing lines are
/// collected in `rejected` and never abort the stream. Netfilter lines
/// without a timestamp prefix get synthetic timestamps `spacing` seconds
/// apart, continuing from the last timestamp seen.
pub fn ingest_stream<I, S>(lines: I, format: LogFormat, spacing: f64) -> ParseReport
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut report = ParseReport::default();
    let mut last_ts: Option<f64> = None;
    for (idx, line) in lines.into_iter().enumerate() {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        let use_custom = match format {
            LogFormat::CustomLog => true,
            LogFormat::NetfilterLog => false,
            LogFormat::AutoDetect => line.contains("PKTNR="),
        };
        let parsed = if use_custom {
            parse_custom_line(line)
        } else {
            parse_netfilter_tokens(line).map(|(mut record, stamped)| {
                if !stamped {
                    let next = last_ts.map_or(0.0, |t| t + spacing);
                    record.timestamp = micros_to_secs(secs_to_micros(next));
                }
                record
            })
        };
        match parsed {
            Ok(record) => {
                last_ts = Some(record.timestamp);
                report.records.push(record);
            }
            Err(e) => report.rejected.push((idx + 1, e.to_string())),
        }
    }
    report
}

/// Canonical netfilter line for a record, with an RFC 3339 prefix.
pub fn to_netfilter_line(record: &HeaderRecord) -> String {
    let micros = secs_to_micros(record.timestamp);
    let dt = DateTime::from_timestamp_micros(micros).unwrap_or_default();
    let mut line = format!(
        "{} sensor kernel: fgshield: IN=eth0 OUT= MAC=00:00:00:00:00:00 SRC={} DST={} LEN={} TOS=0x{:02X} PREC=0x00 TTL={} ID=0 PROTO={}",
        dt.format("%Y-%m-%dT%H:%M:%S%.6f+00:00"),
        record.src_ip,
        record.dst_ip,
        record.pkt_size,
        record.tos,
        record.ttl,
        record.proto.name(),
    );
    match record.proto {
        Protocol::Tcp => {
            let _ = write!(
                line,
                " SPT={} DPT={} SEQ={} ACK={} WINDOW={} RES=0x00",
                record.src_port, record.dst_port, record.seq, record.ack_nr, record.window
            );
            let f = record.flags;
            for (set, name) in [
                (f.urg, "URG"),
                (f.ack, "ACK"),
                (f.psh, "PSH"),
                (f.rst, "RST"),
                (f.syn, "SYN"),
                (f.fin, "FIN"),
            ] {
                if set {
                    line.push(' ');
                    line.push_str(name);
                }
            }
            let _ = write!(line, " URGP={}", record.urgp);
        }
        Protocol::Udp => {
            let _ = write!(
                line,
                " SPT={} DPT={} LEN={}",
                record.src_port,
                record.dst_port,
                record.pkt_size.saturating_sub(20)
            );
        }
        Protocol::Icmp => {
            let _ = write!(line, " TYPE=8 CODE=0 ID=0 SEQ={}", record.seq);
        }
        Protocol::Igmp => {}
    }
    if let Some(opt) = &record.options {
        let _ = write!(line, " OPT ({opt})");
    }
    line
}

/// Canonical custom-log line for a record; `pktnr` is the running packet number.
pub fn to_custom_line(record: &HeaderRecord, pktnr: u64) -> String {
    let f = record.flags;
    let transport_len = record.header_len.saturating_sub(20);
    format!(
        "PKTNR={} Time={} IPV=4 IHL=20 TOS={} PKTSIZE={} ID=0 TTL={} PROTO={} CHKSUM=0 \
         SRC={} DST={} SPT={} DPT={} SEQ={} ACKNR={} TCPHL={} URG={} ACK={} PSH={} RST={} SYN={} FIN={} \
         WIN={} TCPCHKSUM=0 URGP={} TCPIP_HDRL={}",
        pktnr,
        format_custom_time(record.timestamp),
        record.tos,
        record.pkt_size,
        record.ttl,
        record.proto.number(),
        record.src_ip,
        record.dst_ip,
        record.src_port,
        record.dst_port,
        record.seq,
        record.ack_nr,
        transport_len,
        f.urg as u8,
        f.ack as u8,
        f.psh as u8,
        f.rst as u8,
        f.syn as u8,
        f.fin as u8,
        record.window,
        record.urgp,
        record.header_len,
    )
}
