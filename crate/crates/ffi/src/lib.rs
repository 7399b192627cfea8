//! C ABI over the fgshield core.
//!
//! Every fallible call returns an `FgStatus`; on failure a message is
//! available from `fg_last_error_message` on the same thread. Strings handed
//! out by this library must be released with `fg_string_free`, LDB handles
//! with `fg_ldb_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fgshield::ga::{run_search, GaConfig, SearchOutcome};
use fgshield::ingest::{parse_custom_line, parse_netfilter_line};
use fgshield::ldb::{FlowTuple, LdbEntry, LearningDb, RuleTuple};
use fgshield::packet::{
    classify_flag_combination, decimal_to_ip, ip_to_decimal, AbnormalFlags, FlagVerdict, Protocol, TcpFlags,
};
use fgshield::pipeline::{detection_rate, performance_mean};

pub const FG_FLAG_URG: u8 = 32;
pub const FG_FLAG_ACK: u8 = 16;
pub const FG_FLAG_PSH: u8 = 8;
pub const FG_FLAG_RST: u8 = 4;
pub const FG_FLAG_SYN: u8 = 2;
pub const FG_FLAG_FIN: u8 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgFlagVerdict {
    Normal = 0,
    SynFin = 1,
    FinOnly = 2,
    NullFlags = 3,
}

/// Decoded LDB entry. Addresses are host-order integers.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FgFlowTuple {
    pub src_ip: u32,
    pub src_port: u16,
    pub dst_ip: u32,
    pub dst_port: u16,
    pub pkt_size: u32,
    pub proto: u8,
}

/// Header fields of one parsed log line.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FgHeader {
    pub timestamp: f64,
    pub proto: u8,
    pub src_ip: u32,
    pub dst_ip: u32,
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: u8,
    pub pkt_size: u32,
    pub header_len: u32,
    pub ttl: u8,
    pub window: u32,
}

/// Outcome of a GA search. `best` is owned by the caller; release it with
/// `fg_match_result_clear`.
#[repr(C)]
#[derive(Debug)]
pub struct FgMatchResult {
    pub exact: bool,
    pub confirmed: bool,
    pub fitness: f64,
    pub generation: u64,
    pub elapsed_seconds: f64,
    pub best: *mut c_char,
}

/// Opaque learning database handle.
pub struct FgLdb {
    inner: LearningDb,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: FgStatus, msg: impl Into<String>) -> FgStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> FgStatus) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(FgStatus::Internal, "panic inside fgshield"),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, FgStatus> {
    if p.is_null() {
        return Err(fail(FgStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FgStatus::InvalidUtf8, "argument is not UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

macro_rules! out_ptr {
    ($p:expr) => {
        if $p.is_null() {
            return fail(FgStatus::NullPointer, "null output pointer");
        }
    };
}

macro_rules! try_str {
    ($p:expr) => {
        match unsafe { read_str($p) } {
            Ok(s) => s,
            Err(status) => return status,
        }
    };
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn fg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `ip` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_ip_to_decimal(ip: *const c_char, out: *mut u32) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let ip = try_str!(ip);
        match ip_to_decimal(ip) {
            Ok(n) => {
                *out = n;
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::Parse, e.to_string()),
        }
    })
}

/// Dotted-quad text for `n`, written to `*out`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_decimal_to_ip(n: u32, out: *mut *mut c_char) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        *out = into_c_string(decimal_to_ip(n));
        FgStatus::Ok
    })
}

/// Classifies a flag byte built from the `FG_FLAG_*` weights. Bits above
/// the six flags are ignored.
#[no_mangle]
pub extern "C" fn fg_classify_flags(flags: u8) -> FgFlagVerdict {
    match classify_flag_combination(TcpFlags::from_decimal(flags)) {
        FlagVerdict::Normal => FgFlagVerdict::Normal,
        FlagVerdict::Abnormal(AbnormalFlags::SynFin) => FgFlagVerdict::SynFin,
        FlagVerdict::Abnormal(AbnormalFlags::FinOnlyScan) => FgFlagVerdict::FinOnly,
        FlagVerdict::Abnormal(AbnormalFlags::NullFlags) => FgFlagVerdict::NullFlags,
    }
}

fn tuple_from_c(t: &FgFlowTuple) -> Result<FlowTuple, FgStatus> {
    let proto = Protocol::from_number(t.proto)
        .ok_or_else(|| fail(FgStatus::InvalidArgument, format!("unsupported protocol {}", t.proto)))?;
    Ok(FlowTuple {
        src_ip: t.src_ip.into(),
        src_port: t.src_port,
        dst_ip: t.dst_ip.into(),
        dst_port: t.dst_port,
        pkt_size: t.pkt_size,
        proto,
    })
}

fn tuple_to_c(t: &FlowTuple) -> FgFlowTuple {
    FgFlowTuple {
        src_ip: t.src_ip.into(),
        src_port: t.src_port,
        dst_ip: t.dst_ip.into(),
        dst_port: t.dst_port,
        pkt_size: t.pkt_size,
        proto: t.proto.number(),
    }
}

/// Encodes a tuple as an LDB entry string.
///
/// # Safety
/// `tuple` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_encode_entry(tuple: *const FgFlowTuple, out: *mut *mut c_char) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        if tuple.is_null() {
            return fail(FgStatus::NullPointer, "null tuple");
        }
        match tuple_from_c(&*tuple) {
            Ok(t) => {
                *out = into_c_string(t.encode());
                FgStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// # Safety
/// `raw` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_decode_entry(raw: *const c_char, out: *mut FgFlowTuple) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let raw = try_str!(raw);
        match FlowTuple::decode(raw) {
            Ok(t) => {
                *out = tuple_to_c(&t);
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::Parse, e.to_string()),
        }
    })
}

/// Parses one netfilter (`custom == false`) or custom log line.
///
/// # Safety
/// `line` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_parse_line(line: *const c_char, custom: bool, out: *mut FgHeader) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let line = try_str!(line);
        let parsed = if custom {
            parse_custom_line(line)
        } else {
            parse_netfilter_line(line)
        };
        match parsed {
            Ok(r) => {
                *out = FgHeader {
                    timestamp: r.timestamp,
                    proto: r.proto.number(),
                    src_ip: r.src_ip.into(),
                    dst_ip: r.dst_ip.into(),
                    src_port: r.src_port,
                    dst_port: r.dst_port,
                    flags: r.flags.to_decimal(),
                    pkt_size: r.pkt_size,
                    header_len: r.header_len,
                    ttl: r.ttl,
                    window: r.window,
                };
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_detection_rate(a: u64, n: u64, out: *mut f64) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        match detection_rate(a, n) {
            Ok(r) => {
                *out = r;
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `runs` must point to `len` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_performance_mean(runs: *const f64, len: usize, out: *mut f64) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        if runs.is_null() && len > 0 {
            return fail(FgStatus::NullPointer, "null runs");
        }
        let slice = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(runs, len)
        };
        match performance_mean(slice) {
            Ok(m) => {
                *out = m;
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Creates an empty LDB that lives only in memory.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_ldb_new(out: *mut *mut FgLdb) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        *out = Box::into_raw(Box::new(FgLdb {
            inner: LearningDb::in_memory(),
        }));
        FgStatus::Ok
    })
}

/// Opens (or creates) a file-backed LDB and its rule ledger.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_ldb_open(
    entries_path: *const c_char,
    ledger_path: *const c_char,
    out: *mut *mut FgLdb,
) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let entries = try_str!(entries_path);
        let ledger = try_str!(ledger_path);
        match LearningDb::open(entries, ledger) {
            Ok(db) => {
                *out = Box::into_raw(Box::new(FgLdb { inner: db }));
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::Io, e.to_string()),
        }
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `db` must come from `fg_ldb_new`/`fg_ldb_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fg_ldb_free(db: *mut FgLdb) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Appends one entry string after validating its grammar.
///
/// # Safety
/// `db` must be a live handle and `raw` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fg_ldb_append(db: *mut FgLdb, raw: *const c_char) -> FgStatus {
    guard(|| {
        let Some(db) = db.as_mut() else {
            return fail(FgStatus::NullPointer, "null handle");
        };
        let raw = try_str!(raw);
        match db.inner.append_raw(raw) {
            Ok(()) => FgStatus::Ok,
            Err(e @ fgshield::ldb::LdbError::Io { .. }) => fail(FgStatus::Io, e.to_string()),
            Err(e) => fail(FgStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `db` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_ldb_len(db: *const FgLdb, out: *mut usize) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let Some(db) = db.as_ref() else {
            return fail(FgStatus::NullPointer, "null handle");
        };
        *out = db.inner.len();
        FgStatus::Ok
    })
}

/// Whether a live rule for (src_ip, proto, dst_port) exists at time `now`.
/// `dst_port` is ignored for protocols without ports.
///
/// # Safety
/// `db` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_ldb_contains_rule(
    db: *const FgLdb,
    src_ip: u32,
    proto: u8,
    dst_port: u16,
    now: f64,
    out: *mut bool,
) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let Some(db) = db.as_ref() else {
            return fail(FgStatus::NullPointer, "null handle");
        };
        let Some(proto) = Protocol::from_number(proto) else {
            return fail(FgStatus::InvalidArgument, format!("unsupported protocol {proto}"));
        };
        let port = proto.has_ports().then_some(dst_port);
        *out = db.inner.contains_rule(&RuleTuple::new(src_ip.into(), proto, port), now);
        FgStatus::Ok
    })
}

/// Runs the GA against a snapshot of `db` with default settings and the
/// given seed.
///
/// # Safety
/// `db` must be a live handle, `target` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn fg_ga_search(
    db: *const FgLdb,
    target: *const c_char,
    seed: u64,
    out: *mut FgMatchResult,
) -> FgStatus {
    guard(|| {
        out_ptr!(out);
        let Some(db) = db.as_ref() else {
            return fail(FgStatus::NullPointer, "null handle");
        };
        let target = try_str!(target);
        if let Err(e) = LdbEntry::parse(target) {
            return fail(FgStatus::Parse, e.to_string());
        }
        let config = GaConfig {
            rng_seed: seed,
            ..GaConfig::default()
        };
        match run_search(target, &db.inner.snapshot(), &config) {
            Ok(r) => {
                *out = FgMatchResult {
                    exact: r.outcome == SearchOutcome::ExactMatch,
                    confirmed: r.is_confirmed(),
                    fitness: r.fitness.value(),
                    generation: r.generation,
                    elapsed_seconds: r.elapsed_seconds,
                    best: into_c_string(r.best.to_string()),
                };
                FgStatus::Ok
            }
            Err(e) => fail(FgStatus::Internal, e.to_string()),
        }
    })
}

/// Frees the string inside a result and nulls it.
///
/// # Safety
/// `result` must be NULL or point to a result filled by `fg_ga_search`.
#[no_mangle]
pub unsafe extern "C" fn fg_match_result_clear(result: *mut FgMatchResult) {
    if let Some(r) = result.as_mut() {
        fg_string_free(r.best);
        r.best = ptr::null_mut();
    }
}
