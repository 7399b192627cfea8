use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use fgshield_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = fg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    fg_string_free(p);
    s
}

#[test]
fn ip_codec() {
    let mut n = 0u32;
    unsafe {
        assert_eq!(fg_ip_to_decimal(c("192.168.2.24").as_ptr(), &mut n), FgStatus::Ok);
        assert_eq!(n, 3232236056);
        assert_eq!(fg_ip_to_decimal(c("10.0.0.10").as_ptr(), &mut n), FgStatus::Ok);
        assert_eq!(n, 167772170);

        let mut out = ptr::null_mut();
        assert_eq!(fg_decimal_to_ip(3232235774, &mut out), FgStatus::Ok);
        assert_eq!(take(out), "192.168.0.254");

        assert_eq!(fg_ip_to_decimal(c("256.1.1.1").as_ptr(), &mut n), FgStatus::Parse);
        assert!(!last_error().is_empty());
        assert_eq!(fg_ip_to_decimal(ptr::null(), &mut n), FgStatus::NullPointer);
        assert_eq!(
            fg_ip_to_decimal(c("1.2.3.4").as_ptr(), ptr::null_mut()),
            FgStatus::NullPointer
        );
    }
}

#[test]
fn flags() {
    assert_eq!(fg_classify_flags(FG_FLAG_SYN), FgFlagVerdict::Normal);
    assert_eq!(fg_classify_flags(FG_FLAG_SYN | FG_FLAG_ACK), FgFlagVerdict::Normal);
    assert_eq!(fg_classify_flags(FG_FLAG_SYN | FG_FLAG_FIN), FgFlagVerdict::SynFin);
    assert_eq!(fg_classify_flags(FG_FLAG_FIN), FgFlagVerdict::FinOnly);
    assert_eq!(fg_classify_flags(0), FgFlagVerdict::NullFlags);
    assert_eq!(FG_FLAG_SYN | FG_FLAG_ACK, 18);
}

#[test]
fn entry_codec() {
    let t = FgFlowTuple {
        src_ip: 167772170,
        src_port: 3325,
        dst_ip: 3232235774,
        dst_port: 80,
        pkt_size: 160,
        proto: 6,
    };
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(fg_encode_entry(&t, &mut out), FgStatus::Ok);
        let raw = take(out);
        assert_eq!(raw, "167772170:3325:3232235774:80:160:6");

        let mut back = FgFlowTuple::default();
        assert_eq!(fg_decode_entry(c(&raw).as_ptr(), &mut back), FgStatus::Ok);
        assert_eq!(back, t);

        assert_eq!(fg_decode_entry(c("1:2:3").as_ptr(), &mut back), FgStatus::Parse);
        let bad = FgFlowTuple { proto: 99, ..t };
        assert_eq!(fg_encode_entry(&bad, &mut out), FgStatus::InvalidArgument);
    }
}

#[test]
fn parse_line() {
    let line = "PKTNR=5 Time=25-10-2013 21:18:30.332 IPV=4 IHL=20 TOS=0 PKTSIZE=60 ID=9540 TTL=64 PROTO=6 \
                CHKSUM=43788 SRC=10.0.0.10 DST=192.168.1.100 SPT=50409 DPT=80 SEQ=3461283511 ACKNR=0 TCPHL=40 \
                URG=0 ACK=0 PSH=0 RST=0 SYN=1 FIN=0 WIN=12600 TCPCHKSUM=31935 URGP=0 TCPIP_HDRL=60";
    let mut h = FgHeader::default();
    unsafe {
        assert_eq!(fg_parse_line(c(line).as_ptr(), true, &mut h), FgStatus::Ok);
        assert_eq!(fg_parse_line(c("garbage").as_ptr(), false, &mut h), FgStatus::Parse);
    }
    assert_eq!(h.proto, 6);
    assert_eq!(h.src_port, 50409);
    assert_eq!(h.dst_port, 80);
    assert_eq!(h.flags, FG_FLAG_SYN);
    assert_eq!(h.pkt_size, 60);
    assert_eq!(h.header_len, 60);
    assert_eq!(h.window, 12600);
}

#[test]
fn metrics() {
    let runs = [182.0, 328.0, 133.0, 230.0, 146.0, 181.0, 146.0, 728.0, 133.0, 114.0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(fg_performance_mean(runs.as_ptr(), runs.len(), &mut v), FgStatus::Ok);
        assert_eq!(v, 232.1);
        assert_eq!(fg_performance_mean(ptr::null(), 0, &mut v), FgStatus::InvalidArgument);
        assert_eq!(fg_detection_rate(90, 100, &mut v), FgStatus::Ok);
        assert_eq!(v, 90.0);
        assert_eq!(fg_detection_rate(1, 0, &mut v), FgStatus::InvalidArgument);
    }
}

#[test]
fn ldb_handle_and_search() {
    unsafe {
        let mut db = ptr::null_mut();
        assert_eq!(fg_ldb_new(&mut db), FgStatus::Ok);
        for port in 3300..3340 {
            let raw = format!("167772170:{port}:3232235774:80:160:6");
            assert_eq!(fg_ldb_append(db, c(&raw).as_ptr()), FgStatus::Ok);
        }
        assert_eq!(fg_ldb_append(db, c("01:2:3:4:5:6").as_ptr()), FgStatus::Parse);
        let mut len = 0usize;
        assert_eq!(fg_ldb_len(db, &mut len), FgStatus::Ok);
        assert_eq!(len, 40);

        let mut result = FgMatchResult {
            exact: false,
            confirmed: false,
            fitness: 0.0,
            generation: 0,
            elapsed_seconds: 0.0,
            best: ptr::null_mut(),
        };
        let target = c("167772170:3325:3232235774:80:160:6");
        assert_eq!(fg_ga_search(db, target.as_ptr(), 7, &mut result), FgStatus::Ok);
        assert!(result.exact && result.confirmed);
        assert_eq!(result.fitness, 1.0);
        assert_eq!(
            CStr::from_ptr(result.best).to_str().unwrap(),
            "167772170:3325:3232235774:80:160:6"
        );
        fg_match_result_clear(&mut result);
        assert!(result.best.is_null());

        let mut found = true;
        assert_eq!(
            fg_ldb_contains_rule(db, 167772170, 6, 80, 0.0, &mut found),
            FgStatus::Ok
        );
        assert!(!found);
        assert_eq!(
            fg_ldb_contains_rule(db, 167772170, 50, 80, 0.0, &mut found),
            FgStatus::InvalidArgument
        );

        fg_ldb_free(db);
        fg_ldb_free(ptr::null_mut());
        assert_eq!(fg_ldb_len(ptr::null(), &mut len), FgStatus::NullPointer);
    }
}

#[test]
fn file_backed_ldb_persists() {
    let dir = tempfile::tempdir().unwrap();
    let entries = c(dir.path().join("ldb.txt").to_str().unwrap());
    let ledger = c(dir.path().join("ledger.tsv").to_str().unwrap());
    unsafe {
        let mut db = ptr::null_mut();
        assert_eq!(fg_ldb_open(entries.as_ptr(), ledger.as_ptr(), &mut db), FgStatus::Ok);
        assert_eq!(fg_ldb_append(db, c("1:2:3:4:5:6").as_ptr()), FgStatus::Ok);
        fg_ldb_free(db);

        assert_eq!(fg_ldb_open(entries.as_ptr(), ledger.as_ptr(), &mut db), FgStatus::Ok);
        let mut len = 0usize;
        fg_ldb_len(db, &mut len);
        assert_eq!(len, 1);
        fg_ldb_free(db);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fgshield.h");
    assert!(header.exists(), "header missing at {}", header.display());
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "fg_ip_to_decimal",
        "fg_ldb_open",
        "fg_ga_search",
        "fg_string_free",
        "FG_STATUS_OK",
    ] {
        assert!(text.contains(name), "{name} not in header");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(&header)
        .output()
    else {
        eprintln!("cc not available; skipping C syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
