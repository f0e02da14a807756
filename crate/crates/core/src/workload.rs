//! Trace files, synthetic workloads and the domain rules applied to them.
//!
//! Trace text format, one item per line:
//!
//! ```text
//! # comment
//! domain <pid> <idid>          # header: pid -> isolation domain (0..=15)
//! shared <start> <end>         # header: half-open shared I/O region, hex
//! <pid> <R|W|F|IR|IW> <addr>   # body: one access, hex address
//! ```
//!
//! Pids without a `domain` line run in the non-isolated domain.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::str::FromStr;

use serde::Serialize;

use crate::cache::{AccessKind, AccessRequest, Idid};
use crate::error::{Error, Result};
use crate::geometry::{CacheConfig, DEFAULT_ADDR_BITS};
use crate::replacement::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TraceOp {
    R,
    W,
    F,
    IR,
    IW,
}

impl TraceOp {
    pub fn kind(self) -> AccessKind {
        match self {
            TraceOp::R => AccessKind::Read,
            TraceOp::W => AccessKind::Write,
            TraceOp::F => AccessKind::Flush,
            TraceOp::IR => AccessKind::IoRead,
            TraceOp::IW => AccessKind::IoWrite,
        }
    }

    pub fn is_io(self) -> bool {
        matches!(self, TraceOp::IR | TraceOp::IW)
    }
}

impl FromStr for TraceOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "R" => TraceOp::R,
            "W" => TraceOp::W,
            "F" => TraceOp::F,
            "IR" => TraceOp::IR,
            "IW" => TraceOp::IW,
            other => return Err(format!("unknown op {other:?}")),
        })
    }
}

impl fmt::Display for TraceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceOp::R => "R",
            TraceOp::W => "W",
            TraceOp::F => "F",
            TraceOp::IR => "IR",
            TraceOp::IW => "IW",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub pid: u32,
    pub op: TraceOp,
    pub addr: u64,
}

impl TraceRecord {
    pub fn new(pid: u32, op: TraceOp, addr: u64) -> Self {
        Self { pid, op, addr }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainMap {
    pub idids: BTreeMap<u32, Idid>,
    pub shared: Option<Range<u64>>,
}

impl DomainMap {
    pub fn idid_of(&self, pid: u32) -> Idid {
        self.idids.get(&pid).copied().unwrap_or(Idid::NON_ISOLATED)
    }

    pub fn in_shared(&self, addr: u64) -> bool {
        self.shared.as_ref().is_some_and(|r| r.contains(&addr))
    }

    /// Same shared region, every pid in the non-isolated domain.
    pub fn all_non_isolated(&self) -> Self {
        Self {
            idids: BTreeMap::new(),
            shared: self.shared.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Violation {
    /// Ordinary load/store/flush by an isolated pid inside the shared region.
    RegularAccessToSharedRegion,
    /// I/O move outside the shared region.
    IoMoveOutsideRegion,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::RegularAccessToSharedRegion => "regular_access_to_shared_region",
            Violation::IoMoveOutsideRegion => "io_move_outside_region",
        })
    }
}

/// Turns a record into a cache request, or the rule it breaks.
///
/// I/O moves inside the shared region are serviced as ordinary reads/writes
/// in the non-isolated domain. Everything else runs in the pid's domain.
pub fn apply_io_rules(
    rec: &TraceRecord,
    map: &DomainMap,
) -> std::result::Result<AccessRequest, Violation> {
    let inside = map.in_shared(rec.addr);
    let own = map.idid_of(rec.pid);
    let (kind, idid) = match rec.op {
        TraceOp::IR | TraceOp::IW if !inside => return Err(Violation::IoMoveOutsideRegion),
        TraceOp::IR => (AccessKind::Read, Idid::NON_ISOLATED),
        TraceOp::IW => (AccessKind::Write, Idid::NON_ISOLATED),
        _ if inside && own.is_isolated() => return Err(Violation::RegularAccessToSharedRegion),
        op => (op.kind(), own),
    };
    Ok(AccessRequest {
        pid: rec.pid,
        idid,
        kind,
        addr: rec.addr,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub domains: DomainMap,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn requests(
        &self,
    ) -> impl Iterator<Item = std::result::Result<AccessRequest, Violation>> + '_ {
        self.records
            .iter()
            .map(|r| apply_io_rules(r, &self.domains))
    }

    /// Canonical text: domain lines by pid, the shared line, then records.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (pid, idid) in &self.domains.idids {
            let _ = writeln!(out, "domain {pid} {idid}");
        }
        if let Some(r) = &self.domains.shared {
            let _ = writeln!(out, "shared {:x} {:x}", r.start, r.end);
        }
        for r in &self.records {
            let _ = writeln!(out, "{} {} {:x}", r.pid, r.op, r.addr);
        }
        out
    }
}

fn parse_hex(s: &str) -> std::result::Result<u64, String> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|e| format!("bad hex value {s:?}: {e}"))
}

fn parse_dec<T: FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} {s:?}"))
}

pub fn parse_trace(text: &str, addr_bits: u32) -> Result<Trace> {
    let mut trace = Trace::default();
    let check = |addr: u64| -> std::result::Result<u64, String> {
        if addr_bits < 64 && addr >> addr_bits != 0 {
            Err(format!("address {addr:#x} exceeds {addr_bits} bits"))
        } else {
            Ok(addr)
        }
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: std::result::Result<(), String> = (|| {
            match fields.as_slice() {
                ["domain", pid, idid] => {
                    if !trace.records.is_empty() {
                        return Err("domain line after first record".into());
                    }
                    let pid: u32 = parse_dec(pid, "pid")?;
                    let v: u32 = parse_dec(idid, "idid")?;
                    let idid = Idid::new(v).map_err(|e| e.to_string())?;
                    if trace.domains.idids.insert(pid, idid).is_some() {
                        return Err(format!("pid {pid} assigned twice"));
                    }
                }
                ["shared", start, end] => {
                    if !trace.records.is_empty() {
                        return Err("shared line after first record".into());
                    }
                    if trace.domains.shared.is_some() {
                        return Err("more than one shared region".into());
                    }
                    let (s, e) = (parse_hex(start)?, parse_hex(end)?);
                    if s >= e {
                        return Err("empty shared region".into());
                    }
                    trace.domains.shared = Some(s..e);
                }
                [pid, op, addr] => {
                    let pid = parse_dec(pid, "pid")?;
                    let op: TraceOp = op.parse()?;
                    let addr = check(parse_hex(addr)?)?;
                    trace.records.push(TraceRecord { pid, op, addr });
                }
                _ => return Err(format!("expected three fields, got {}", fields.len())),
            }
            Ok(())
        })();
        parsed.map_err(|reason| Error::Parse {
            line: i + 1,
            reason,
        })?;
    }
    Ok(trace)
}

pub fn parse_trace_default(text: &str) -> Result<Trace> {
    parse_trace(text, DEFAULT_ADDR_BITS)
}

/// Victim running a Montgomery-ladder exponentiation: each key bit, MSB
/// first, executes either the bit-0 body or the bit-1 body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VictimSpec {
    pub key_bits: Vec<bool>,
    pub addr_line5: u64,
    pub addr_line9: u64,
    pub addr_common: u64,
}

pub fn parse_key(bits: &str) -> Result<Vec<bool>> {
    bits.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::InvalidScenario(format!("key digit {other:?}"))),
        })
        .collect()
}

pub fn key_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn random_key(len: usize, seed: u64) -> Vec<bool> {
    let mut rng = SeededRng::derive(seed, 0x004B_4559);
    (0..len).map(|_| rng.next_bool()).collect()
}

impl VictimSpec {
    /// Three code lines spread over distinct L1 sets of a 128-set, 64 B cache.
    pub fn with_key(key_bits: Vec<bool>) -> Self {
        Self {
            key_bits,
            addr_line5: 0x40_1140,
            addr_line9: 0x40_1a80,
            addr_common: 0x40_1000,
        }
    }

    pub fn validate(&self, cfg: &CacheConfig, distinct_sets: bool) -> Result<()> {
        let lines = [self.addr_line5, self.addr_line9, self.addr_common].map(|a| cfg.line_addr(a));
        if lines[0] == lines[1] || lines[0] == lines[2] || lines[1] == lines[2] {
            return Err(Error::InvalidScenario(
                "victim addresses share a cache line".into(),
            ));
        }
        if distinct_sets && cfg.set_of_line(lines[0]) == cfg.set_of_line(lines[1]) {
            return Err(Error::InvalidScenario(
                "bit-0 and bit-1 lines map to the same set".into(),
            ));
        }
        Ok(())
    }

    /// Records issued while processing one key bit.
    pub fn bit_accesses(&self, bit: bool, pid: u32) -> [TraceRecord; 2] {
        let body = if bit {
            self.addr_line9
        } else {
            self.addr_line5
        };
        [
            TraceRecord::new(pid, TraceOp::R, self.addr_common),
            TraceRecord::new(pid, TraceOp::R, body),
        ]
    }
}

pub fn gen_montgomery_victim(spec: &VictimSpec, pid: u32) -> Result<Vec<TraceRecord>> {
    if spec.key_bits.is_empty() {
        return Err(Error::EmptyInput("victim key"));
    }
    Ok(spec
        .key_bits
        .iter()
        .flat_map(|&b| spec.bit_accesses(b, pid))
        .collect())
}

/// `num_accesses` line-aligned accesses uniform over `addr_range`, each a
/// read with probability `read_fraction`.
pub fn gen_uniform(
    pid: u32,
    num_accesses: usize,
    addr_range: Range<u64>,
    read_fraction: f64,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    if num_accesses == 0 {
        return Ok(Vec::new());
    }
    let lines = (addr_range.end.saturating_sub(addr_range.start)) / 64;
    if lines == 0 {
        return Err(Error::EmptyInput("address range"));
    }
    let mut rng = SeededRng::new(seed);
    Ok((0..num_accesses)
        .map(|_| {
            let addr = (addr_range.start & !63) + rng.next_below(lines) * 64;
            let op = if rng.next_f64() < read_fraction {
                TraceOp::R
            } else {
                TraceOp::W
            };
            TraceRecord::new(pid, op, addr)
        })
        .collect())
}

/// Random accesses confined to `lines` cache lines starting at `base`.
pub fn gen_working_set(
    pid: u32,
    base: u64,
    lines: u64,
    num_accesses: usize,
    read_fraction: f64,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    gen_uniform(
        pid,
        num_accesses,
        base..base + lines * 64,
        read_fraction,
        seed,
    )
}

/// Reads following a random cyclic permutation of `lines` cache lines.
pub fn gen_pointer_chase(
    pid: u32,
    base: u64,
    lines: u64,
    num_accesses: usize,
    seed: u64,
) -> Result<Vec<TraceRecord>> {
    if lines == 0 {
        return Err(Error::EmptyInput("pointer chase lines"));
    }
    let mut order: Vec<u64> = (0..lines).collect();
    SeededRng::new(seed).shuffle(&mut order);
    Ok(order
        .iter()
        .cycle()
        .take(num_accesses)
        .map(|&l| TraceRecord::new(pid, TraceOp::R, base + l * 64))
        .collect())
}

/// Round-robin merge taking `quantum` records from each trace in turn.
/// Exhausted traces drop out; per-trace order is preserved.
pub fn interleave(traces: &[Vec<TraceRecord>], quantum: usize) -> Result<Vec<TraceRecord>> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces to interleave"));
    }
    if quantum == 0 {
        return Err(Error::EmptyInput("zero quantum"));
    }
    let total = traces.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut pos = vec![0usize; traces.len()];
    while out.len() < total {
        for (t, p) in traces.iter().zip(pos.iter_mut()) {
            let end = (*p + quantum).min(t.len());
            out.extend_from_slice(&t[*p..end]);
            *p = end;
        }
    }
    Ok(out)
}

/// A named two-process workload: pid 1 runs non-isolated, pid 2 in IDID 1.
#[derive(Debug, Clone)]
pub struct Mix {
    pub name: &'static str,
    pub trace: Trace,
}

pub const MIX_NI_PID: u32 = 1;
pub const MIX_ISO_PID: u32 = 2;

/// Small synthetic stand-ins for two-program mixes, each pairing a
/// non-isolated and an isolated process with different cache footprints.
pub fn bundled_mixes() -> Vec<Mix> {
    const N: usize = 60_000;
    const NI_BASE: u64 = 0x1000_0000;
    const ISO_BASE: u64 = 0x8000_0000;
    let build = |name, ni: Vec<TraceRecord>, iso: Vec<TraceRecord>| {
        let mut domains = DomainMap::default();
        domains
            .idids
            .insert(MIX_ISO_PID, Idid::new(1).expect("valid idid"));
        Mix {
            name,
            trace: Trace {
                domains,
                records: interleave(&[ni, iso], 8).expect("non-empty"),
            },
        }
    };
    let ok = |r: Result<Vec<TraceRecord>>| r.expect("valid generator arguments");
    vec![
        build(
            "chase+uniform",
            ok(gen_pointer_chase(MIX_NI_PID, NI_BASE, 3000, N, 1)),
            ok(gen_uniform(
                MIX_ISO_PID,
                N,
                ISO_BASE..ISO_BASE + (1 << 20),
                0.8,
                2,
            )),
        ),
        build(
            "small+large",
            ok(gen_working_set(MIX_NI_PID, NI_BASE, 600, N, 0.7, 3)),
            ok(gen_working_set(MIX_ISO_PID, ISO_BASE, 16_384, N, 0.9, 4)),
        ),
        build(
            "uniform+chase",
            ok(gen_uniform(
                MIX_NI_PID,
                N,
                NI_BASE..NI_BASE + (8 << 20),
                0.75,
                5,
            )),
            ok(gen_pointer_chase(MIX_ISO_PID, ISO_BASE, 2048, N, 6)),
        ),
        build(
            "large+small",
            ok(gen_working_set(MIX_NI_PID, NI_BASE, 20_000, N, 0.8, 7)),
            ok(gen_working_set(MIX_ISO_PID, ISO_BASE, 200, N, 0.8, 8)),
        ),
    ]
}

pub fn bundled_mix(name: &str) -> Option<Mix> {
    bundled_mixes().into_iter().find(|m| m.name == name)
}
