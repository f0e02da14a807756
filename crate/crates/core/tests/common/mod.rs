//! Independent conventional W-way LRU cache, used as an oracle.
//!
//! Recency is kept as per-way timestamps rather than an ordered list. A fresh
//! set behaves as if ways had been used in descending index order, so way 0
//! is most recent and the last way is the first victim.

#![allow(dead_code)]

use hybsim::cache::{AccessKind, EvictedLine, Verdict};
use hybsim::{CacheConfig, Idid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefOutcome {
    pub verdict: Verdict,
    pub victim: Option<EvictedLine>,
    pub writeback: Option<u64>,
}

#[derive(Clone, Copy, Default)]
struct Way {
    valid: bool,
    dirty: bool,
    tag: u64,
    stamp: u64,
}

pub struct RefLru {
    sets: usize,
    ways: usize,
    line: u64,
    clock: u64,
    data: Vec<Way>,
}

impl RefLru {
    pub fn new(cfg: &CacheConfig) -> Self {
        let (sets, ways) = (cfg.num_sets, cfg.num_ways);
        let mut data = vec![Way::default(); sets * ways];
        for (i, w) in data.iter_mut().enumerate() {
            w.stamp = (ways - 1 - i % ways) as u64;
        }
        Self {
            sets,
            ways,
            line: cfg.line_size_bytes,
            clock: ways as u64,
            data,
        }
    }

    fn locate(&self, addr: u64) -> (u64, usize) {
        let line_addr = addr / self.line;
        (line_addr, (line_addr % self.sets as u64) as usize)
    }

    pub fn access(&mut self, kind: AccessKind, addr: u64) -> RefOutcome {
        let (line_addr, set) = self.locate(addr);
        self.clock += 1;
        let now = self.clock;
        let write = kind == AccessKind::Write;
        let row = &mut self.data[set * self.ways..(set + 1) * self.ways];
        if let Some(w) = row.iter_mut().find(|w| w.valid && w.tag == line_addr) {
            w.stamp = now;
            w.dirty |= write;
            return RefOutcome {
                verdict: Verdict::Hit,
                victim: None,
                writeback: None,
            };
        }
        let pick = |ws: &[Way], want_invalid: bool| {
            ws.iter()
                .enumerate()
                .filter(|(_, w)| !want_invalid || !w.valid)
                .min_by_key(|(_, w)| w.stamp)
                .map(|(i, _)| i)
        };
        let i = pick(row, true).or_else(|| pick(row, false)).unwrap();
        let old = row[i];
        row[i] = Way {
            valid: true,
            dirty: write,
            tag: line_addr,
            stamp: now,
        };
        let victim = old.valid.then_some(EvictedLine {
            line_addr: old.tag,
            idid: Idid::NON_ISOLATED,
            dirty: old.dirty,
        });
        RefOutcome {
            verdict: Verdict::Miss,
            victim,
            writeback: victim.filter(|v| v.dirty).map(|v| v.line_addr),
        }
    }

    pub fn flush(&mut self, addr: u64) -> Option<Option<u64>> {
        let (line_addr, set) = self.locate(addr);
        let row = &mut self.data[set * self.ways..(set + 1) * self.ways];
        let w = row.iter_mut().find(|w| w.valid && w.tag == line_addr)?;
        w.valid = false;
        Some(w.dirty.then_some(line_addr))
    }
}

/// Reference non-inclusive, fill-on-return hierarchy of [`RefLru`] levels.
pub struct RefHierarchy {
    pub levels: Vec<RefLru>,
}

impl RefHierarchy {
    pub fn new(cfgs: &[CacheConfig]) -> Self {
        Self {
            levels: cfgs.iter().map(RefLru::new).collect(),
        }
    }

    /// Outcomes of every level consulted, closest first.
    pub fn access(&mut self, kind: AccessKind, addr: u64) -> Vec<RefOutcome> {
        let mut out = Vec::new();
        for (i, l) in self.levels.iter_mut().enumerate() {
            let k = if i == 0 { kind } else { AccessKind::Read };
            let o = l.access(k, addr);
            out.push(o);
            if o.verdict == Verdict::Hit {
                break;
            }
        }
        out
    }

    pub fn flush(&mut self, addr: u64) {
        for l in &mut self.levels {
            l.flush(addr);
        }
    }
}

/// SplitMix64, independent of the crate's generator.
pub struct Mix64(pub u64);

impl Mix64 {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

/// Address drawn from a pool small enough to produce hits and conflicts at
/// every level of the default hierarchy.
pub fn pooled_addr(rng: &mut Mix64, pool_lines: u64) -> u64 {
    rng.below(pool_lines) * 64 + rng.below(64)
}
