//! One cache level with a hybrid controller.
//!
//! Requests from the non-isolated domain (IDID 0) see a conventional
//! set-associative LRU cache over all ways. Requests from an isolated domain
//! only see the subcache: the top `iso_ways` ways of every set, searched
//! fully-associatively on the extended tag and refilled by uniform random
//! choice over all subcache entries. A line only ever hits for the domain
//! that placed it.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{subcache_entry, subcache_slot, CacheConfig, Slot};
use crate::replacement::{random_victim, LruState, SeededRng};

/// 4-bit isolation domain identifier. Zero is the non-isolated domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Idid(u8);

impl Idid {
    pub const NON_ISOLATED: Idid = Idid(0);
    pub const MAX: u8 = 15;

    pub fn new(v: u32) -> Result<Self> {
        if v > Self::MAX as u32 {
            return Err(Error::InvalidIdid(v));
        }
        Ok(Idid(v as u8))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_isolated(self) -> bool {
        self.0 != 0
    }

    /// All sixteen domain ids.
    pub fn all() -> impl Iterator<Item = Idid> {
        (0..=Self::MAX).map(Idid)
    }
}

impl fmt::Display for Idid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AccessKind {
    Read,
    Write,
    Flush,
    IoRead,
    IoWrite,
}

impl AccessKind {
    pub fn is_write(self) -> bool {
        matches!(self, AccessKind::Write | AccessKind::IoWrite)
    }

    fn name(self) -> &'static str {
        match self {
            AccessKind::Read => "Read",
            AccessKind::Write => "Write",
            AccessKind::Flush => "Flush",
            AccessKind::IoRead => "IoRead",
            AccessKind::IoWrite => "IoWrite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRequest {
    pub pid: u32,
    pub idid: Idid,
    pub kind: AccessKind,
    pub addr: u64,
}

impl AccessRequest {
    pub fn read(idid: Idid, addr: u64) -> Self {
        Self {
            pid: 0,
            idid,
            kind: AccessKind::Read,
            addr,
        }
    }

    pub fn write(idid: Idid, addr: u64) -> Self {
        Self {
            kind: AccessKind::Write,
            ..Self::read(idid, addr)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheLine {
    pub valid: bool,
    pub dirty: bool,
    /// Extended tag: the address with the block offset stripped.
    pub line_addr: u64,
    pub idid: Idid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvictedLine {
    pub line_addr: u64,
    pub idid: Idid,
    pub dirty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccessOutcome {
    pub verdict: Verdict,
    /// Slot that hit, or slot that was filled on a miss.
    pub slot: Slot,
    pub victim: Option<EvictedLine>,
    /// Line address written back to the next level.
    pub writeback: Option<u64>,
}

impl AccessOutcome {
    pub fn is_hit(&self) -> bool {
        self.verdict == Verdict::Hit
    }

    pub fn filled_slot(&self) -> Option<Slot> {
        (self.verdict == Verdict::Miss).then_some(self.slot)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlushOutcome {
    pub invalidated: bool,
    pub writeback: Option<u64>,
}

/// Read-only copy of every line of a level, row-major by set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub num_ways: usize,
    pub lines: Vec<CacheLine>,
}

impl Snapshot {
    pub fn get(&self, slot: Slot) -> &CacheLine {
        &self.lines[slot.set * self.num_ways + slot.way]
    }

    pub fn slots(&self) -> impl Iterator<Item = (Slot, &CacheLine)> {
        let w = self.num_ways;
        self.lines.iter().enumerate().map(move |(i, l)| {
            (
                Slot {
                    set: i / w,
                    way: i % w,
                },
                l,
            )
        })
    }

    pub fn valid_lines(&self) -> impl Iterator<Item = (Slot, &CacheLine)> {
        self.slots().filter(|(_, l)| l.valid)
    }
}

#[derive(Debug, Clone)]
pub struct HybridCache {
    cfg: CacheConfig,
    lines: Vec<CacheLine>,
    lru: LruState,
    rng: SeededRng,
    /// (line_addr, idid) -> subcache entry, for valid isolated lines only.
    iso_index: HashMap<(u64, Idid), usize>,
}

impl HybridCache {
    pub fn new(cfg: CacheConfig, seed: u64) -> Result<Self> {
        let cfg = cfg.validate()?;
        let n = cfg.num_sets * cfg.num_ways;
        Ok(Self {
            lines: vec![CacheLine::default(); n],
            lru: LruState::new(cfg.num_sets, cfg.num_ways),
            rng: SeededRng::new(seed),
            iso_index: HashMap::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn lru(&self) -> &LruState {
        &self.lru
    }

    fn idx(&self, slot: Slot) -> usize {
        slot.set * self.cfg.num_ways + slot.way
    }

    pub fn line(&self, slot: Slot) -> &CacheLine {
        &self.lines[self.idx(slot)]
    }

    fn find_ni(&self, line_addr: u64) -> Option<Slot> {
        let set = self.cfg.set_of_line(line_addr);
        (0..self.cfg.num_ways)
            .map(|way| Slot { set, way })
            .find(|&s| {
                let l = self.line(s);
                l.valid && l.idid == Idid::NON_ISOLATED && l.line_addr == line_addr
            })
    }

    fn find_iso(&self, line_addr: u64, idid: Idid) -> Option<Slot> {
        self.iso_index
            .get(&(line_addr, idid))
            .map(|&e| subcache_slot(e, &self.cfg).expect("indexed entry in range"))
    }

    fn find(&self, line_addr: u64, idid: Idid) -> Option<Slot> {
        if idid.is_isolated() {
            self.find_iso(line_addr, idid)
        } else {
            self.find_ni(line_addr)
        }
    }

    /// Empties `slot`, reporting what was there.
    fn evict(&mut self, slot: Slot) -> (Option<EvictedLine>, Option<u64>) {
        let i = self.idx(slot);
        let old = std::mem::take(&mut self.lines[i]);
        if !old.valid {
            return (None, None);
        }
        if old.idid.is_isolated() {
            self.iso_index.remove(&(old.line_addr, old.idid));
        }
        let victim = EvictedLine {
            line_addr: old.line_addr,
            idid: old.idid,
            dirty: old.dirty,
        };
        (Some(victim), old.dirty.then_some(old.line_addr))
    }

    fn fill(&mut self, slot: Slot, line_addr: u64, idid: Idid, dirty: bool) {
        let i = self.idx(slot);
        self.lines[i] = CacheLine {
            valid: true,
            dirty,
            line_addr,
            idid,
        };
        if idid.is_isolated() {
            let entry = subcache_entry(slot, &self.cfg).expect("isolated fill outside subcache");
            self.iso_index.insert((line_addr, idid), entry);
        }
    }

    /// Services a read or write.
    pub fn access(&mut self, req: &AccessRequest) -> Result<AccessOutcome> {
        let write = match req.kind {
            AccessKind::Read | AccessKind::IoRead => false,
            AccessKind::Write | AccessKind::IoWrite => true,
            AccessKind::Flush => return Err(Error::UnsupportedKind(req.kind.name())),
        };
        self.cfg.check_addr(req.addr)?;
        let line_addr = self.cfg.line_addr(req.addr);

        if let Some(slot) = self.find(line_addr, req.idid) {
            let i = self.idx(slot);
            self.lines[i].dirty |= write;
            self.lru.touch(slot.set, slot.way);
            return Ok(AccessOutcome {
                verdict: Verdict::Hit,
                slot,
                victim: None,
                writeback: None,
            });
        }

        let slot = if req.idid.is_isolated() {
            let entry = random_victim(&mut self.rng, self.cfg.n_isolated());
            subcache_slot(entry, &self.cfg)?
        } else {
            let set = self.cfg.set_of_line(line_addr);
            let way = self
                .lru
                .victim_where(set, |w| !self.lines[set * self.cfg.num_ways + w].valid)
                .unwrap_or_else(|| self.lru.victim(set));
            Slot { set, way }
        };
        let (victim, writeback) = self.evict(slot);
        self.fill(slot, line_addr, req.idid, write);
        self.lru.touch(slot.set, slot.way);
        Ok(AccessOutcome {
            verdict: Verdict::Miss,
            slot,
            victim,
            writeback,
        })
    }

    /// Invalidates the line holding `addr` for exactly this domain, if any.
    /// Another domain's copy is never touched, and its presence cannot be told
    /// apart from absence.
    pub fn flush(&mut self, addr: u64, idid: Idid) -> FlushOutcome {
        if self.cfg.check_addr(addr).is_err() {
            return FlushOutcome::default();
        }
        match self.find(self.cfg.line_addr(addr), idid) {
            Some(slot) => {
                let (_, writeback) = self.evict(slot);
                FlushOutcome {
                    invalidated: true,
                    writeback,
                }
            }
            None => FlushOutcome::default(),
        }
    }

    /// Whether `access` would hit, without changing any state.
    pub fn probe(&self, addr: u64, idid: Idid) -> bool {
        self.cfg.check_addr(addr).is_ok() && self.find(self.cfg.line_addr(addr), idid).is_some()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            num_ways: self.cfg.num_ways,
            lines: self.lines.clone(),
        }
    }

    /// Number of valid lines owned by `idid`.
    pub fn occupancy(&self, idid: Idid) -> usize {
        if idid.is_isolated() {
            self.iso_index.keys().filter(|(_, d)| *d == idid).count()
        } else {
            self.lines
                .iter()
                .filter(|l| l.valid && l.idid == idid)
                .count()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: u64 = 0x20040;

    fn l1() -> HybridCache {
        HybridCache::new(CacheConfig::l1_default(), 1).unwrap()
    }

    fn id(v: u32) -> Idid {
        Idid::new(v).unwrap()
    }

    #[test]
    fn cold_ni_read_fills_initial_lru_victim() {
        let mut c = l1();
        let out = c
            .access(&AccessRequest::read(Idid::NON_ISOLATED, A))
            .unwrap();
        assert_eq!(out.verdict, Verdict::Miss);
        assert_eq!(out.filled_slot(), Some(Slot { set: 1, way: 7 }));
        assert_eq!(out.victim, None);
        assert_eq!(out.writeback, None);
        let again = c
            .access(&AccessRequest::read(Idid::NON_ISOLATED, A))
            .unwrap();
        assert!(again.is_hit());
    }

    #[test]
    fn ni_cannot_hit_isolated_line() {
        let mut c = l1();
        c.access(&AccessRequest::read(id(3), A)).unwrap();
        let out = c
            .access(&AccessRequest::read(Idid::NON_ISOLATED, A))
            .unwrap();
        assert_eq!(out.verdict, Verdict::Miss);
    }

    #[test]
    fn isolated_hit_anywhere_in_subcache() {
        let mut c = l1();
        let fill = c.access(&AccessRequest::read(id(3), A)).unwrap();
        let slot = fill.filled_slot().unwrap();
        assert!(c.config().is_subcache_way(slot.way));
        let hit = c.access(&AccessRequest::read(id(3), A)).unwrap();
        assert!(hit.is_hit());
        assert_eq!(hit.slot, slot);
    }

    #[test]
    fn other_domain_gets_its_own_copy() {
        let mut c = l1();
        let a = c.access(&AccessRequest::read(id(3), A)).unwrap().slot;
        let out = c.access(&AccessRequest::read(id(5), A)).unwrap();
        assert_eq!(out.verdict, Verdict::Miss);
        assert_ne!(out.slot, a);
        assert!(c.probe(A, id(3)));
        assert!(c.probe(A, id(5)));
        let copies = c
            .snapshot()
            .valid_lines()
            .filter(|(_, l)| l.line_addr == A >> 6)
            .count();
        assert_eq!(copies, 2);
    }

    #[test]
    fn flush_is_exact_domain() {
        let mut c = l1();
        c.access(&AccessRequest::read(Idid::NON_ISOLATED, A))
            .unwrap();
        assert!(c.flush(A, Idid::NON_ISOLATED).invalidated);

        c.access(&AccessRequest::read(id(2), A)).unwrap();
        let out = c.flush(A, id(1));
        assert_eq!(out, FlushOutcome::default());
        assert!(c.probe(A, id(2)));
        // absent line and foreign line are indistinguishable
        assert_eq!(c.flush(0x999_9000, id(1)), out);
    }

    #[test]
    fn flush_dirty_line_writes_back() {
        let mut c = l1();
        c.access(&AccessRequest::write(id(1), A)).unwrap();
        let out = c.flush(A, id(1));
        assert!(out.invalidated);
        assert_eq!(out.writeback, Some(A >> 6));
        assert!(!c.probe(A, id(1)));
    }

    #[test]
    fn probe_follows_exact_idid_rule() {
        let mut c = l1();
        assert!(!c.probe(A, id(2)));
        c.access(&AccessRequest::read(id(2), A)).unwrap();
        assert!(c.probe(A, id(2)));
        assert!(!c.probe(A, Idid::NON_ISOLATED));
    }

    #[test]
    fn snapshot_counts() {
        let mut c = l1();
        assert!(c.snapshot().valid_lines().next().is_none());
        c.access(&AccessRequest::read(Idid::NON_ISOLATED, A))
            .unwrap();
        let s = c.snapshot();
        let valid: Vec<_> = s.valid_lines().collect();
        assert_eq!(valid.len(), 1);
        assert_eq!(valid[0].1.idid, Idid::NON_ISOLATED);

        let mut c = l1();
        let k = 40;
        for i in 0..k {
            c.access(&AccessRequest::read(
                id(1 + (i % 3) as u32),
                0x100000 + i * 64,
            ))
            .unwrap();
        }
        let s = c.snapshot();
        let iso: Vec<_> = s
            .valid_lines()
            .filter(|(_, l)| l.idid.is_isolated())
            .collect();
        // random fills may collide; every survivor sits in the subcache
        assert!(iso.len() <= k as usize && !iso.is_empty());
        assert_eq!(
            iso.len(),
            (1..=3).map(|d| c.occupancy(id(d))).sum::<usize>()
        );
        assert!(iso
            .iter()
            .all(|(slot, _)| c.config().is_subcache_way(slot.way)));
    }

    #[test]
    fn dirty_ni_victim_emits_writeback() {
        let cfg = CacheConfig::new("tiny", 1, 2, 1, 1);
        let mut c = HybridCache::new(cfg, 0).unwrap();
        c.access(&AccessRequest::write(Idid::NON_ISOLATED, 0x000))
            .unwrap();
        c.access(&AccessRequest::read(Idid::NON_ISOLATED, 0x040))
            .unwrap();
        let out = c
            .access(&AccessRequest::read(Idid::NON_ISOLATED, 0x080))
            .unwrap();
        assert_eq!(
            out.victim,
            Some(EvictedLine {
                line_addr: 0,
                idid: Idid::NON_ISOLATED,
                dirty: true
            })
        );
        assert_eq!(out.writeback, Some(0));
    }

    #[test]
    fn isolated_miss_may_evict_ni_line() {
        // one set, one subcache way: the only isolated entry is way 1
        let cfg = CacheConfig::new("tiny", 1, 2, 1, 1);
        let mut c = HybridCache::new(cfg, 0).unwrap();
        c.access(&AccessRequest::read(Idid::NON_ISOLATED, 0x000))
            .unwrap();
        assert_eq!(
            c.snapshot().get(Slot { set: 0, way: 1 }).idid,
            Idid::NON_ISOLATED
        );
        let out = c.access(&AccessRequest::read(id(4), 0x040)).unwrap();
        assert_eq!(out.slot, Slot { set: 0, way: 1 });
        assert_eq!(out.victim.unwrap().idid, Idid::NON_ISOLATED);
        assert!(!c.probe(0x000, Idid::NON_ISOLATED));
    }

    #[test]
    fn isolated_fill_promotes_way_in_lru() {
        let mut c = l1();
        let slot = c.access(&AccessRequest::read(id(1), A)).unwrap().slot;
        assert_eq!(c.lru().order(slot.set).next(), Some(slot.way));
    }

    #[test]
    fn rejects_flush_kind_and_wide_address() {
        let mut c = l1();
        let mut req = AccessRequest::read(Idid::NON_ISOLATED, A);
        req.kind = AccessKind::Flush;
        assert!(matches!(c.access(&req), Err(Error::UnsupportedKind(_))));
        let req = AccessRequest::read(Idid::NON_ISOLATED, 1 << 46);
        assert!(matches!(
            c.access(&req),
            Err(Error::AddressOutOfRange { .. })
        ));
        assert!(matches!(Idid::new(16), Err(Error::InvalidIdid(16))));
    }
}
