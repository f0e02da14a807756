//! Multi-level composition of hybrid caches.
//!
//! Levels are tried closest first. A miss at a level installs the line there
//! (fill on return), so a hit at level `k` leaves the line in every level
//! above it and a full miss fills every level. The hierarchy is
//! non-inclusive: evictions at one level never invalidate other levels.
//! Writes dirty only the closest level; deeper levels see the fetch as a read.
//! Writebacks are counted but not replayed into the next level.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cache::{AccessKind, AccessOutcome, AccessRequest, FlushOutcome, HybridCache, Idid};
use crate::error::{Error, Result};
use crate::geometry::CacheConfig;
use crate::replacement::SeededRng;

pub const DEFAULT_MEMORY_LATENCY: u64 = 100;
pub const DEFAULT_SEED: u64 = 0x4859_4243_4143_4845;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierarchyConfig {
    pub levels: Vec<CacheConfig>,
    pub memory_latency_cycles: u64,
    pub seed: u64,
}

impl Default for HierarchyConfig {
    /// Three levels (64 KB / 256 KB / 4 MB) with two subcache ways per set.
    fn default() -> Self {
        Self {
            levels: vec![
                CacheConfig::l1_default(),
                CacheConfig::l2_default(),
                CacheConfig::l3_default(),
            ],
            memory_latency_cycles: DEFAULT_MEMORY_LATENCY,
            seed: DEFAULT_SEED,
        }
    }
}

impl HierarchyConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iso_ways(mut self, iso_ways: usize) -> Self {
        for l in &mut self.levels {
            l.iso_ways = iso_ways;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ServicedBy {
    Level(usize),
    Memory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HierarchyOutcome {
    pub serviced_by: ServicedBy,
    pub total_latency_cycles: u64,
    /// Outcome at each level that was consulted, closest first.
    pub levels: Vec<AccessOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub writebacks: u64,
}

impl Counters {
    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn miss_rate(&self) -> f64 {
        match self.accesses() {
            0 => 0.0,
            n => self.misses as f64 / n as f64,
        }
    }
}

/// One row of the exported statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub level: String,
    pub idid: u8,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_rate: f64,
    pub evictions: u64,
    pub writebacks: u64,
    pub amat_cycles: f64,
}

pub const STATS_CSV_HEADER: &str =
    "level,idid,accesses,hits,misses,miss_rate,evictions,writebacks,amat_cycles";

impl StatsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{},{},{:.4}",
            self.level,
            self.idid,
            self.accesses,
            self.hits,
            self.misses,
            self.miss_rate,
            self.evictions,
            self.writebacks,
            self.amat_cycles
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsTable {
    pub level_names: Vec<String>,
    pub hit_latencies: Vec<u64>,
    pub memory_latency: u64,
    /// Keyed by (level index, idid).
    pub cells: BTreeMap<(usize, Idid), Counters>,
    pub memory_fetches: BTreeMap<Idid, u64>,
}

impl StatsTable {
    fn new(cfg: &HierarchyConfig) -> Self {
        Self {
            level_names: cfg.levels.iter().map(|l| l.level_name.clone()).collect(),
            hit_latencies: cfg.levels.iter().map(|l| l.hit_latency_cycles).collect(),
            memory_latency: cfg.memory_latency_cycles,
            cells: BTreeMap::new(),
            memory_fetches: BTreeMap::new(),
        }
    }

    pub fn get(&self, level: usize, idid: Idid) -> Counters {
        self.cells.get(&(level, idid)).copied().unwrap_or_default()
    }

    pub fn memory_fetches(&self, idid: Idid) -> u64 {
        self.memory_fetches.get(&idid).copied().unwrap_or(0)
    }

    /// Domains with any recorded activity, always including IDID 0.
    pub fn domains(&self) -> Vec<Idid> {
        let mut d: Vec<Idid> = self.cells.keys().map(|&(_, i)| i).collect();
        d.push(Idid::NON_ISOLATED);
        d.sort();
        d.dedup();
        d
    }

    /// Average access time seen at `level` for one domain:
    /// `t_k = hit_k + miss_rate_k * t_{k+1}`, with memory latency below the
    /// last level. Zero when the level saw no accesses.
    pub fn amat(&self, level: usize, idid: Idid) -> f64 {
        let c = self.get(level, idid);
        if c.accesses() == 0 {
            return 0.0;
        }
        let below = if level + 1 < self.level_names.len() {
            self.amat(level + 1, idid)
        } else {
            self.memory_latency as f64
        };
        self.hit_latencies[level] as f64 + c.miss_rate() * below
    }

    pub fn rows(&self) -> Vec<StatsRow> {
        let mut rows = Vec::new();
        for idid in self.domains() {
            for (level, name) in self.level_names.iter().enumerate() {
                let c = self.get(level, idid);
                rows.push(StatsRow {
                    level: name.clone(),
                    idid: idid.get(),
                    accesses: c.accesses(),
                    hits: c.hits,
                    misses: c.misses,
                    miss_rate: c.miss_rate(),
                    evictions: c.evictions,
                    writebacks: c.writebacks,
                    amat_cycles: self.amat(level, idid),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    cfg: HierarchyConfig,
    levels: Vec<HybridCache>,
    stats: StatsTable,
}

impl Hierarchy {
    pub fn new(cfg: HierarchyConfig) -> Result<Self> {
        if cfg.levels.is_empty() {
            return Err(Error::EmptyInput("hierarchy needs at least one level"));
        }
        let levels = cfg
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| HybridCache::new(l.clone(), SeededRng::derive(cfg.seed, i as u64).seed()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stats: StatsTable::new(&cfg),
            levels,
            cfg,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.cfg
    }

    pub fn levels(&self) -> &[HybridCache] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &HybridCache {
        &self.levels[i]
    }

    pub fn access(&mut self, req: &AccessRequest) -> Result<HierarchyOutcome> {
        self.access_as(req, req.idid)
    }

    /// Like [`Hierarchy::access`] but books the statistics under `account`
    /// instead of the request's own domain.
    pub fn access_as(&mut self, req: &AccessRequest, account: Idid) -> Result<HierarchyOutcome> {
        let mut outcomes = Vec::with_capacity(self.levels.len());
        let mut latency = 0;
        let mut level_req = *req;
        for (k, cache) in self.levels.iter_mut().enumerate() {
            let out = cache.access(&level_req)?;
            latency += cache.config().hit_latency_cycles;
            let cell = self.stats.cells.entry((k, account)).or_default();
            if out.is_hit() {
                cell.hits += 1;
            } else {
                cell.misses += 1;
            }
            cell.evictions += out.victim.is_some() as u64;
            cell.writebacks += out.writeback.is_some() as u64;
            outcomes.push(out);
            if out.is_hit() {
                return Ok(HierarchyOutcome {
                    serviced_by: ServicedBy::Level(k),
                    total_latency_cycles: latency,
                    levels: outcomes,
                });
            }
            // below the first level the request is a line fetch
            level_req.kind = AccessKind::Read;
        }
        *self.stats.memory_fetches.entry(account).or_default() += 1;
        Ok(HierarchyOutcome {
            serviced_by: ServicedBy::Memory,
            total_latency_cycles: latency + self.cfg.memory_latency_cycles,
            levels: outcomes,
        })
    }

    pub fn flush(&mut self, addr: u64, idid: Idid) -> Vec<FlushOutcome> {
        self.levels
            .iter_mut()
            .map(|c| c.flush(addr, idid))
            .collect()
    }

    /// Non-mutating: the closest level that would service the request.
    pub fn probe(&self, addr: u64, idid: Idid) -> ServicedBy {
        self.levels
            .iter()
            .position(|c| c.probe(addr, idid))
            .map_or(ServicedBy::Memory, ServicedBy::Level)
    }

    pub fn stats(&self) -> &StatsTable {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = StatsTable::new(&self.cfg);
    }
}
