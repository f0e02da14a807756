//! Attack experiments against a simulated hierarchy.
//!
//! Attacker timing comes from the simulator's latency model, so there is no
//! measurement noise. Every experiment is a pure function of its scenario and
//! seed.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{chance_interval, spearman, Interval};
use crate::cache::{AccessRequest, HybridCache, Idid};
use crate::error::{Error, Result};
use crate::geometry::{subcache_entry, CacheConfig};
use crate::hierarchy::{Hierarchy, HierarchyConfig, ServicedBy};
use crate::replacement::SeededRng;
use crate::workload::{key_to_string, VictimSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Every request runs in IDID 0: a conventional LRU cache.
    Baseline,
    HybCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackKind {
    PrimeProbe,
    FlushReload,
}

/// Where attacker lines live; chosen far from the victim's code lines.
const ATTACKER_BASE: u64 = 0x2000_0000;
const VICTIM_DATA_BASE: u64 = 0x6000_0000;

#[derive(Debug, Clone)]
pub struct AttackScenario {
    pub mode: Mode,
    pub attacker_idid: Idid,
    pub victim_idid: Idid,
    pub victim: VictimSpec,
    /// Eviction/wait/analysis rounds per key bit.
    pub trials: usize,
    pub seed: u64,
    /// Victim executions of the current bit during each waiting window.
    pub victim_passes: usize,
    pub hierarchy: HierarchyConfig,
}

impl AttackScenario {
    /// Non-isolated attacker; in HybCache mode the victim runs in IDID 1.
    pub fn new(mode: Mode, key_bits: Vec<bool>, seed: u64) -> Self {
        Self {
            mode,
            attacker_idid: Idid::NON_ISOLATED,
            victim_idid: match mode {
                Mode::Baseline => Idid::NON_ISOLATED,
                Mode::HybCache => Idid::new(1).expect("valid idid"),
            },
            victim: VictimSpec::with_key(key_bits),
            trials: 20,
            seed,
            victim_passes: 1,
            hierarchy: HierarchyConfig::default().with_seed(seed),
        }
    }

    pub fn with_attacker(mut self, idid: Idid) -> Self {
        self.attacker_idid = idid;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_victim_passes(mut self, passes: usize) -> Self {
        self.victim_passes = passes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidScenario("trials must be at least 1".into()));
        }
        if self.mode == Mode::HybCache {
            if !self.victim_idid.is_isolated() {
                return Err(Error::InvalidScenario(
                    "victim must be isolated in HybCache mode".into(),
                ));
            }
            if self.attacker_idid == self.victim_idid {
                return Err(Error::InvalidScenario(
                    "attacker shares the victim's domain".into(),
                ));
            }
        }
        let l1 = self
            .hierarchy
            .levels
            .first()
            .ok_or(Error::EmptyInput("hierarchy needs at least one level"))?;
        self.victim.validate(l1, false)
    }

    fn attacker(&self) -> Idid {
        match self.mode {
            Mode::Baseline => Idid::NON_ISOLATED,
            Mode::HybCache => self.attacker_idid,
        }
    }

    fn victim_domain(&self) -> Idid {
        match self.mode {
            Mode::Baseline => Idid::NON_ISOLATED,
            Mode::HybCache => self.victim_idid,
        }
    }

    fn run_victim(&self, h: &mut Hierarchy, bit: bool) -> Result<()> {
        let idid = self.victim_domain();
        for _ in 0..self.victim_passes {
            for rec in self.victim.bit_accesses(bit, 2) {
                h.access(&AccessRequest::read(idid, rec.addr))?;
            }
        }
        Ok(())
    }
}

/// One eviction/wait/analysis round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Observation {
    /// Attacker saw activity on the bit-0 line (set eviction or reload hit).
    pub signal_line5: bool,
    pub signal_line9: bool,
    /// Attacker accesses that missed L1 during probing / reload, per target.
    pub l1_misses_line5: u32,
    pub l1_misses_line9: u32,
    /// Measured latencies, bit-0 target first.
    pub latencies: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BitReport {
    pub index: usize,
    pub actual: bool,
    pub recovered: bool,
    pub votes_zero: u32,
    pub votes_one: u32,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub attack: AttackKind,
    pub mode: Mode,
    pub key_bits: String,
    pub recovered_bits: String,
    /// Matching bits over key length; 0 for an empty key.
    pub accuracy: f64,
    /// Where a coin-flipping attacker lands with 99% confidence.
    pub chance_ci99: Option<Interval>,
    pub trials_per_bit: usize,
    pub bits: Vec<BitReport>,
}

impl DetectionReport {
    fn build(attack: AttackKind, s: &AttackScenario, bits: Vec<BitReport>) -> Result<Self> {
        let n = bits.len();
        let correct = bits.iter().filter(|b| b.actual == b.recovered).count();
        let recovered: Vec<bool> = bits.iter().map(|b| b.recovered).collect();
        Ok(Self {
            attack,
            mode: s.mode,
            key_bits: key_to_string(&s.victim.key_bits),
            recovered_bits: key_to_string(&recovered),
            accuracy: if n == 0 {
                0.0
            } else {
                correct as f64 / n as f64
            },
            chance_ci99: if n == 0 {
                None
            } else {
                Some(chance_interval(n as u64, 0.99)?)
            },
            trials_per_bit: s.trials,
            bits,
        })
    }

    pub fn correct_bits(&self) -> usize {
        self.bits.iter().filter(|b| b.actual == b.recovered).count()
    }
}

/// Majority vote over unambiguous rounds; ties and silence read as 0.
fn decide(index: usize, actual: bool, observations: Vec<Observation>) -> BitReport {
    let votes_zero = observations
        .iter()
        .filter(|o| o.signal_line5 && !o.signal_line9)
        .count() as u32;
    let votes_one = observations
        .iter()
        .filter(|o| o.signal_line9 && !o.signal_line5)
        .count() as u32;
    BitReport {
        index,
        actual,
        recovered: votes_one > votes_zero,
        votes_zero,
        votes_one,
        observations,
    }
}

/// `ways` attacker addresses that all index L1 set `set`.
fn congruent_lines(l1: &CacheConfig, set: usize, ways: usize) -> Vec<u64> {
    let stride = l1.line_size_bytes * l1.num_sets as u64;
    (0..ways as u64)
        .map(|j| ATTACKER_BASE + j * stride + set as u64 * l1.line_size_bytes)
        .collect()
}

/// Prime+Probe on the L1 sets of the two key-dependent code lines.
pub fn prime_probe(s: &AttackScenario) -> Result<DetectionReport> {
    s.validate()?;
    let l1 = s.hierarchy.levels[0].clone();
    if s.mode == Mode::Baseline {
        s.victim.validate(&l1, true)?;
    }
    let mut h = Hierarchy::new(s.hierarchy.clone())?;
    let attacker = s.attacker();
    let set5 = l1.set_of_line(l1.line_addr(s.victim.addr_line5));
    let set9 = l1.set_of_line(l1.line_addr(s.victim.addr_line9));
    let ev5 = congruent_lines(&l1, set5, l1.num_ways);
    let ev9 = congruent_lines(&l1, set9, l1.num_ways);

    let mut bits = Vec::with_capacity(s.victim.key_bits.len());
    for (i, &bit) in s.victim.key_bits.iter().enumerate() {
        let mut obs = Vec::with_capacity(s.trials);
        for _ in 0..s.trials {
            for &a in ev5.iter().chain(&ev9) {
                h.access(&AccessRequest::read(attacker, a))?;
            }
            s.run_victim(&mut h, bit)?;
            let mut latencies = Vec::with_capacity(ev5.len() + ev9.len());
            let mut probe = |lines: &[u64]| -> Result<u32> {
                let mut misses = 0;
                for &a in lines {
                    let out = h.access(&AccessRequest::read(attacker, a))?;
                    misses += (out.serviced_by != ServicedBy::Level(0)) as u32;
                    latencies.push(out.total_latency_cycles);
                }
                Ok(misses)
            };
            let m5 = probe(&ev5)?;
            let m9 = probe(&ev9)?;
            obs.push(Observation {
                signal_line5: m5 > 0,
                signal_line9: m9 > 0,
                l1_misses_line5: m5,
                l1_misses_line9: m9,
                latencies,
            });
        }
        bits.push(decide(i, bit, obs));
    }
    DetectionReport::build(AttackKind::PrimeProbe, s, bits)
}

/// Flush+Reload on the two key-dependent lines of a shared read-only library.
pub fn flush_reload(s: &AttackScenario) -> Result<DetectionReport> {
    s.validate()?;
    let mut h = Hierarchy::new(s.hierarchy.clone())?;
    let attacker = s.attacker();
    let targets = [s.victim.addr_line5, s.victim.addr_line9];
    let full_miss: u64 = s
        .hierarchy
        .levels
        .iter()
        .map(|l| l.hit_latency_cycles)
        .sum::<u64>()
        + s.hierarchy.memory_latency_cycles;

    let mut bits = Vec::with_capacity(s.victim.key_bits.len());
    for (i, &bit) in s.victim.key_bits.iter().enumerate() {
        let mut obs = Vec::with_capacity(s.trials);
        for _ in 0..s.trials {
            for &a in &targets {
                h.flush(a, attacker);
            }
            s.run_victim(&mut h, bit)?;
            let mut lat = [0u64; 2];
            let mut l1_miss = [0u32; 2];
            for (k, &a) in targets.iter().enumerate() {
                let out = h.access(&AccessRequest::read(attacker, a))?;
                lat[k] = out.total_latency_cycles;
                l1_miss[k] = (out.serviced_by != ServicedBy::Level(0)) as u32;
            }
            obs.push(Observation {
                signal_line5: lat[0] < full_miss,
                signal_line9: lat[1] < full_miss,
                l1_misses_line5: l1_miss[0],
                l1_misses_line9: l1_miss[1],
                latencies: lat.to_vec(),
            });
        }
        bits.push(decide(i, bit, obs));
    }
    DetectionReport::build(AttackKind::FlushReload, s, bits)
}

fn run_trials<T: Send>(
    trials: usize,
    threads: usize,
    f: impl Fn(usize) -> T + Sync,
) -> Result<Vec<T>> {
    if threads <= 1 {
        return Ok((0..trials).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidScenario(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..trials).into_par_iter().map(&f).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvictionSample {
    pub n_isolated: usize,
    /// Accesses to distinct lines until every subcache entry was replaced once.
    pub samples: Vec<u64>,
}

impl EvictionSample {
    pub fn mean(&self) -> f64 {
        crate::analysis::mean(&self.as_f64())
    }

    pub fn variance(&self) -> f64 {
        crate::analysis::sample_variance(&self.as_f64())
    }

    fn as_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&x| x as f64).collect()
    }
}

/// One trial: an isolated attacker streams never-seen lines into `cfg`'s
/// subcache and counts accesses until each entry has been refilled.
pub fn evict_subcache_trial(cfg: &CacheConfig, seed: u64) -> Result<u64> {
    let mut cache = HybridCache::new(cfg.clone(), seed)?;
    let attacker = Idid::new(1)?;
    let n = cfg.n_isolated();
    let mut seen = vec![false; n];
    let mut remaining = n;
    let mut accesses = 0u64;
    while remaining > 0 {
        let addr = ATTACKER_BASE + accesses * cfg.line_size_bytes;
        let out = cache.access(&AccessRequest::read(attacker, addr))?;
        accesses += 1;
        let entry = out
            .filled_slot()
            .and_then(|s| subcache_entry(s, cfg))
            .ok_or_else(|| Error::InvalidScenario("streamed line hit".into()))?;
        if !seen[entry] {
            seen[entry] = true;
            remaining -= 1;
        }
    }
    Ok(accesses)
}

/// Subcache of `n_isolated` entries modelled as a single fully-associative set.
pub fn subcache_config(n_isolated: usize) -> CacheConfig {
    CacheConfig::new("subcache", 1, n_isolated, n_isolated, 1)
}

pub fn evict_subcache_experiment(
    n_isolated: usize,
    trials: usize,
    seed: u64,
) -> Result<EvictionSample> {
    evict_subcache_experiment_par(n_isolated, trials, seed, 1)
}

/// Trials are seeded by index, so the result does not depend on `threads`.
pub fn evict_subcache_experiment_par(
    n_isolated: usize,
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<EvictionSample> {
    if n_isolated == 0 || trials == 0 {
        return Err(Error::EmptyInput("entries and trials must be at least 1"));
    }
    let cfg = subcache_config(n_isolated);
    let samples = run_trials(trials, threads, |t| {
        evict_subcache_trial(&cfg, SeededRng::derive(seed, t as u64).seed())
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvictionSample {
        n_isolated,
        samples,
    })
}

/// The attacker's eviction set for occupancy measurements: one line per
/// subcache entry when isolated, the whole cache capacity otherwise.
fn occupancy_lines(cfg: &CacheConfig, attacker: Idid) -> Vec<u64> {
    let n = if attacker.is_isolated() {
        cfg.n_isolated()
    } else {
        cfg.num_sets * cfg.num_ways
    };
    (0..n as u64)
        .map(|i| ATTACKER_BASE + i * cfg.line_size_bytes)
        .collect()
}

const FILL_ROUNDS: usize = 10_000;

/// Re-touches non-resident lines of the eviction set until all are resident
/// (at most `max_rounds` rounds). Random replacement can displace the
/// attacker's own lines, so one pass rarely suffices.
fn fill(cache: &mut HybridCache, attacker: Idid, lines: &[u64], max_rounds: usize) -> Result<()> {
    for _ in 0..max_rounds {
        let missing: Vec<u64> = lines
            .iter()
            .copied()
            .filter(|&a| !cache.probe(a, attacker))
            .collect();
        if missing.is_empty() {
            break;
        }
        for a in missing {
            cache.access(&AccessRequest::read(attacker, a))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OccupancyTrial {
    pub working_set: usize,
    /// Attacker lines resident after the fill phase.
    pub filled: u64,
    /// Attacker lines still resident after the victim ran.
    pub survivals: u64,
}

impl OccupancyTrial {
    pub fn evictions(&self) -> u64 {
        self.filled - self.survivals
    }
}

/// Fill, let the victim touch `working_set` distinct lines at `victim_base`,
/// count surviving attacker lines. One fresh L1-sized level per trial.
pub fn occupancy_trials(
    s: &AttackScenario,
    working_set: usize,
    victim_base: u64,
    stream: u64,
) -> Result<Vec<OccupancyTrial>> {
    s.validate()?;
    let cfg = s.hierarchy.levels[0].clone();
    let attacker = s.attacker();
    let victim = s.victim_domain();
    let lines = occupancy_lines(&cfg, attacker);
    let base_seed = SeededRng::derive(s.seed, stream).seed();
    (0..s.trials)
        .map(|t| {
            let seed = SeededRng::derive(base_seed ^ working_set as u64, t as u64).seed();
            let mut cache = HybridCache::new(cfg.clone(), seed)?;
            fill(&mut cache, attacker, &lines, FILL_ROUNDS)?;
            let count =
                |c: &HybridCache| lines.iter().filter(|&&a| c.probe(a, attacker)).count() as u64;
            let filled = count(&cache);
            for j in 0..working_set as u64 {
                cache.access(&AccessRequest::read(
                    victim,
                    victim_base + j * cfg.line_size_bytes,
                ))?;
            }
            Ok(OccupancyTrial {
                working_set,
                filled,
                survivals: count(&cache),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyRow {
    pub working_set: usize,
    pub mean_filled: f64,
    pub mean_survivals: f64,
    pub mean_evictions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupancyReport {
    pub mode: Mode,
    pub rows: Vec<OccupancyRow>,
    /// Spearman correlation of working-set size against attacker survivals.
    pub rank_corr_survivals: f64,
    /// Spearman correlation of working-set size against attacker evictions.
    pub rank_corr_evictions: f64,
    pub trials: Vec<OccupancyTrial>,
}

pub fn occupancy_probe(s: &AttackScenario, working_set_sizes: &[usize]) -> Result<OccupancyReport> {
    if working_set_sizes.is_empty() {
        return Err(Error::EmptyInput("working set sizes"));
    }
    let mut trials = Vec::new();
    let mut rows = Vec::new();
    for &k in working_set_sizes {
        let ts = occupancy_trials(s, k, VICTIM_DATA_BASE, 0)?;
        let m = |f: &dyn Fn(&OccupancyTrial) -> u64| {
            ts.iter().map(|t| f(t) as f64).sum::<f64>() / ts.len() as f64
        };
        rows.push(OccupancyRow {
            working_set: k,
            mean_filled: m(&|t| t.filled),
            mean_survivals: m(&|t| t.survivals),
            mean_evictions: m(&|t| t.evictions()),
        });
        trials.extend(ts);
    }
    let ks: Vec<f64> = trials.iter().map(|t| t.working_set as f64).collect();
    let surv: Vec<f64> = trials.iter().map(|t| t.survivals as f64).collect();
    let evic: Vec<f64> = trials.iter().map(|t| t.evictions() as f64).collect();
    Ok(OccupancyReport {
        mode: s.mode,
        rows,
        rank_corr_survivals: spearman(&ks, &surv)?,
        rank_corr_evictions: spearman(&ks, &evic)?,
        trials,
    })
}

/// Histogram of survival counts, one bin per possible count.
pub fn survival_histogram(trials: &[OccupancyTrial], max: usize) -> Vec<u64> {
    let mut h = vec![0u64; max + 1];
    for t in trials {
        h[(t.survivals as usize).min(max)] += 1;
    }
    h
}

/// For each victim miss that displaced an attacker line, the subcache entry
/// index it displaced, split by whether the victim touched its bit-0 or
/// bit-1 line. Rounds start from a subcache fully owned by the attacker and
/// run `burst` victim accesses, alternating with the key bits.
pub fn eviction_index_histograms(
    s: &AttackScenario,
    rounds: usize,
    burst: usize,
) -> Result<[Vec<u64>; 2]> {
    s.validate()?;
    if s.mode != Mode::HybCache || !s.attacker_idid.is_isolated() {
        return Err(Error::InvalidScenario(
            "eviction index test needs an isolated attacker in HybCache mode".into(),
        ));
    }
    let cfg = s.hierarchy.levels[0].clone();
    let lines = occupancy_lines(&cfg, s.attacker_idid);
    let n = cfg.n_isolated();
    let mut hist = [vec![0u64; n], vec![0u64; n]];
    let key = &s.victim.key_bits;
    if key.is_empty() {
        return Err(Error::EmptyInput("victim key"));
    }
    let mut seq = 0u64;
    for r in 0..rounds {
        let mut cache = HybridCache::new(cfg.clone(), SeededRng::derive(s.seed, r as u64).seed())?;
        fill(&mut cache, s.attacker_idid, &lines, FILL_ROUNDS)?;
        let resident = lines
            .iter()
            .filter(|&&a| cache.probe(a, s.attacker_idid))
            .count();
        if resident != n {
            return Err(Error::InvalidScenario(
                "attacker could not fill the subcache".into(),
            ));
        }
        let mut owned: HashSet<usize> = (0..n).collect();
        for _ in 0..burst {
            let bit = key[seq as usize % key.len()];
            // a fresh line each time so every victim access misses
            let base = if bit {
                s.victim.addr_line9
            } else {
                s.victim.addr_line5
            };
            let addr = base + (seq + 1) * cfg.line_size_bytes * cfg.num_sets as u64;
            seq += 1;
            let out = cache.access(&AccessRequest::read(s.victim_idid, addr))?;
            if let (Some(v), Some(slot)) = (out.victim, out.filled_slot()) {
                let entry = subcache_entry(slot, &cfg).expect("isolated fill in subcache");
                if v.idid == s.attacker_idid && owned.remove(&entry) {
                    hist[bit as usize][entry] += 1;
                }
            }
        }
    }
    Ok(hist)
}
