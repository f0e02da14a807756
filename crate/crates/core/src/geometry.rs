//! Cache geometry: address slicing, configuration checks and the mapping
//! between flat subcache entry indices and `(set, way)` slots.
//!
//! An address is split, from the least significant bit upwards, into
//! `log2(line_size)` offset bits, `log2(num_sets)` index bits and the
//! remaining tag bits. The *extended tag* is everything above the offset,
//! i.e. the line address, and is what the subcache compares on.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};

pub const DEFAULT_ADDR_BITS: u32 = 46;
pub const DEFAULT_LINE_SIZE: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheConfig {
    pub level_name: String,
    pub line_size_bytes: u64,
    pub num_sets: usize,
    pub num_ways: usize,
    /// Ways per set that belong to the subcache (the top `iso_ways` way indices).
    pub iso_ways: usize,
    pub hit_latency_cycles: u64,
    pub addr_bits: u32,
}

impl CacheConfig {
    pub fn new(
        level_name: impl Into<String>,
        num_sets: usize,
        num_ways: usize,
        iso_ways: usize,
        hit_latency_cycles: u64,
    ) -> Self {
        Self {
            level_name: level_name.into(),
            line_size_bytes: DEFAULT_LINE_SIZE,
            num_sets,
            num_ways,
            iso_ways,
            hit_latency_cycles,
            addr_bits: DEFAULT_ADDR_BITS,
        }
    }

    /// 64 KB, 8-way, 128 sets.
    pub fn l1_default() -> Self {
        Self::new("L1", 128, 8, 2, 4)
    }

    /// 256 KB, 8-way, 512 sets.
    pub fn l2_default() -> Self {
        Self::new("L2", 512, 8, 2, 12)
    }

    /// 4 MB, 16-way, 4096 sets.
    pub fn l3_default() -> Self {
        Self::new("L3", 4096, 16, 2, 42)
    }

    pub fn with_iso_ways(mut self, iso_ways: usize) -> Self {
        self.iso_ways = iso_ways;
        self
    }

    pub fn with_hit_latency(mut self, cycles: u64) -> Self {
        self.hit_latency_cycles = cycles;
        self
    }

    pub fn offset_bits(&self) -> u32 {
        self.line_size_bytes.trailing_zeros()
    }

    pub fn index_bits(&self) -> u32 {
        self.num_sets.trailing_zeros()
    }

    /// Number of subcache entries, `iso_ways * num_sets`.
    pub fn n_isolated(&self) -> usize {
        self.iso_ways * self.num_sets
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.line_size_bytes * (self.num_sets * self.num_ways) as u64
    }

    /// First way index that belongs to the subcache.
    pub fn first_iso_way(&self) -> usize {
        self.num_ways - self.iso_ways
    }

    pub fn is_subcache_way(&self, way: usize) -> bool {
        way >= self.first_iso_way() && way < self.num_ways
    }

    pub fn line_addr(&self, addr: u64) -> u64 {
        addr >> self.offset_bits()
    }

    pub fn set_of_line(&self, line_addr: u64) -> usize {
        (line_addr & (self.num_sets as u64 - 1)) as usize
    }

    pub fn check_addr(&self, addr: u64) -> Result<()> {
        if self.addr_bits < 64 && addr >> self.addr_bits != 0 {
            return Err(Error::AddressOutOfRange {
                addr,
                addr_bits: self.addr_bits,
            });
        }
        Ok(())
    }

    pub fn validate(self) -> Result<Self, ConfigError> {
        validate_config(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigViolation {
    LineSizeNotPowerOfTwo,
    SetsNotPowerOfTwo,
    WaysBelowMinimum,
    IsoWaysBelowMinimum,
    IsoWaysAboveWays,
    AddrBitsAbove64,
    TagFieldEmpty,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LineSizeNotPowerOfTwo => "line size not a power of two",
            Self::SetsNotPowerOfTwo => "sets not a power of two",
            Self::WaysBelowMinimum => "ways below minimum",
            Self::IsoWaysBelowMinimum => "iso_ways below minimum",
            Self::IsoWaysAboveWays => "iso_ways above ways",
            Self::AddrBitsAbove64 => "addr_bits above 64",
            Self::TagFieldEmpty => "tag field empty",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid cache config {level}: {}", join(.violations))]
pub struct ConfigError {
    pub level: String,
    pub violations: Vec<ConfigViolation>,
}

fn join(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ConfigError {
    pub fn has(&self, v: ConfigViolation) -> bool {
        self.violations.contains(&v)
    }
}

/// Returns the config unchanged when every geometry invariant holds; otherwise
/// reports all violated invariants at once.
pub fn validate_config(cfg: CacheConfig) -> Result<CacheConfig, ConfigError> {
    let mut violations = Vec::new();
    if !cfg.line_size_bytes.is_power_of_two() {
        violations.push(ConfigViolation::LineSizeNotPowerOfTwo);
    }
    if !cfg.num_sets.is_power_of_two() {
        violations.push(ConfigViolation::SetsNotPowerOfTwo);
    }
    if cfg.num_ways == 0 {
        violations.push(ConfigViolation::WaysBelowMinimum);
    }
    if cfg.iso_ways == 0 {
        violations.push(ConfigViolation::IsoWaysBelowMinimum);
    }
    if cfg.iso_ways > cfg.num_ways {
        violations.push(ConfigViolation::IsoWaysAboveWays);
    }
    if cfg.addr_bits > 64 {
        violations.push(ConfigViolation::AddrBitsAbove64);
    }
    if cfg.line_size_bytes.is_power_of_two()
        && cfg.num_sets.is_power_of_two()
        && cfg.addr_bits <= cfg.offset_bits() + cfg.index_bits()
    {
        violations.push(ConfigViolation::TagFieldEmpty);
    }
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError {
            level: cfg.level_name,
            violations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecomposedAddress {
    pub offset: u64,
    pub set_index: usize,
    pub set_tag: u64,
    pub extended_tag: u64,
}

impl DecomposedAddress {
    pub fn recompose(&self, cfg: &CacheConfig) -> u64 {
        (((self.set_tag << cfg.index_bits()) | self.set_index as u64) << cfg.offset_bits())
            | self.offset
    }
}

pub fn decompose(addr: u64, cfg: &CacheConfig) -> Result<DecomposedAddress> {
    cfg.check_addr(addr)?;
    let offset_bits = cfg.offset_bits();
    let index_bits = cfg.index_bits();
    let extended_tag = addr >> offset_bits;
    Ok(DecomposedAddress {
        offset: addr & (cfg.line_size_bytes - 1),
        set_index: (extended_tag & (cfg.num_sets as u64 - 1)) as usize,
        set_tag: extended_tag >> index_bits,
        extended_tag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Slot {
    pub set: usize,
    pub way: usize,
}

/// Entry `i` lives in set `i / iso_ways`, way `(W - iso_ways) + i % iso_ways`.
pub fn subcache_slot(entry_index: usize, cfg: &CacheConfig) -> Result<Slot> {
    let n = cfg.n_isolated();
    if entry_index >= n {
        return Err(Error::IndexOutOfRange {
            what: "subcache entry",
            index: entry_index,
            limit: n,
        });
    }
    Ok(Slot {
        set: entry_index / cfg.iso_ways,
        way: cfg.first_iso_way() + entry_index % cfg.iso_ways,
    })
}

/// Inverse of [`subcache_slot`]; `None` for slots outside the subcache.
pub fn subcache_entry(slot: Slot, cfg: &CacheConfig) -> Option<usize> {
    if slot.set >= cfg.num_sets || !cfg.is_subcache_way(slot.way) {
        return None;
    }
    Some(slot.set * cfg.iso_ways + (slot.way - cfg.first_iso_way()))
}
