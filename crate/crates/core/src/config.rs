//! Hierarchy config files.
//!
//! ```text
//! memory_latency = 100
//! seed = 42            # optional
//!
//! [L1]
//! sets = 128
//! ways = 8
//! iso_ways = 2
//! hit_latency = 4
//! line_size = 64       # optional, default 64
//! addr_bits = 46       # optional, default 46
//! ```
//!
//! Level sections are ordered closest first, in file order.

use crate::error::{Error, Result};
use crate::geometry::{validate_config, CacheConfig, DEFAULT_ADDR_BITS, DEFAULT_LINE_SIZE};
use crate::hierarchy::{HierarchyConfig, DEFAULT_MEMORY_LATENCY, DEFAULT_SEED};

fn bad(reason: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        reason: reason.into(),
    }
}

fn int(v: &toml::Value, key: &str) -> Result<u64> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as u64)
        .ok_or_else(|| bad(format!("{key} must be a non-negative integer")))
}

fn level(name: &str, table: &toml::Table) -> Result<CacheConfig> {
    let mut cfg = CacheConfig::new(name, 0, 0, 0, 0);
    cfg.line_size_bytes = DEFAULT_LINE_SIZE;
    cfg.addr_bits = DEFAULT_ADDR_BITS;
    let mut required = ["sets", "ways", "iso_ways", "hit_latency"].to_vec();
    for (key, v) in table {
        let x = int(v, key)?;
        match key.as_str() {
            "sets" => cfg.num_sets = x as usize,
            "ways" => cfg.num_ways = x as usize,
            "iso_ways" => cfg.iso_ways = x as usize,
            "hit_latency" => cfg.hit_latency_cycles = x,
            "line_size" => cfg.line_size_bytes = x,
            "addr_bits" => cfg.addr_bits = x as u32,
            other => return Err(bad(format!("[{name}]: unknown key {other:?}"))),
        }
        required.retain(|k| k != key);
    }
    if let Some(k) = required.first() {
        return Err(bad(format!("[{name}]: missing {k}")));
    }
    Ok(validate_config(cfg)?)
}

pub fn parse_hierarchy_config(text: &str) -> Result<HierarchyConfig> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
    let mut cfg = HierarchyConfig {
        levels: Vec::new(),
        memory_latency_cycles: DEFAULT_MEMORY_LATENCY,
        seed: DEFAULT_SEED,
    };
    for (key, v) in &doc {
        match (key.as_str(), v) {
            (name, toml::Value::Table(t)) => cfg.levels.push(level(name, t)?),
            ("memory_latency", v) => cfg.memory_latency_cycles = int(v, key)?,
            ("seed", v) => cfg.seed = int(v, key)?,
            (other, _) => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    if cfg.levels.is_empty() {
        return Err(Error::EmptyInput("config declares no cache levels"));
    }
    Ok(cfg)
}

pub fn hierarchy_config_text(cfg: &HierarchyConfig) -> String {
    let mut out = format!(
        "memory_latency = {}\nseed = {}\n",
        cfg.memory_latency_cycles, cfg.seed
    );
    for l in &cfg.levels {
        out.push_str(&format!(
            "\n[{}]\nsets = {}\nways = {}\niso_ways = {}\nhit_latency = {}\nline_size = {}\naddr_bits = {}\n",
            l.level_name, l.num_sets, l.num_ways, l.iso_ways, l.hit_latency_cycles, l.line_size_bytes, l.addr_bits
        ));
    }
    out
}
