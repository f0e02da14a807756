//! Replaying traces through a hierarchy.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cache::{AccessKind, Idid};
use crate::error::Result;
use crate::hierarchy::{Hierarchy, HierarchyConfig, StatsTable};
use crate::workload::{apply_io_rules, Trace, Violation};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub records: u64,
    pub flushes: u64,
    /// Blocked records by rule.
    pub violations: BTreeMap<Violation, u64>,
}

impl RunSummary {
    pub fn violation_count(&self, v: Violation) -> u64 {
        self.violations.get(&v).copied().unwrap_or(0)
    }
}

/// Replays `trace`. With `baseline` set every pid runs non-isolated, but
/// statistics are still booked under the domain the pid would have had.
pub fn replay(h: &mut Hierarchy, trace: &Trace, baseline: bool) -> Result<RunSummary> {
    let map = if baseline {
        trace.domains.all_non_isolated()
    } else {
        trace.domains.clone()
    };
    let mut summary = RunSummary::default();
    for rec in &trace.records {
        summary.records += 1;
        let req = match apply_io_rules(rec, &map) {
            Ok(r) => r,
            Err(v) => {
                *summary.violations.entry(v).or_default() += 1;
                continue;
            }
        };
        if req.kind == AccessKind::Flush {
            h.flush(req.addr, req.idid);
            summary.flushes += 1;
            continue;
        }
        let account = if baseline && !rec.op.is_io() {
            trace.domains.idid_of(rec.pid)
        } else {
            req.idid
        };
        h.access_as(&req, account)?;
    }
    Ok(summary)
}

/// Per-domain statistics of one trace under both configurations.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub baseline: StatsTable,
    pub hybcache: StatsTable,
    pub baseline_summary: RunSummary,
    pub hybcache_summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub level: String,
    pub idid: u8,
    pub baseline_accesses: u64,
    pub baseline_misses: u64,
    pub hybcache_misses: u64,
    pub miss_delta: i64,
    pub baseline_amat: f64,
    pub hybcache_amat: f64,
    pub amat_delta: f64,
}

pub const COMPARE_CSV_HEADER: &str = "level,idid,baseline_accesses,baseline_misses,hybcache_misses,miss_delta,baseline_amat,hybcache_amat,amat_delta";

impl CompareRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{:.4}",
            self.level,
            self.idid,
            self.baseline_accesses,
            self.baseline_misses,
            self.hybcache_misses,
            self.miss_delta,
            self.baseline_amat,
            self.hybcache_amat,
            self.amat_delta
        )
    }
}

impl Comparison {
    pub fn rows(&self) -> Vec<CompareRow> {
        let mut domains = self.baseline.domains();
        domains.extend(self.hybcache.domains());
        domains.sort();
        domains.dedup();
        let mut rows = Vec::new();
        for idid in domains {
            for (k, name) in self.baseline.level_names.iter().enumerate() {
                let b = self.baseline.get(k, idid);
                let h = self.hybcache.get(k, idid);
                let (ba, ha) = (self.baseline.amat(k, idid), self.hybcache.amat(k, idid));
                rows.push(CompareRow {
                    level: name.clone(),
                    idid: idid.get(),
                    baseline_accesses: b.accesses(),
                    baseline_misses: b.misses,
                    hybcache_misses: h.misses,
                    miss_delta: h.misses as i64 - b.misses as i64,
                    baseline_amat: ba,
                    hybcache_amat: ha,
                    amat_delta: ha - ba,
                });
            }
        }
        rows
    }

    /// Overall (closest-level) AMAT change for one domain.
    pub fn amat_delta(&self, idid: Idid) -> f64 {
        self.hybcache.amat(0, idid) - self.baseline.amat(0, idid)
    }
}

pub fn compare(cfg: &HierarchyConfig, trace: &Trace) -> Result<Comparison> {
    let mut base = Hierarchy::new(cfg.clone())?;
    let baseline_summary = replay(&mut base, trace, true)?;
    let mut hyb = Hierarchy::new(cfg.clone())?;
    let hybcache_summary = replay(&mut hyb, trace, false)?;
    Ok(Comparison {
        baseline: base.stats().clone(),
        hybcache: hyb.stats().clone(),
        baseline_summary,
        hybcache_summary,
    })
}
