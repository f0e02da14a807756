//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the process exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{pooled_addr, Mix64, RefHierarchy};
use hybsim::analysis::{chi_square_homogeneity, chi_square_uniform, coupon_stats, Alpha};
use hybsim::attacks::{
    flush_reload, occupancy_probe, occupancy_trials, prime_probe, AttackScenario, Mode,
};
use hybsim::cache::{AccessKind, AccessRequest};
use hybsim::geometry::subcache_entry;
use hybsim::hierarchy::ServicedBy;
use hybsim::sim::{compare, replay};
use hybsim::workload::{bundled_mixes, random_key, MIX_NI_PID};
use hybsim::{CacheConfig, Hierarchy, HierarchyConfig, HybridCache, Idid};

const SEED: u64 = 2024;

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn report(&mut self, id: &str, name: &str, ok: bool, detail: String) {
        println!(
            "{} {id:<4} {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        self.failed += !ok as usize;
    }
}

fn id(v: u32) -> Idid {
    Idid::new(v).unwrap()
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

/// Criteria 1 and 2 share one run of the CLI command.
fn coupon_collector(v: &mut Verdicts) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_hybsim"))
        .args([
            "evict-stats",
            "--entries",
            "128",
            "--trials",
            "10000",
            "--format",
            "json",
        ])
        .args(["--seed", &SEED.to_string()])
        .output()
        .expect("run hybsim");
    let elapsed = start.elapsed();
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).expect("json output");
    let mean = rows[0]["sample_mean"].as_f64().unwrap();
    let var = rows[0]["sample_variance"].as_f64().unwrap();
    let expected = coupon_stats(128).unwrap().expected;

    let err = (mean - expected).abs() / expected;
    v.report(
        "C1",
        "coupon-collector mean",
        out.status.success() && err <= 0.01 && elapsed < Duration::from_secs(10),
        format!(
            "mean {mean:.2} vs 128*H_128 = {expected:.2} (rel err {:.3}%, tol 1%), runtime {} (limit 10 s)",
            err * 100.0,
            secs(elapsed)
        ),
    );
    let target = 26_951.0;
    let err = (var - target).abs() / target;
    v.report(
        "C2",
        "coupon-collector variance",
        err <= 0.10,
        format!(
            "variance {var:.0} vs {target:.0} (rel err {:.2}%, tol 10%)",
            err * 100.0
        ),
    );
}

fn backward_compat(v: &mut Verdicts) {
    let cfg = HierarchyConfig::default().with_seed(SEED);
    let mut h = Hierarchy::new(cfg.clone()).unwrap();
    let mut r = RefHierarchy::new(&cfg.levels);
    let mut rng = Mix64(SEED);
    let mut mismatch = None;
    let mut compared = [0u64; 3];
    for step in 0..1_000_000u64 {
        let addr = pooled_addr(&mut rng, 12_000);
        let kind = if rng.below(4) == 0 {
            AccessKind::Write
        } else {
            AccessKind::Read
        };
        let got = h
            .access(&AccessRequest {
                pid: 1,
                idid: Idid::NON_ISOLATED,
                kind,
                addr,
            })
            .unwrap();
        let want = r.access(kind, addr);
        let same = got.levels.len() == want.len()
            && got.levels.iter().zip(&want).all(|(g, w)| {
                (g.verdict, g.victim, g.writeback) == (w.verdict, w.victim, w.writeback)
            });
        if !same {
            mismatch = Some(step);
            break;
        }
        for c in &mut compared[..got.levels.len()] {
            *c += 1;
        }
    }
    v.report(
        "C3",
        "backward compatibility with reference LRU",
        mismatch.is_none(),
        match mismatch {
            None => format!(
                "10^6 idid-0 accesses bit-identical (level outcomes compared: L1 {}, L2 {}, L3 {})",
                compared[0], compared[1], compared[2]
            ),
            Some(s) => format!("first divergence at access {s}"),
        },
    );
}

fn isolation_s1(v: &mut Verdicts) {
    let mut h = Hierarchy::new(HierarchyConfig::default().with_seed(SEED)).unwrap();
    let mut rng = Mix64(SEED ^ 1);
    let domains = [id(0), id(1), id(2), id(3)];
    let (mut cross_hits, mut cross_flushes) = (0u64, 0u64);
    let (mut hits, mut flushes) = (0u64, 0u64);
    for _ in 0..1_000_000 {
        let addr = pooled_addr(&mut rng, 3000);
        let d = domains[rng.below(4) as usize];
        if rng.below(10) == 0 {
            let before: Vec<Vec<bool>> = (0..3)
                .map(|k| domains.iter().map(|&o| h.level(k).probe(addr, o)).collect())
                .collect();
            let outs = h.flush(addr, d);
            for (k, out) in outs.iter().enumerate() {
                flushes += out.invalidated as u64;
                cross_flushes += (out.invalidated && !before[k][d.get() as usize]) as u64;
                for (j, &o) in domains.iter().enumerate() {
                    if o != d && h.level(k).probe(addr, o) != before[k][j] {
                        cross_flushes += 1;
                    }
                }
            }
        } else {
            let kind = if rng.below(4) == 0 {
                AccessKind::Write
            } else {
                AccessKind::Read
            };
            let out = h
                .access(&AccessRequest {
                    pid: 0,
                    idid: d,
                    kind,
                    addr,
                })
                .unwrap();
            if let ServicedBy::Level(k) = out.serviced_by {
                let line = h.level(k).line(out.levels[k].slot);
                hits += 1;
                cross_hits += (line.idid != d || line.line_addr != addr / 64) as u64;
            }
        }
    }
    v.report(
        "C4",
        "domain isolation",
        cross_hits == 0 && cross_flushes == 0,
        format!("{cross_hits} cross-domain hits in {hits}, {cross_flushes} cross-domain flush effects in {flushes} invalidations, 4 domains, 10^6 ops"),
    );
}

fn victim_uniformity(v: &mut Verdicts) {
    let cfg = CacheConfig::l1_default();
    let n = cfg.n_isolated();
    let mut c = HybridCache::new(cfg.clone(), SEED).unwrap();
    let filler = id(2);
    let mut next = 0u64;
    while (0..n).any(|e| {
        !c.line(hybsim::geometry::subcache_slot(e, &cfg).unwrap())
            .valid
    }) {
        c.access(&AccessRequest::read(filler, 0x1000_0000 + next * 64))
            .unwrap();
        next += 1;
    }
    let mut counts = vec![0u64; n];
    for i in 0..100_000u64 {
        let out = c
            .access(&AccessRequest::read(id(1), 0x8000_0000 + i * 64))
            .unwrap();
        let e = subcache_entry(out.filled_slot().expect("fresh line misses"), &cfg).unwrap();
        counts[e] += 1;
    }
    let chi = chi_square_uniform(&counts).unwrap();
    let ok = chi.pass_at(Alpha::P001).unwrap();
    v.report(
        "C5",
        "subcache victim uniformity",
        ok && n == 256,
        format!(
            "chi2 = {:.1} on {} dof over {n} entries, 10^5 fills (alpha 0.001 critical {:.1})",
            chi.statistic,
            chi.dof,
            hybsim::analysis::chi2_critical(chi.dof, Alpha::P001).unwrap()
        ),
    );
}

fn attack_defeat(
    v: &mut Verdicts,
    crit: &str,
    name: &str,
    run: fn(&AttackScenario) -> hybsim::Result<hybsim::attacks::DetectionReport>,
) {
    let key = random_key(64, SEED);
    let start = Instant::now();
    let base =
        run(&AttackScenario::new(Mode::Baseline, key.clone(), SEED).with_trials(20)).unwrap();
    let hyb = run(&AttackScenario::new(Mode::HybCache, key, SEED).with_trials(20)).unwrap();
    let elapsed = start.elapsed();
    let ci = hyb.chance_ci99.unwrap();
    v.report(
        crit,
        name,
        base.accuracy >= 0.95 && ci.contains(hyb.accuracy) && elapsed < Duration::from_secs(60),
        format!(
            "baseline accuracy {:.3} (need >= 0.95), HybCache accuracy {:.3} (chance CI99 [{:.3}, {:.3}]), 64 bits x 20 trials, {} (limit 60 s)",
            base.accuracy,
            hyb.accuracy,
            ci.lo,
            ci.hi,
            secs(elapsed)
        ),
    );
}

fn occupancy_channel(v: &mut Verdicts) {
    let s = AttackScenario::new(Mode::HybCache, vec![false, true], SEED)
        .with_attacker(id(2))
        .with_trials(20);
    let r = occupancy_probe(&s, &[0, 32, 64, 96, 128, 192, 256, 384, 512]).unwrap();

    let s = s.with_trials(2000);
    let k = 128;
    let a = occupancy_trials(&s, k, 0x6000_0000, 1).unwrap();
    let b = occupancy_trials(&s, k, 0x7a5c_0000, 2).unwrap();
    let hist =
        |ts: &[hybsim::attacks::OccupancyTrial]| hybsim::attacks::survival_histogram(ts, 256);
    let chi = chi_square_homogeneity(&hist(&a), &hist(&b)).unwrap();
    let same = chi.pass_at(Alpha::P001).unwrap();
    v.report(
        "C8",
        "residual occupancy channel",
        r.rank_corr_survivals <= -0.9 && r.rank_corr_evictions >= 0.9 && same,
        format!(
            "rank corr(k, survivals) {:.3} (need <= -0.9), corr(k, evictions) {:.3}; equal-size different-address victims: chi2 {:.1} on {} dof, indistinguishable at 0.001: {same}",
            r.rank_corr_survivals, r.rank_corr_evictions, chi.statistic, chi.dof
        ),
    );
}

/// Misses summed over all levels, plus closest-level AMAT. Memory fetches
/// are printed but not checked.
fn ni_non_degradation(v: &mut Verdicts) {
    let cfg = HierarchyConfig::default().with_seed(SEED);
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    let mut parts = Vec::new();
    for mix in bundled_mixes() {
        let c = compare(&cfg, &mix.trace).unwrap();
        let ni = mix.trace.domains.idid_of(MIX_NI_PID);
        let misses = |t: &hybsim::StatsTable| -> u64 {
            (0..cfg.levels.len()).map(|k| t.get(k, ni).misses).sum()
        };
        let (b, h) = (misses(&c.baseline), misses(&c.hybcache));
        let (ab, ah) = (c.baseline.amat(0, ni), c.hybcache.amat(0, ni));
        worst = worst.max(h as f64 / b as f64 - 1.0);
        ok &= h as f64 <= b as f64 * 1.01 && ah <= ab * 1.01;
        parts.push(format!(
            "{} misses {b}->{h}, AMAT {ab:.2}->{ah:.2}, memory fetches {}->{}",
            mix.name,
            c.baseline.memory_fetches(ni),
            c.hybcache.memory_fetches(ni)
        ));
    }
    v.report(
        "C9",
        "NI-domain non-degradation",
        ok,
        format!(
            "baseline->HybCache: {} (worst miss change {:+.2}%, tol +1%)",
            parts.join("; "),
            worst * 100.0
        ),
    );
}

fn constant_latency(v: &mut Verdicts) {
    let cfg = HierarchyConfig::default().with_seed(SEED);
    let mut seen: HashMap<ServicedBy, Vec<u64>> = HashMap::new();
    let mut record = |out: &hybsim::hierarchy::HierarchyOutcome| {
        let l = seen.entry(out.serviced_by).or_default();
        if !l.contains(&out.total_latency_cycles) {
            l.push(out.total_latency_cycles);
        }
    };
    let mut h = Hierarchy::new(cfg.clone()).unwrap();
    let mut rng = Mix64(SEED ^ 7);
    for _ in 0..300_000 {
        let d = id(rng.below(4) as u32);
        let out = h
            .access(&AccessRequest::read(d, pooled_addr(&mut rng, 8000)))
            .unwrap();
        record(&out);
    }
    let mut replays = 0;
    for mix in bundled_mixes() {
        let mut h = Hierarchy::new(cfg.clone()).unwrap();
        for rec in &mix.trace.records {
            let req = AccessRequest {
                pid: rec.pid,
                idid: mix.trace.domains.idid_of(rec.pid),
                kind: rec.op.kind(),
                addr: rec.addr,
            };
            if req.kind != AccessKind::Flush {
                record(&h.access(&req).unwrap());
                replays += 1;
            }
        }
        // the library replay path must agree with direct access
        let mut again = Hierarchy::new(cfg.clone()).unwrap();
        replay(&mut again, &mix.trace, false).unwrap();
        assert_eq!(again.stats(), h.stats());
    }
    let expected = |k: usize| {
        cfg.levels[..=k]
            .iter()
            .map(|l| l.hit_latency_cycles)
            .sum::<u64>()
    };
    let ok = (0..cfg.levels.len()).all(|k| {
        seen.get(&ServicedBy::Level(k))
            .map(|l| l == &[expected(k)])
            .unwrap_or(false)
    });
    let mut desc: Vec<String> = (0..cfg.levels.len())
        .map(|k| {
            format!(
                "{} {:?}",
                cfg.levels[k].level_name,
                seen.get(&ServicedBy::Level(k))
            )
        })
        .collect();
    desc.sort();
    v.report(
        "C10",
        "constant hit latency",
        ok,
        format!(
            "distinct hit latencies per level over {} accesses, 4 domains: {}",
            300_000 + replays,
            desc.join(", ")
        ),
    );
}

fn main() -> ExitCode {
    let mut v = Verdicts { failed: 0 };
    coupon_collector(&mut v);
    backward_compat(&mut v);
    isolation_s1(&mut v);
    victim_uniformity(&mut v);
    attack_defeat(&mut v, "C6", "Prime+Probe defeat", prime_probe);
    attack_defeat(&mut v, "C7", "Flush+Reload defeat", flush_reload);
    occupancy_channel(&mut v);
    ni_non_degradation(&mut v);
    constant_latency(&mut v);
    v.report(
        "C11",
        "hardware overheads",
        true,
        "documentation only (table in README)".into(),
    );
    if v.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", v.failed);
        ExitCode::FAILURE
    }
}
