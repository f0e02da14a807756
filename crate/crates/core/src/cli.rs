//! Command-line front end. Exit status: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::coupon_stats;
use crate::attacks::{
    evict_subcache_experiment_par, flush_reload, occupancy_probe, prime_probe, AttackScenario,
    DetectionReport, Mode, OccupancyReport,
};
use crate::cache::Idid;
use crate::config::parse_hierarchy_config;
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, HierarchyConfig, DEFAULT_SEED, STATS_CSV_HEADER};
use crate::sim::{compare, replay, COMPARE_CSV_HEADER};
use crate::workload::{bundled_mix, bundled_mixes, parse_key, parse_trace, random_key, Violation};

#[derive(Debug, Parser)]
#[command(
    name = "hybsim",
    version,
    about = "Hybrid soft-partitioned cache simulator and attack lab"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true, env = "HYBSIM_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for independent trials. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub parallel_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    PrimeProbe,
    FlushReload,
    Occupancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Hybcache,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Hybcache => Mode::HybCache,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a trace and print per-level, per-domain statistics.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run an attack experiment.
    Attack {
        #[arg(value_enum)]
        kind: AttackArg,
        #[arg(long, value_enum, default_value_t = ModeArg::Hybcache)]
        mode: ModeArg,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random key length.
        #[arg(long, default_value_t = 64)]
        key_bits: usize,
        /// Explicit key as a 0/1 string; overrides --key-bits.
        #[arg(long)]
        key: Option<String>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        attacker_idid: u32,
        #[arg(long, default_value_t = 1)]
        victim_idid: u32,
        #[arg(long, default_value_t = 1)]
        victim_passes: usize,
        /// Victim working-set sizes for the occupancy experiment.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 32, 64, 128, 192, 256, 384, 512])]
        working_sets: Vec<usize>,
    },
    /// Sample the accesses needed to replace every subcache entry.
    EvictStats {
        #[arg(long, default_value_t = 256)]
        entries: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Replay a trace with and without isolation.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Write a bundled workload mix as a trace.
    Mix {
        /// Mix name; omit to list the bundled mixes.
        name: Option<String>,
    },
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hybsim: {e}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))
}

/// Flag or HYBSIM_SEED, then the config file, then the built-in default.
fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<HierarchyConfig> {
    let cfg = match path {
        Some(p) => parse_hierarchy_config(&read(p)?)?,
        None => HierarchyConfig::default().with_seed(DEFAULT_SEED),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn emit(g: &GlobalOpts, text: &str) -> Result<()> {
    let io = |e: std::io::Error| Error::InvalidScenario(format!("write failed: {e}"));
    match &g.out {
        Some(p) => fs::write(p, text).map_err(io),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(io),
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

fn json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::InvalidScenario(format!("json: {e}")))
}

fn fmt_interval(r: &DetectionReport) -> (String, String) {
    match r.chance_ci99 {
        Some(i) => (format!("{:.4}", i.lo), format!("{:.4}", i.hi)),
        None => (String::new(), String::new()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if g.parallel_trials == 0 {
        return Err(Error::InvalidScenario(
            "--parallel-trials must be at least 1".into(),
        ));
    }
    match &cli.command {
        Command::Simulate { config, trace } => {
            let cfg = load_config(config.as_deref(), g.seed)?;
            let addr_bits = cfg.levels.first().map(|l| l.addr_bits).unwrap_or(46);
            let trace = parse_trace(&read(trace)?, addr_bits)?;
            let mut h = Hierarchy::new(cfg)?;
            let summary = replay(&mut h, &trace, false)?;
            eprintln!(
                "records={} flushes={} regular_access_to_shared_region={} io_move_outside_region={}",
                summary.records,
                summary.flushes,
                summary.violation_count(Violation::RegularAccessToSharedRegion),
                summary.violation_count(Violation::IoMoveOutsideRegion)
            );
            let rows = h.stats().rows();
            emit(
                g,
                &match g.format {
                    Format::Csv => csv(STATS_CSV_HEADER, rows.iter().map(|r| r.to_csv())),
                    Format::Json => json(&rows)?,
                },
            )
        }
        Command::Compare { config, trace } => {
            let cfg = load_config(config.as_deref(), g.seed)?;
            let addr_bits = cfg.levels.first().map(|l| l.addr_bits).unwrap_or(46);
            let trace = parse_trace(&read(trace)?, addr_bits)?;
            let rows = compare(&cfg, &trace)?.rows();
            emit(
                g,
                &match g.format {
                    Format::Csv => csv(COMPARE_CSV_HEADER, rows.iter().map(|r| r.to_csv())),
                    Format::Json => json(&rows)?,
                },
            )
        }
        Command::EvictStats { entries, trials } => {
            let seed = g.seed.unwrap_or(DEFAULT_SEED);
            let sample = evict_subcache_experiment_par(*entries, *trials, seed, g.parallel_trials)?;
            let closed = coupon_stats(*entries as u64)?;
            let row = EvictRow {
                entries: *entries,
                trials: *trials,
                seed,
                sample_mean: sample.mean(),
                sample_variance: sample.variance(),
                expected: closed.expected,
                variance: closed.variance,
                min: sample.samples.iter().copied().min().unwrap_or(0),
                max: sample.samples.iter().copied().max().unwrap_or(0),
            };
            emit(
                g,
                &match g.format {
                    Format::Csv => csv(EVICT_CSV_HEADER, [row.to_csv()]),
                    Format::Json => json(&[row])?,
                },
            )
        }
        Command::Mix { name } => match name {
            None => emit(
                g,
                &bundled_mixes()
                    .iter()
                    .map(|m| format!("{}\n", m.name))
                    .collect::<String>(),
            ),
            Some(n) => {
                let mix = bundled_mix(n)
                    .ok_or_else(|| Error::InvalidScenario(format!("unknown mix {n:?}")))?;
                emit(g, &mix.trace.to_text())
            }
        },
        Command::Attack {
            kind,
            mode,
            config,
            key_bits,
            key,
            trials,
            attacker_idid,
            victim_idid,
            victim_passes,
            working_sets,
        } => {
            let cfg = load_config(config.as_deref(), g.seed)?;
            let seed = cfg.seed;
            let key = match key {
                Some(k) => parse_key(k)?,
                None => random_key(*key_bits, seed),
            };
            let mut s = AttackScenario::new((*mode).into(), key, seed)
                .with_attacker(Idid::new(*attacker_idid)?)
                .with_trials(*trials)
                .with_victim_passes(*victim_passes);
            s.victim_idid = Idid::new(*victim_idid)?;
            s.hierarchy = cfg;
            match kind {
                AttackArg::PrimeProbe | AttackArg::FlushReload => {
                    let r = if *kind == AttackArg::PrimeProbe {
                        prime_probe(&s)?
                    } else {
                        flush_reload(&s)?
                    };
                    let text = match g.format {
                        Format::Json => json(&r)?,
                        Format::Csv => {
                            let (lo, hi) = fmt_interval(&r);
                            csv(
                                ATTACK_CSV_HEADER,
                                [format!(
                                    "{:?},{:?},{},{},{:.4},{},{},{},{}",
                                    r.attack,
                                    r.mode,
                                    r.bits.len(),
                                    r.trials_per_bit,
                                    r.accuracy,
                                    lo,
                                    hi,
                                    r.key_bits,
                                    r.recovered_bits
                                )],
                            )
                        }
                    };
                    emit(g, &text)
                }
                AttackArg::Occupancy => {
                    let r = occupancy_probe(&s, working_sets)?;
                    emit(g, &occupancy_text(g.format, &r)?)
                }
            }
        }
    }
}

const ATTACK_CSV_HEADER: &str =
    "attack,mode,key_len,trials_per_bit,accuracy,chance_ci99_lo,chance_ci99_hi,key,recovered";
const EVICT_CSV_HEADER: &str =
    "entries,trials,seed,sample_mean,sample_variance,expected,variance,min,max";
const OCCUPANCY_CSV_HEADER: &str = "working_set,mean_filled,mean_survivals,mean_evictions";

#[derive(Debug, Serialize)]
struct EvictRow {
    entries: usize,
    trials: usize,
    seed: u64,
    sample_mean: f64,
    sample_variance: f64,
    expected: f64,
    variance: f64,
    min: u64,
    max: u64,
}

impl EvictRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{},{}",
            self.entries,
            self.trials,
            self.seed,
            self.sample_mean,
            self.sample_variance,
            self.expected,
            self.variance,
            self.min,
            self.max
        )
    }
}

fn occupancy_text(format: Format, r: &OccupancyReport) -> Result<String> {
    match format {
        Format::Json => json(r),
        Format::Csv => {
            eprintln!(
                "rank_corr_survivals={:.4} rank_corr_evictions={:.4}",
                r.rank_corr_survivals, r.rank_corr_evictions
            );
            Ok(csv(
                OCCUPANCY_CSV_HEADER,
                r.rows.iter().map(|row| {
                    format!(
                        "{},{:.4},{:.4},{:.4}",
                        row.working_set, row.mean_filled, row.mean_survivals, row.mean_evictions
                    )
                }),
            ))
        }
    }
}
