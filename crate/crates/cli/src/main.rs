//! `crossreg`: generate synthetic suites, register pairs, evaluate records.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crossreg::estimators::EstimatorKind;
use crossreg::io::{self, RunConfig};
use crossreg::pipeline::{
    format_sweep, format_table, run_benchmark, scaled_thresholds, summarize, threshold_sweep,
    BenchmarkPair, Models, StageTimings, Thresholds,
};
use crossreg::vgam::AttentionMode;
use crossreg::{selftest, Error};

use manifest::{RunManifest, MANIFEST_FILE};

const THREADS_ENV: &str = "CROSSREG_THREADS";

/// Threshold multipliers used by `eval --sweep`.
const SWEEP_FACTORS: [f64; 12] = [
    0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Ok = 0,
    Partial = 1,
    Io = 2,
    Usage = 3,
    Parse = 4,
    Empty = 5,
}

struct Failure {
    exit: Exit,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let exit = match e.root() {
            Error::Io { .. } => Exit::Io,
            Error::Config { .. } | Error::InvalidArgument(_) => Exit::Usage,
            Error::Parse { .. } => Exit::Parse,
            Error::NoResults => Exit::Empty,
            _ => Exit::Partial,
        };
        Failure {
            exit,
            message: e.to_string(),
        }
    }
}

fn fail(exit: Exit, message: impl Into<String>) -> Failure {
    Failure {
        exit,
        message: message.into(),
    }
}

type CmdResult = Result<Exit, Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "crossreg",
    version,
    about = "Cross-source point cloud registration toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum EstimatorChoice {
    Lgr,
    Ransac,
    #[value(name = "weighted_svd")]
    WeightedSvd,
    All,
}

impl EstimatorChoice {
    fn kinds(self) -> Vec<EstimatorKind> {
        match self {
            EstimatorChoice::Lgr => vec![EstimatorKind::Lgr],
            EstimatorChoice::Ransac => vec![EstimatorKind::Ransac],
            EstimatorChoice::WeightedSvd => vec![EstimatorKind::WeightedSvd],
            EstimatorChoice::All => EstimatorKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic suite of pair directories.
    Gen {
        /// Configuration file; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs; defaults to the suite size in the config.
        #[arg(long)]
        count: Option<usize>,
        /// Overrides the suite seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register one pair directory or every pair directory under a root.
    Register {
        /// Pair directory, or a root holding pair directories.
        path: PathBuf,
        /// Configuration file; built-in defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Estimator to run; defaults to the configured one.
        #[arg(long, value_enum)]
        estimator: Option<EstimatorChoice>,
        /// Skip overlap masking.
        #[arg(long)]
        no_omp: bool,
        /// vanilla_self, geo_self or vgam_full.
        #[arg(long)]
        attention: Option<String>,
        /// Output directory for records, table and manifest.
        #[arg(long, default_value = "crossreg-out")]
        out: PathBuf,
        /// Overrides the estimator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute metrics from a records file.
    Eval {
        /// Records file written by `register`.
        records: PathBuf,
        #[arg(long, default_value_t = crossreg::metrics::DEFAULT_RRE_THRESHOLD_DEG)]
        rre_thresh: f64,
        #[arg(long, default_value_t = crossreg::metrics::DEFAULT_RTE_THRESHOLD_M)]
        rte_thresh: f64,
        /// Also print recall at jointly scaled thresholds.
        #[arg(long)]
        sweep: bool,
        /// Write the report and a manifest into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the embedded invariant checks.
    Selftest {
        /// Corrupt the named check; used to test the harness itself.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() {
                Exit::Usage
            } else {
                Exit::Ok
            };
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Gen {
            config,
            out,
            count,
            seed,
        } => cmd_gen(config.as_deref(), &out, count, seed),
        Command::Register {
            path,
            config,
            estimator,
            no_omp,
            attention,
            out,
            seed,
        } => cmd_register(
            &path,
            config.as_deref(),
            estimator,
            no_omp,
            attention.as_deref(),
            &out,
            seed,
        ),
        Command::Eval {
            records,
            rre_thresh,
            rte_thresh,
            sweep,
            out,
        } => cmd_eval(&records, rre_thresh, rte_thresh, sweep, out.as_deref()),
        Command::Selftest { inject_fault } => cmd_selftest(inject_fault.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit as u8)
        }
    }
}

/// Loads the config file (or defaults) and applies the thread override.
fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            fail(
                Exit::Usage,
                format!("{THREADS_ENV}={v:?} is not a positive integer"),
            )
        })?;
        cfg.pipeline.workers = Some(n);
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| fail(Exit::Io, format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| fail(Exit::Io, format!("{}: {e}", path.display())))
}

fn in_pool<T: Send>(workers: Option<usize>, work: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(work))
            .map_err(|e| fail(Exit::Partial, format!("cannot build worker pool: {e}"))),
        None => Ok(work()),
    }
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn cmd_gen(
    config: Option<&Path>,
    out: &Path,
    count: Option<usize>,
    seed: Option<u64>,
) -> CmdResult {
    let start = Instant::now();
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.suite.seed = s;
    }
    if let Some(c) = count {
        if c == 0 {
            return Err(fail(Exit::Usage, "--count must be at least 1"));
        }
        cfg.suite.pairs = c;
    }
    cfg.suite.validate()?;
    create_dir(out)?;
    let suite = &cfg.suite;
    let results: Vec<crossreg::Result<PathBuf>> = in_pool(cfg.pipeline.workers, || {
        (0..suite.pairs)
            .into_par_iter()
            .map(|i| {
                let dir = out.join(io::pair_dir_name(i));
                io::write_pair_dir(&dir, &suite.generate(i)?)?;
                Ok(dir)
            })
            .collect()
    })?;
    let mut manifest = RunManifest::new("gen", config, &cfg);
    manifest.seeds.push(("suite".into(), suite.seed));
    for r in results {
        manifest.outputs.push(r?);
    }
    manifest.timings.push(("total".into(), millis(start)));
    write_file(&out.join(MANIFEST_FILE), &manifest.render())?;
    println!("wrote {} pairs to {}", suite.pairs, out.display());
    Ok(Exit::Ok)
}

const RECORDS_FILE: &str = "records.tsv";
const TABLE_FILE: &str = "table.txt";

fn cmd_register(
    path: &Path,
    config: Option<&Path>,
    estimator: Option<EstimatorChoice>,
    no_omp: bool,
    attention: Option<&str>,
    out: &Path,
    seed: Option<u64>,
) -> CmdResult {
    let start = Instant::now();
    let mut cfg = load_config(config)?;
    let pipeline = &mut cfg.pipeline;
    if no_omp {
        pipeline.use_omp = false;
    }
    if let Some(a) = attention {
        pipeline.attention_mode = a
            .parse::<AttentionMode>()
            .map_err(|e| fail(Exit::Usage, e.to_string()))?;
    }
    if let Some(s) = seed {
        pipeline.estimator.seed = s;
    }
    pipeline.validate()?;
    let kinds = estimator.map_or_else(|| vec![pipeline.estimator.kind], EstimatorChoice::kinds);
    let estimators: Vec<_> = kinds
        .into_iter()
        .map(|kind| crossreg::estimators::EstimatorConfig {
            kind,
            ..pipeline.estimator.clone()
        })
        .collect();

    let dirs = io::list_pair_dirs(path)?;
    if dirs.is_empty() {
        return Err(fail(
            Exit::Empty,
            format!("{}: no pair directories found", path.display()),
        ));
    }
    // load everything up front so malformed input aborts before any work
    let t = Instant::now();
    let pairs: Vec<BenchmarkPair> = dirs
        .iter()
        .map(|d| io::read_pair_dir(d).map(BenchmarkPair::from))
        .collect::<crossreg::Result<_>>()?;
    let load_ms = millis(t);
    let models = Models::load(&cfg.pipeline)?;
    let report = run_benchmark(
        pairs.len(),
        |i| Ok(pairs[i].clone()),
        &cfg.pipeline,
        &models,
        &estimators,
        cfg.thresholds,
    )?;

    create_dir(out)?;
    let records_path = out.join(RECORDS_FILE);
    let table_path = out.join(TABLE_FILE);
    io::write_records(&records_path, report.records())?;
    let table = report.table();
    write_file(&table_path, &table)?;

    let mut manifest = RunManifest::new("register", config, &cfg);
    manifest
        .seeds
        .push(("estimator".into(), cfg.pipeline.estimator.seed));
    manifest.inputs = dirs;
    manifest.outputs = vec![records_path, table_path];
    let mut sum = StageTimings::default();
    for p in &report.pairs {
        sum.encode += p.timings.encode;
        sum.mask += p.timings.mask;
        sum.attention += p.timings.attention;
        sum.dense += p.timings.dense;
        sum.estimate += p.timings.estimate;
    }
    manifest.timings = vec![
        ("load".into(), load_ms),
        ("encode".into(), sum.encode),
        ("mask".into(), sum.mask),
        ("attention".into(), sum.attention),
        ("dense".into(), sum.dense),
        ("estimate".into(), sum.estimate),
        ("total".into(), millis(start)),
    ];
    write_file(&out.join(MANIFEST_FILE), &manifest.render())?;

    print!("{table}");
    let failed: Vec<_> = report.records().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!(
            "{} [{}]: {}",
            r.pair,
            r.estimator,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if failed.is_empty() {
        Exit::Ok
    } else {
        Exit::Partial
    })
}

fn cmd_eval(
    records: &Path,
    rre_deg: f64,
    rte_m: f64,
    sweep: bool,
    out: Option<&Path>,
) -> CmdResult {
    let start = Instant::now();
    let thresholds = Thresholds { rre_deg, rte_m };
    thresholds.validate()?;
    let recs = io::read_records(records)?;
    if recs.is_empty() {
        return Err(fail(
            Exit::Empty,
            format!("{}: no records", records.display()),
        ));
    }
    let mut report = format_table(&summarize(&recs, &thresholds)?, &thresholds);
    if sweep {
        let grid = scaled_thresholds(&thresholds, &SWEEP_FACTORS);
        report.push('\n');
        report.push_str(&format_sweep(&threshold_sweep(&recs, &grid)?));
    }
    print!("{report}");
    if let Some(dir) = out {
        create_dir(dir)?;
        let path = dir.join("eval.txt");
        write_file(&path, &report)?;
        let mut cfg = RunConfig::default();
        cfg.thresholds = thresholds;
        let mut manifest = RunManifest::new("eval", None, &cfg);
        manifest.inputs.push(records.to_path_buf());
        manifest.outputs.push(path);
        manifest.timings.push(("total".into(), millis(start)));
        write_file(&dir.join(MANIFEST_FILE), &manifest.render())?;
    }
    Ok(Exit::Ok)
}

fn cmd_selftest(fault: Option<&str>) -> CmdResult {
    if let Some(f) = fault {
        if !selftest::check_names().contains(&f) {
            return Err(fail(Exit::Usage, format!("unknown check {f:?}")));
        }
    }
    let outcomes = selftest::run_checks(fault);
    for o in &outcomes {
        match &o.failure {
            None => println!("PASS {:<22} {:>8.1} ms", o.name, o.millis),
            Some(msg) => println!("FAIL {:<22} {:>8.1} ms  {msg}", o.name, o.millis),
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!(
        "{} of {} checks passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    Ok(if failed == 0 { Exit::Ok } else { Exit::Partial })
}
