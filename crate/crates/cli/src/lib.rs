//! Subcommands behind the `sdnas` binary. Each writes its artifacts
//! atomically under the configured output directory.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use sdnas_core::benchmark::{build_oracle, compare_methods, median, MethodReport, MethodSpec, OracleTable};
use sdnas_core::bilevel::{epoch_log_csv, run_search, train_discrete, SearchConfig};
use sdnas_core::io::{read_to_string, write_atomic};
use sdnas_core::searchspace::Genotype;
use sdnas_core::sharpness::SharpnessTrace;

pub use config::{Axis, Manifest, RunConfig};

pub const GENOTYPE_FILE: &str = "genotype.txt";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const TRACE_FILE: &str = "sharpness.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ORACLE_FILE: &str = "oracle.txt";
pub const SWEEP_HEADER: &str = "axis_value,seed,accuracy,rank,regret,lambda_max_final";
pub const ANALYZE_HEADER: &str = "method,seed,epoch,lambda_max,grad_norm";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config rejected: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sdnas_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sdnas", version, about = "Differentiable architecture search with self-distillation")]
pub struct Cli {
    /// TOML config, or a run manifest (JSON) to reproduce.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the search seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Oracle table file.
    #[arg(long, global = true)]
    pub oracle: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one search and write genotype, logs, trace and manifest.
    Search,
    /// Train a genotype from scratch and report its valid accuracy.
    EvalGenotype {
        #[arg(long)]
        genotype: PathBuf,
    },
    /// Train every genotype of the space and write the oracle table.
    BuildOracle,
    /// Score the λ=0 baseline against the distillation method over seeds.
    Compare,
    /// Vary one hyperparameter over values and seeds.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<Axis>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Merge sharpness traces of completed runs into long-format CSV.
    Analyze { runs: Vec<PathBuf> },
}

/// `SDNAS_DETERMINISTIC` defaults to on; only `0` turns it off. When on,
/// timing columns in log files are written as 0.
pub fn deterministic_from_env() -> bool {
    std::env::var("SDNAS_DETERMINISTIC").map_or(true, |v| v.trim() != "0")
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.search.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if cli.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let deterministic = deterministic_from_env();
    let oracle_path = cli.oracle.clone().unwrap_or_else(|| cfg.out.join(ORACLE_FILE));
    with_jobs(cli.jobs, || match cli.command {
        Command::Search => {
            let m = cmd_search(&cfg, deterministic)?;
            println!("{}", cfg.run_dir().display());
            print!("{}", m.genotype);
            Ok(())
        }
        Command::EvalGenotype { genotype } => {
            let g = Genotype::parse(&read_to_string(&genotype)?)?;
            let oracle = cli.oracle.as_deref().map(|p| load_oracle(p, &cfg)).transpose()?;
            let report = cmd_eval_genotype(&cfg, &g, oracle.as_ref())?;
            println!("{report}");
            Ok(())
        }
        Command::BuildOracle => {
            let table = cmd_build_oracle(&cfg, &oracle_path)?;
            let best = table.best();
            println!("{} rows -> {}", table.len(), oracle_path.display());
            println!("best mean accuracy {}: {}", best.mean(), compact(&best.genotype));
            Ok(())
        }
        Command::Compare => {
            let table = load_oracle(&oracle_path, &cfg)?;
            let reports = cmd_compare(&cfg, &table)?;
            print!("{}", summary_csv(&reports)?);
            Ok(())
        }
        Command::Sweep { axis, values, seeds } => {
            let mut sweep = cfg.sweep.clone();
            sweep.axis = axis.unwrap_or(sweep.axis);
            sweep.values = values.unwrap_or(sweep.values);
            sweep.seeds = seeds.unwrap_or(sweep.seeds);
            let oracle = cli.oracle.as_deref().map(|p| load_oracle(p, &cfg)).transpose()?;
            let path = cmd_sweep(&cfg, &sweep, oracle.as_ref())?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Analyze { runs } => {
            let (long, medians) = cmd_analyze(&runs, &cfg.out)?;
            println!("{}\n{}", long.display(), medians.display());
            Ok(())
        }
    })
}

fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match jobs.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// One-line genotype form for CSV cells: `src>dst:op` per retained edge.
pub fn compact(g: &Genotype) -> String {
    let topology = g.topology();
    g.choices()
        .iter()
        .map(|&(e, op)| {
            let edge = topology.edges()[e];
            format!("{}>{}:{}", edge.src, edge.dst, op)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Label for a search config in comparison and analysis output.
pub fn method_label(cfg: &SearchConfig) -> String {
    if cfg.lambda == 0.0 {
        "darts".into()
    } else if cfg.lambda == 1.0 {
        format!("sd-darts-k{}", cfg.window)
    } else {
        format!("sd-darts-k{}-l{}", cfg.window, cfg.lambda)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_text(header: &str, rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.split(','))?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn load_oracle(path: &Path, cfg: &RunConfig) -> Result<OracleTable, CliError> {
    Ok(OracleTable::from_text(&read_to_string(path)?, Some(&cfg.fingerprint()))?)
}

pub fn cmd_search(cfg: &RunConfig, deterministic: bool) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let (ds, sp) = cfg.task()?;
    let start = std::time::Instant::now();
    let out = run_search(&cfg.search, &cfg.sharpness, &ds, &sp)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        run_id: cfg.run_id.clone(),
        seed: cfg.search.seed,
        deterministic,
        wall_ms: start.elapsed().as_millis() as u64,
        genotype: out.genotype.to_text(),
        config: cfg.clone(),
    };
    let dir = cfg.run_dir();
    write_atomic(&dir.join(GENOTYPE_FILE), manifest.genotype.as_bytes())?;
    write_atomic(&dir.join(EPOCHS_FILE), epoch_log_csv(&out.logs, deterministic).as_bytes())?;
    write_atomic(&dir.join(TRACE_FILE), out.trace.to_csv().as_bytes())?;
    let json = serde_json::to_string_pretty(&manifest).map_err(sdnas_core::Error::from)?;
    write_atomic(&dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())?;
    Ok(manifest)
}

pub fn cmd_eval_genotype(cfg: &RunConfig, g: &Genotype, oracle: Option<&OracleTable>) -> Result<String, CliError> {
    cfg.validate()?;
    let (ds, sp) = cfg.task()?;
    let accuracy = train_discrete(g, &ds, &sp, &cfg.train, cfg.search.seed)?;
    let score = oracle.map(|t| t.score(g)).transpose()?;
    let report = serde_json::json!({
        "genotype": compact(g),
        "seed": cfg.search.seed,
        "accuracy": accuracy,
        "oracle": score,
    });
    Ok(report.to_string())
}

pub fn cmd_build_oracle(cfg: &RunConfig, path: &Path) -> Result<OracleTable, CliError> {
    cfg.validate()?;
    let table = build_oracle(&cfg.fingerprint())?;
    write_atomic(path, table.to_text()?.as_bytes())?;
    Ok(table)
}

/// The λ=0 baseline and the configured distillation method, in that order.
pub fn compare_specs(cfg: &RunConfig) -> Vec<MethodSpec> {
    let darts = SearchConfig {
        lambda: 0.0,
        ..cfg.search.clone()
    };
    let sd = SearchConfig {
        lambda: cfg.compare.lambda,
        window: cfg.compare.window,
        ..cfg.search.clone()
    };
    vec![
        MethodSpec {
            name: method_label(&darts),
            config: darts,
        },
        MethodSpec {
            name: method_label(&sd),
            config: sd,
        },
    ]
}

pub fn cmd_compare(cfg: &RunConfig, table: &OracleTable) -> Result<Vec<MethodReport>, CliError> {
    cfg.validate()?;
    let reports = compare_methods(table, &compare_specs(cfg), &cfg.compare.seeds, &cfg.sharpness)?;
    let rows = reports
        .iter()
        .flat_map(|r| {
            r.entries.iter().map(|e| {
                vec![
                    r.name.clone(),
                    e.seed.to_string(),
                    compact(&e.genotype),
                    e.score.accuracy.to_string(),
                    e.score.rank.to_string(),
                    e.score.regret.to_string(),
                    e.score.percentile.to_string(),
                    opt(e.lambda_max_final),
                ]
            })
        })
        .collect();
    let text = csv_text("method,seed,genotype,accuracy,rank,regret,percentile,lambda_max_final", rows)?;
    write_atomic(&cfg.out.join("compare.csv"), text.as_bytes())?;
    write_atomic(&cfg.out.join("compare_summary.csv"), summary_csv(&reports)?.as_bytes())?;
    Ok(reports)
}

pub fn summary_csv(reports: &[MethodReport]) -> Result<String, CliError> {
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.entries.len().to_string(),
                opt(r.median_regret()),
                opt(r.mean_regret()),
                opt(r.median_rank()),
                opt(r.median_percentile()),
                opt(r.median_lambda_max()),
            ]
        })
        .collect();
    csv_text(
        "method,runs,median_regret,mean_regret,median_rank,median_percentile,median_lambda_max_final",
        rows,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub rank: Option<usize>,
    pub regret: Option<f64>,
    pub lambda_max_final: Option<f64>,
}

/// Runs every valid `(value, seed)` point; invalid or failing points are
/// reported on stderr and left out of the CSV.
pub fn sweep_rows(
    cfg: &RunConfig,
    sweep: &config::SweepConfig,
    oracle: Option<&OracleTable>,
) -> Result<Vec<SweepRow>, CliError> {
    cfg.validate()?;
    if sweep.values.is_empty() {
        return Err(CliError::Config("sweep.values: must not be empty".into()));
    }
    if sweep.seeds.is_empty() {
        return Err(CliError::Config("sweep.seeds: must not be empty".into()));
    }
    let axis = sweep.axis.name();
    let mut points = Vec::new();
    for &v in &sweep.values {
        match sweep.axis.apply(&cfg.search, v).and_then(|c| c.validate().map(|_| c).map_err(|e| e.to_string())) {
            Ok(c) => points.extend(sweep.seeds.iter().map(|&s| (v, SearchConfig { seed: s, ..c.clone() }))),
            Err(msg) => eprintln!("sweep: skipping {axis}={v}: {msg}"),
        }
    }
    let (ds, sp) = cfg.task()?;
    let results: Vec<_> = points
        .par_iter()
        .map(|(v, search)| -> Result<SweepRow, CliError> {
            let out = run_search(search, &cfg.sharpness, &ds, &sp)?;
            let accuracy = train_discrete(&out.genotype, &ds, &sp, &cfg.train, search.seed)?;
            let score = oracle.map(|t| t.score(&out.genotype)).transpose()?;
            Ok(SweepRow {
                axis_value: *v,
                seed: search.seed,
                accuracy,
                rank: score.map(|s| s.rank),
                regret: score.map(|s| s.regret),
                lambda_max_final: out.trace.final_lambda_max(),
            })
        })
        .collect();
    let mut rows = Vec::new();
    for ((v, search), r) in points.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => eprintln!("sweep: skipping {axis}={v} seed={}: {e}", search.seed),
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.axis_value.to_string(),
                r.seed.to_string(),
                r.accuracy.to_string(),
                r.rank.map(|k| k.to_string()).unwrap_or_default(),
                opt(r.regret),
                opt(r.lambda_max_final),
            ]
        })
        .collect();
    csv_text(SWEEP_HEADER, rows)
}

/// Writes `sweep_<axis>.csv` under the output directory.
pub fn cmd_sweep(
    cfg: &RunConfig,
    sweep: &config::SweepConfig,
    oracle: Option<&OracleTable>,
) -> Result<PathBuf, CliError> {
    let rows = sweep_rows(cfg, sweep, oracle)?;
    let path = cfg.out.join(format!("sweep_{}.csv", sweep.axis.name()));
    write_atomic(&path, sweep_csv(&rows)?.as_bytes())?;
    Ok(path)
}

/// Reads the manifest and trace of each run directory; unreadable runs are
/// named on stderr and skipped. Writes `analyze_long.csv` and
/// `analyze_medians.csv` into `out`.
pub fn cmd_analyze(runs: &[PathBuf], out: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    if runs.is_empty() {
        return Err(CliError::Config("analyze needs at least one run directory".into()));
    }
    let mut loaded = Vec::new();
    for dir in runs {
        let load = || -> Result<(Manifest, SharpnessTrace), CliError> {
            let manifest: Manifest = serde_json::from_str(&read_to_string(&dir.join(MANIFEST_FILE))?)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
            let trace = SharpnessTrace::from_csv(&read_to_string(&dir.join(TRACE_FILE))?)?;
            Ok((manifest, trace))
        };
        match load() {
            Ok(run) => loaded.push(run),
            Err(e) => eprintln!("analyze: skipping {}: {e}", dir.display()),
        }
    }
    if loaded.is_empty() {
        return Err(CliError::Runtime("no readable runs".into()));
    }
    let mut long = Vec::new();
    let mut by_epoch: BTreeMap<(String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (m, trace) in &loaded {
        let method = method_label(&m.config.search);
        for r in &trace.rows {
            long.push(vec![
                method.clone(),
                m.seed.to_string(),
                r.epoch.to_string(),
                r.lambda_max.to_string(),
                r.grad_norm.to_string(),
            ]);
            let cell = by_epoch.entry((method.clone(), r.epoch)).or_default();
            cell.0.push(r.lambda_max);
            cell.1.push(r.grad_norm);
        }
    }
    let medians = by_epoch
        .into_iter()
        .map(|((method, epoch), (lam, grad))| {
            vec![
                method,
                epoch.to_string(),
                lam.len().to_string(),
                opt(median(&lam)),
                opt(median(&grad)),
            ]
        })
        .collect();
    let long_path = out.join("analyze_long.csv");
    let median_path = out.join("analyze_medians.csv");
    write_atomic(&long_path, csv_text(ANALYZE_HEADER, long)?.as_bytes())?;
    write_atomic(
        &median_path,
        csv_text("method,epoch,runs,lambda_max_median,grad_norm_median", medians)?.as_bytes(),
    )?;
    Ok((long_path, median_path))
}
