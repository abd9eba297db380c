use std::path::Path;
use std::process::{Command, Output};

use sdnas_cli::{
    cmd_analyze, cmd_build_oracle, cmd_compare, cmd_search, compact, method_label, sweep_csv, sweep_rows, Axis,
    CliError, Manifest, RunConfig, SWEEP_HEADER,
};
use sdnas_core::benchmark::OracleTable;
use sdnas_core::searchspace::{Genotype, OperationKind};

/// A config small enough to search in well under a second.
const TINY: &str = r#"
run_id = "tiny"
[dataset]
kind = "moons"
n = 120
noise = 0.2
[search]
epochs = 4
warmup_epochs = 2
batch_size = 32
[search.arch]
width = 4
[sharpness]
max_steps = 5
probe_size = 32
[train]
epochs = 3
width = 4
[oracle]
eval_seeds = 1
[compare]
seeds = [0, 1]
"#;

fn tiny(out: &Path) -> RunConfig {
    RunConfig {
        out: out.to_path_buf(),
        ..RunConfig::from_toml(TINY).unwrap()
    }
}

fn sdnas(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdnas"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write_tiny(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
}

#[test]
fn default_config_records_table_one_values() {
    let cfg = RunConfig::from_toml("").unwrap();
    let s = &cfg.search;
    assert_eq!((s.warmup_epochs, s.epochs, s.window, s.lambda, s.batch_size), (25, 50, 2, 1.0, 64));
    let dir = tempfile::tempdir().unwrap();
    let m = Manifest {
        version: "x".into(),
        run_id: cfg.run_id.clone(),
        seed: 0,
        deterministic: true,
        wall_ms: 0,
        genotype: String::new(),
        config: cfg.clone(),
    };
    let path = dir.path().join("manifest.json");
    std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
}

#[test]
fn search_writes_all_artifacts_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let a = cmd_search(&cfg, true).unwrap();
    let run = dir.path().join("tiny");
    let read = |f: &str| std::fs::read(run.join(f)).unwrap();
    let (g, log, trace) = (read("genotype.txt"), read("epochs.csv"), read("sharpness.csv"));
    assert_eq!(String::from_utf8(g.clone()).unwrap(), a.genotype);
    let b = cmd_search(&cfg, true).unwrap();
    assert_eq!(a.genotype, b.genotype);
    assert_eq!((read("genotype.txt"), read("epochs.csv"), read("sharpness.csv")), (g, log, trace));
    let manifest: Manifest = serde_json::from_slice(&read("manifest.json")).unwrap();
    assert_eq!(manifest.config, cfg);
    assert!(manifest.deterministic);
}

#[test]
fn config_rejections_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[search]\nepochs = 10\nwarmup_epochs = 10\n").unwrap();
    let out = sdnas(dir.path(), &["search", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("search.warmup_epochs"), "{err}");
    // nothing was written
    assert!(!dir.path().join("runs").exists());

    std::fs::write(dir.path().join("typo.toml"), "[serch]\n").unwrap();
    assert_eq!(sdnas(dir.path(), &["search", "--config", "typo.toml"]).status.code(), Some(2));
    assert_eq!(sdnas(dir.path(), &["analyze"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path());
    let out = sdnas(dir.path(), &["compare", "--config", "tiny.toml", "--oracle", "missing.txt"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("g.txt"), "not a genotype").unwrap();
    let out = sdnas(dir.path(), &["eval-genotype", "--config", "tiny.toml", "--genotype", "g.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn binary_search_then_eval_genotype() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny(dir.path());
    let out = sdnas(dir.path(), &["search", "--config", "tiny.toml", "--seed", "5", "--out", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = sdnas(
        dir.path(),
        &["eval-genotype", "--config", "tiny.toml", "--genotype", "o/tiny/genotype.txt"],
    );
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report["oracle"].is_null());
}

#[test]
fn oracle_compare_and_sweep_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = dir.path().join("oracle.txt");
    let table = cmd_build_oracle(&cfg, &path).unwrap();
    assert_eq!(table.len(), 64);
    let loaded = OracleTable::from_text(&std::fs::read_to_string(&path).unwrap(), Some(&cfg.fingerprint())).unwrap();
    assert_eq!(loaded, table);

    let reports = cmd_compare(&cfg, &table).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].name, "darts");
    for r in &reports {
        assert_eq!(r.entries.len(), 2);
        assert!(r.entries.iter().all(|e| e.score.regret >= 0.0));
    }
    let text = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);

    let mut sweep = cfg.sweep.clone();
    sweep.axis = Axis::Window;
    // 3 exceeds the 2-epoch warm-up and is skipped
    sweep.values = vec![1.0, 3.0, 2.0];
    sweep.seeds = vec![0];
    let rows = sweep_rows(&cfg, &sweep, Some(&table)).unwrap();
    assert_eq!(rows.iter().map(|r| r.axis_value).collect::<Vec<_>>(), vec![1.0, 2.0]);
    assert!(rows.iter().all(|r| r.rank.is_some() && r.lambda_max_final.is_some()));
    let csv = sweep_csv(&rows).unwrap();
    assert!(csv.starts_with(SWEEP_HEADER));

    sweep.values.clear();
    assert!(matches!(sweep_rows(&cfg, &sweep, None), Err(CliError::Config(_))));
}

#[test]
fn mismatched_oracle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = dir.path().join("oracle.txt");
    cmd_build_oracle(&cfg, &path).unwrap();
    let mut other = cfg.clone();
    other.data_seed = 9;
    assert!(sdnas_cli::load_oracle(&path, &other).is_err());
}

#[test]
fn analyze_merges_runs_and_skips_missing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cmd_search(&cfg, true).unwrap();
    cfg.run_id = "base".into();
    cfg.search.lambda = 0.0;
    cmd_search(&cfg, true).unwrap();
    let runs = [dir.path().join("tiny"), dir.path().join("base"), dir.path().join("nope")];
    let (long, medians) = cmd_analyze(&runs, &dir.path().join("an")).unwrap();
    let long = std::fs::read_to_string(long).unwrap();
    let mut lines = long.lines();
    assert_eq!(lines.next(), Some("method,seed,epoch,lambda_max,grad_norm"));
    let rows: Vec<_> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[0].starts_with("sd-darts-k2,0,1,") && rows[4].starts_with("darts,0,1,"));
    let medians = std::fs::read_to_string(medians).unwrap();
    assert_eq!(medians.lines().count(), 9);

    assert!(matches!(cmd_analyze(&[], dir.path()), Err(CliError::Config(_))));
    assert!(cmd_analyze(&[dir.path().join("nope")], dir.path()).is_err());
}

#[test]
fn single_run_analysis_passes_its_trace_through() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_search(&cfg, true).unwrap();
    let trace = std::fs::read_to_string(dir.path().join("tiny/sharpness.csv")).unwrap();
    let (long, _) = cmd_analyze(&[dir.path().join("tiny")], dir.path()).unwrap();
    let long = std::fs::read_to_string(long).unwrap();
    for (t, l) in trace.lines().skip(1).zip(long.lines().skip(1)) {
        let t: Vec<_> = t.split(',').collect();
        let l: Vec<_> = l.split(',').collect();
        assert_eq!((l[2], l[3], l[4]), (t[0], t[3], t[1]));
    }
}

#[test]
fn labels_and_compact_form() {
    let mut cfg = RunConfig::default().search;
    assert_eq!(method_label(&cfg), "sd-darts-k2");
    cfg.lambda = 0.0;
    assert_eq!(method_label(&cfg), "darts");
    cfg.lambda = 0.5;
    cfg.window = 4;
    assert_eq!(method_label(&cfg), "sd-darts-k4-l0.5");
    let g = Genotype::new(
        2,
        sdnas_core::searchspace::RetainPolicy::All,
        vec![(0, OperationKind::Linear), (1, OperationKind::Identity), (2, OperationKind::ReluLinear)],
    )
    .unwrap();
    assert_eq!(compact(&g), "0>1:linear 0>2:identity 1>2:relu_linear");
}

#[test]
fn readme_config_block_is_the_default() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").unwrap() + "```toml\n".len();
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    assert_eq!(RunConfig::from_toml(block).unwrap(), RunConfig::default());
}
