//! Exhaustive ground truth for the small search space and rank/regret
//! scoring of search methods against it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bilevel::{run_search, train_discrete, ArchConfig, DiscreteTrainConfig, SearchConfig};
use crate::datasets::{generate, split, Dataset, DatasetSpec, Split};
use crate::diffcore::derive_seed;
use crate::searchspace::{enumerate_genotypes, EnumerationOptions, Genotype, OperationKind, RetainPolicy, SearchSpace};
use crate::sharpness::SharpnessConfig;
use crate::{Error, Result};

/// Everything that determines an oracle table's contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fingerprint {
    pub nodes: usize,
    pub ops: Vec<OperationKind>,
    pub retain: RetainPolicy,
    pub allow_zero: bool,
    pub dataset: DatasetSpec,
    pub data_seed: u64,
    pub valid_fraction: f64,
    pub train: DiscreteTrainConfig,
    pub eval_seeds: usize,
    pub base_seed: u64,
}

impl Default for Fingerprint {
    fn default() -> Self {
        Self {
            nodes: 2,
            ops: OperationKind::ALL.to_vec(),
            retain: RetainPolicy::All,
            allow_zero: false,
            dataset: DatasetSpec::default(),
            data_seed: 0,
            valid_fraction: 0.5,
            train: DiscreteTrainConfig::default(),
            eval_seeds: 3,
            base_seed: 0,
        }
    }
}

impl Fingerprint {
    pub fn space(&self) -> Result<SearchSpace> {
        ArchConfig {
            nodes: self.nodes,
            ops: self.ops.clone(),
            ..Default::default()
        }
        .space()
    }

    pub fn genotypes(&self) -> Result<Vec<Genotype>> {
        let opts = EnumerationOptions {
            allow_zero: self.allow_zero,
            ..Default::default()
        };
        enumerate_genotypes(&self.space()?, self.retain, opts)
    }

    /// The dataset and split every oracle entry and every compared search
    /// uses.
    pub fn task(&self) -> Result<(Dataset, Split)> {
        let ds = generate(&self.dataset, self.data_seed)?;
        let sp = split(&ds, self.valid_fraction, self.data_seed)?;
        Ok((ds, sp))
    }

    pub fn eval_seed(&self, k: usize) -> u64 {
        derive_seed(self.base_seed, k as u64)
    }

    /// Checks that a search configured as `cfg` explores this table's space.
    pub fn check_search(&self, cfg: &SearchConfig) -> Result<()> {
        if cfg.arch.nodes != self.nodes || cfg.arch.ops != self.ops || cfg.retain != self.retain {
            return Err(Error::Table(format!(
                "search space (nodes={}, ops={:?}, retain={}) differs from the table's (nodes={}, ops={:?}, retain={})",
                cfg.arch.nodes, cfg.arch.ops, cfg.retain, self.nodes, self.ops, self.retain
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub genotype: Genotype,
    /// One entry per evaluation seed, in seed order.
    pub accuracies: Vec<f64>,
}

impl OracleRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    fingerprint: Fingerprint,
    rows: Vec<OracleRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub accuracy: f64,
    /// 1 for the best; ties share the smaller rank.
    pub rank: usize,
    pub regret: f64,
    pub percentile: f64,
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Trains every genotype of the fingerprint's space once per evaluation
/// seed. Runs in parallel when the `parallel` feature is on; the result does
/// not depend on scheduling.
pub fn build_oracle(fp: &Fingerprint) -> Result<OracleTable> {
    if fp.eval_seeds == 0 {
        return Err(Error::invalid("eval_seeds must be at least 1"));
    }
    let genotypes = fp.genotypes()?;
    let (ds, sp) = fp.task()?;
    let jobs: Vec<(usize, usize)> = (0..genotypes.len())
        .flat_map(|g| (0..fp.eval_seeds).map(move |s| (g, s)))
        .collect();
    let results = par_map(&jobs, |&(g, s)| train_discrete(&genotypes[g], &ds, &sp, &fp.train, fp.eval_seed(s)));
    let mut rows: Vec<OracleRow> = genotypes
        .into_iter()
        .map(|genotype| OracleRow {
            genotype,
            accuracies: Vec::with_capacity(fp.eval_seeds),
        })
        .collect();
    for (&(g, _), acc) in jobs.iter().zip(results) {
        let acc = acc.map_err(|e| Error::Table(format!("{}: {e}", rows[g].genotype.to_text().trim_end())))?;
        rows[g].accuracies.push(acc);
    }
    OracleTable::new(fp.clone(), rows)
}

impl OracleTable {
    /// Rows must cover the fingerprint's space exactly, each with
    /// `eval_seeds` accuracies in `[0, 1]`.
    pub fn new(fingerprint: Fingerprint, mut rows: Vec<OracleRow>) -> Result<Self> {
        rows.sort_by(|a, b| a.genotype.cmp(&b.genotype));
        let expected = fingerprint.genotypes()?;
        let have: BTreeMap<&Genotype, &OracleRow> = rows.iter().map(|r| (&r.genotype, r)).collect();
        if have.len() != rows.len() {
            return Err(Error::Table("duplicate genotype rows".into()));
        }
        for g in &expected {
            let Some(row) = have.get(g) else {
                return Err(Error::Table(format!("missing row for `{}`", g.to_text().trim_end())));
            };
            if row.accuracies.len() != fingerprint.eval_seeds {
                return Err(Error::Table(format!(
                    "`{}` has {} accuracies, expected {}",
                    g.to_text().trim_end(),
                    row.accuracies.len(),
                    fingerprint.eval_seeds
                )));
            }
            if row.accuracies.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::Table(format!("accuracy outside [0, 1] for `{}`", g.to_text().trim_end())));
            }
        }
        if rows.len() != expected.len() {
            return Err(Error::Table(format!(
                "table has {} rows but the space has {} genotypes",
                rows.len(),
                expected.len()
            )));
        }
        Ok(Self { fingerprint, rows })
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn rows(&self) -> &[OracleRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn best(&self) -> &OracleRow {
        self.rows
            .iter()
            .fold(&self.rows[0], |b, r| if r.mean() > b.mean() { r } else { b })
    }

    pub fn score(&self, g: &Genotype) -> Result<Score> {
        let row = self
            .rows
            .iter()
            .find(|r| &r.genotype == g)
            .ok_or_else(|| Error::Table(format!("`{}` is not in the table", g.to_text().trim_end())))?;
        let acc = row.mean();
        let better = self.rows.iter().filter(|r| r.mean() > acc).count();
        let rank = better + 1;
        Ok(Score {
            accuracy: acc,
            rank,
            regret: (self.best().mean() - acc).max(0.0),
            percentile: rank as f64 / self.rows.len() as f64,
        })
    }

    /// Fingerprint as one JSON line, then `genotype_text,seed,accuracy` rows.
    pub fn to_text(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.fingerprint)?;
        out.push('\n');
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["genotype_text", "seed", "accuracy"])?;
        for row in &self.rows {
            let text = row.genotype.to_text();
            for (k, acc) in row.accuracies.iter().enumerate() {
                w.write_record([text.as_str(), &k.to_string(), &acc.to_string()])?;
            }
        }
        let body = w.into_inner().map_err(|e| Error::Table(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Table(e.to_string()))?);
        Ok(out)
    }

    /// Parses a table; with `expected`, also requires an equal fingerprint.
    pub fn from_text(text: &str, expected: Option<&Fingerprint>) -> Result<Self> {
        let (head, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Table("table file has no body".into()))?;
        let fingerprint: Fingerprint = serde_json::from_str(head)?;
        if let Some(want) = expected {
            if want != &fingerprint {
                return Err(Error::Table("table fingerprint does not match the requested space".into()));
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        if rdr.headers()?.iter().ne(["genotype_text", "seed", "accuracy"]) {
            return Err(Error::Table("expected header `genotype_text,seed,accuracy`".into()));
        }
        let mut acc: BTreeMap<Genotype, Vec<(usize, f64)>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() + 1);
            let bad = |what: &str| Error::Table(format!("line {line}: invalid {what}"));
            let g = Genotype::parse(rec.get(0).ok_or_else(|| bad("genotype"))?)
                .map_err(|e| Error::Table(format!("line {line}: {e}")))?;
            let seed: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("seed"))?;
            let a: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("accuracy"))?;
            acc.entry(g).or_default().push((seed, a));
        }
        let mut rows = Vec::with_capacity(acc.len());
        for (genotype, mut entries) in acc {
            entries.sort_by_key(|&(s, _)| s);
            if entries.iter().enumerate().any(|(k, &(s, _))| k != s) {
                return Err(Error::Table(format!(
                    "`{}` has missing or repeated seeds",
                    genotype.to_text().trim_end()
                )));
            }
            rows.push(OracleRow {
                genotype,
                accuracies: entries.into_iter().map(|(_, a)| a).collect(),
            });
        }
        Self::new(fingerprint, rows)
    }
}

/// A named search configuration to compare; its `seed` is overridden.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub config: SearchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub seed: u64,
    pub genotype: Genotype,
    pub score: Score,
    pub lambda_max_final: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub entries: Vec<MethodEntry>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl MethodReport {
    fn collect(&self, f: impl Fn(&MethodEntry) -> f64) -> Vec<f64> {
        self.entries.iter().map(f).collect()
    }

    pub fn median_regret(&self) -> Option<f64> {
        median(&self.collect(|e| e.score.regret))
    }

    pub fn mean_regret(&self) -> Option<f64> {
        let r = self.collect(|e| e.score.regret);
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn median_rank(&self) -> Option<f64> {
        median(&self.collect(|e| e.score.rank as f64))
    }

    pub fn median_percentile(&self) -> Option<f64> {
        median(&self.collect(|e| e.score.percentile))
    }

    pub fn median_lambda_max(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.entries.iter().map(|e| e.lambda_max_final).collect();
        median(&v?)
    }
}

/// Runs every method once per seed on the table's task and scores the
/// found genotypes.
pub fn compare_methods(
    table: &OracleTable,
    methods: &[MethodSpec],
    seeds: &[u64],
    sharp: &SharpnessConfig,
) -> Result<Vec<MethodReport>> {
    if seeds.is_empty() {
        return Err(Error::invalid("compare needs at least one seed"));
    }
    for m in methods {
        table.fingerprint.check_search(&m.config)?;
    }
    let (ds, sp) = table.fingerprint.task()?;
    let jobs: Vec<(usize, u64)> = (0..methods.len())
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let results = par_map(&jobs, |&(m, seed)| -> Result<MethodEntry> {
        let cfg = SearchConfig {
            seed,
            ..methods[m].config.clone()
        };
        let out = run_search(&cfg, sharp, &ds, &sp)?;
        Ok(MethodEntry {
            seed,
            score: table.score(&out.genotype)?,
            lambda_max_final: out.trace.final_lambda_max(),
            genotype: out.genotype,
        })
    });
    let mut reports: Vec<MethodReport> = methods
        .iter()
        .map(|m| MethodReport {
            name: m.name.clone(),
            entries: Vec::new(),
        })
        .collect();
    for (&(m, _), r) in jobs.iter().zip(results) {
        reports[m].entries.push(r?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::DatasetKind;

    fn tiny() -> Fingerprint {
        Fingerprint {
            nodes: 1,
            ops: vec![OperationKind::Zero, OperationKind::Identity, OperationKind::Linear, OperationKind::TanhLinear],
            dataset: DatasetSpec { kind: DatasetKind::Moons, n: 80, noise: 0.2, classes: 2 },
            train: DiscreteTrainConfig { epochs: 3, width: 4, ..Default::default() },
            eval_seeds: 2,
            ..Default::default()
        }
    }

    fn fake_table(means: &[f64]) -> OracleTable {
        let fp = Fingerprint {
            eval_seeds: 1,
            ..tiny()
        };
        let rows = fp
            .genotypes()
            .unwrap()
            .into_iter()
            .zip(means)
            .map(|(genotype, &m)| OracleRow { genotype, accuracies: vec![m] })
            .collect();
        OracleTable::new(fp, rows).unwrap()
    }

    #[test]
    fn scoring_rules() {
        let t = fake_table(&[0.7, 0.9, 0.7]);
        let g = |i: usize| t.rows()[i].genotype.clone();
        let best = t.score(&g(1)).unwrap();
        assert_eq!((best.rank, best.regret), (1, 0.0));
        let tied = [t.score(&g(0)).unwrap(), t.score(&g(2)).unwrap()];
        assert!(tied.iter().all(|s| s.rank == 2 && (s.regret - 0.2).abs() < 1e-12));
        assert!((tied[0].percentile - 2.0 / 3.0).abs() < 1e-15);
        let worst = fake_table(&[0.5, 0.9, 0.7]);
        assert_eq!(worst.score(&worst.rows()[0].genotype).unwrap().percentile, 1.0);
    }

    #[test]
    fn unknown_genotype_is_rejected() {
        let t = fake_table(&[0.7, 0.9, 0.7]);
        let other = Genotype::new(2, RetainPolicy::All, vec![(0, OperationKind::Identity)]).unwrap();
        assert!(t.score(&other).is_err());
    }

    #[test]
    fn build_is_deterministic_and_round_trips() {
        let fp = tiny();
        let a = build_oracle(&fp).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.rows().iter().all(|r| r.accuracies.len() == 2));
        let text = a.to_text().unwrap();
        assert_eq!(text, build_oracle(&fp).unwrap().to_text().unwrap());
        assert_eq!(OracleTable::from_text(&text, Some(&fp)).unwrap(), a);
        assert_eq!(a.score(&a.best().genotype).unwrap().regret, 0.0);
    }

    #[test]
    fn edited_fingerprint_is_rejected() {
        let t = fake_table(&[0.7, 0.9, 0.7]);
        let text = t.to_text().unwrap().replacen("\"data_seed\":0", "\"data_seed\":1", 1);
        assert!(OracleTable::from_text(&text, Some(t.fingerprint())).is_err());
        // internally consistent, just not what was asked for
        assert!(OracleTable::from_text(&text, None).is_ok());
    }

    #[test]
    fn missing_row_is_named() {
        let t = fake_table(&[0.7, 0.9, 0.7]);
        let text = t.to_text().unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        // the last row's quoted genotype spans three lines
        lines.truncate(lines.len() - 3);
        let err = OracleTable::from_text(&(lines.join("\n") + "\n"), None).unwrap_err();
        assert!(err.to_string().contains("tanh_linear"), "{err}");
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
