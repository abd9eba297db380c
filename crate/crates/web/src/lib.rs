//! Browser bindings. Every export takes and returns JSON strings; the
//! `*_json` functions hold the logic so they can be tested natively.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use sdnas_core::bilevel::{run_search, ArchConfig, SearchConfig};
use sdnas_core::datasets::{generate, split, Dataset, DatasetKind, DatasetSpec};
use sdnas_core::diffcore::Tensor;
use sdnas_core::distill::{metric_value, Metric, SplitKind, TeacherBank, TeacherSource};
use sdnas_core::sharpness::SharpnessConfig;

const GRID: usize = 48;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRequest {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise: f64,
    #[serde(default = "two")]
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}

impl DatasetRequest {
    fn build(&self) -> Result<Dataset, String> {
        if self.n > 5000 {
            return Err(format!("n={} is too large for the demo (max 5000)", self.n));
        }
        let spec = DatasetSpec {
            kind: self.kind,
            n: self.n,
            noise: self.noise,
            classes: self.classes,
        };
        generate(&spec, self.seed).map_err(|e| e.to_string())
    }
}

fn points(ds: &Dataset) -> Value {
    let pts: Vec<[f64; 2]> = (0..ds.len()).map(|i| [ds.point(i)[0], ds.point(i)[1]]).collect();
    json!({ "points": pts, "labels": ds.labels(), "classes": ds.classes() })
}

pub fn dataset_json(request: &str) -> Result<String, String> {
    let req: DatasetRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    Ok(points(&req.build()?).to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRequest {
    /// One row of non-negative weights per past epoch, oldest first.
    pub teachers: Vec<Vec<f64>>,
    pub student: Vec<f64>,
}

fn normalize(w: &[f64], what: &str) -> Result<Vec<f64>, String> {
    if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(format!("{what} needs finite non-negative weights"));
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(format!("{what} is all zero"));
    }
    Ok(w.iter().map(|x| x / s).collect())
}

#[derive(Debug, Serialize)]
struct VoteReport {
    vote: Vec<f64>,
    student: Vec<f64>,
    metrics: Vec<(String, f64)>,
}

/// Averages the teachers through a [`TeacherBank`] and scores the student
/// against the vote under every metric.
pub fn vote_json(request: &str) -> Result<String, String> {
    let req: VoteRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let k = req.teachers.len();
    let c = req.student.len();
    if k == 0 || c < 2 {
        return Err("need at least one teacher and two classes".into());
    }
    let mut bank = TeacherBank::new(k, 1, c).map_err(|e| e.to_string())?;
    for (i, t) in req.teachers.iter().enumerate() {
        if t.len() != c {
            return Err(format!("teacher {} has {} classes, student has {c}", i + 1, t.len()));
        }
        let p = normalize(t, &format!("teacher {}", i + 1))?;
        bank.record(SplitKind::Train, i + 1, 0, &p).map_err(|e| e.to_string())?;
    }
    let vote = bank.vote(SplitKind::Train, k + 1, &[0]).map_err(|e| e.to_string())?;
    let vote = vote.data().to_vec();
    let student = normalize(&req.student, "student")?;
    let metrics = Metric::ALL
        .iter()
        .map(|&m| Ok((m.tag().to_string(), metric_value(&student, &vote, m).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    let report = VoteReport { vote, student, metrics };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub dataset: DatasetRequest,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub window: usize,
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A shrunken search: narrow supernet, cheap sharpness probe, and the
/// supernet's decision regions on a grid for drawing.
pub fn search_json(request: &str) -> Result<String, String> {
    let req: SearchRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    if req.epochs > 60 {
        return Err(format!("epochs={} is too many for the demo (max 60)", req.epochs));
    }
    let ds = req.dataset.build()?;
    let sp = split(&ds, 0.5, req.dataset.seed).map_err(|e| e.to_string())?;
    let cfg = SearchConfig {
        epochs: req.epochs,
        warmup_epochs: req.warmup_epochs,
        window: req.window,
        lambda: req.lambda,
        batch_size: 32,
        seed: req.seed,
        arch: ArchConfig {
            width: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let sharp = SharpnessConfig {
        max_steps: 20,
        probe_size: 128,
        ..Default::default()
    };
    let out = run_search(&cfg, &sharp, &ds, &sp).map_err(|e| e.to_string())?;

    let feats = ds.features().data();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in feats.chunks(2) {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let pad = [(hi[0] - lo[0]) * 0.05, (hi[1] - lo[1]) * 0.05];
    let (lo, hi) = ([lo[0] - pad[0], lo[1] - pad[1]], [hi[0] + pad[0], hi[1] + pad[1]]);
    let mut grid = Vec::with_capacity(GRID * GRID * 2);
    for r in 0..GRID {
        for c in 0..GRID {
            let x = lo[0] + (hi[0] - lo[0]) * (c as f64 + 0.5) / GRID as f64;
            let y = hi[1] - (hi[1] - lo[1]) * (r as f64 + 0.5) / GRID as f64;
            grid.extend([x, y]);
        }
    }
    let logits = out
        .net
        .logits(&Tensor::matrix(GRID * GRID, 2, grid).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let regions: Vec<usize> = logits
        .data()
        .chunks(ds.classes())
        .map(|row| row.iter().enumerate().fold(0, |b, (k, &v)| if v > row[b] { k } else { b }))
        .collect();

    let space = out.net.space();
    let edges: Vec<Value> = space
        .topology()
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let weights: Vec<(String, f64)> = space
                .ops()
                .iter()
                .zip(out.alpha.weights(e))
                .map(|(op, w)| (op.to_string(), w))
                .collect();
            json!({ "src": edge.src, "dst": edge.dst, "weights": weights })
        })
        .collect();
    let logs: Vec<Value> = out
        .logs
        .iter()
        .map(|l| {
            json!({
                "epoch": l.epoch,
                "phase": l.phase,
                "train_loss": l.train_loss,
                "valid_loss": l.valid_loss,
                "distill": l.distill_train,
            })
        })
        .collect();
    let lambda_max: Vec<(usize, f64)> = out.trace.rows.iter().map(|r| (r.epoch, r.lambda_max)).collect();
    Ok(json!({
        "genotype": out.genotype.to_text(),
        "edges": edges,
        "logs": logs,
        "lambda_max": lambda_max,
        "grid": { "size": GRID, "lo": lo, "hi": hi, "classes": regions },
        "data": points(&ds),
    })
    .to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn dataset(request: &str) -> Result<String, JsError> {
    js(dataset_json(request))
}

#[wasm_bindgen]
pub fn vote(request: &str) -> Result<String, JsError> {
    js(vote_json(request))
}

#[wasm_bindgen]
pub fn search(request: &str) -> Result<String, JsError> {
    js(search_json(request))
}
