//! Synthetic 2-D classification tasks and the train/valid split.
//!
//! Example ids are row indices and never change, so per-example teacher
//! outputs can be looked up by id across epochs.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{derive_seed, RngState, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Moons,
    Blobs,
    Spirals,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Moons => "moons",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Spirals => "spirals",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(DatasetKind::Moons),
            "blobs" => Ok(DatasetKind::Blobs),
            "spirals" => Ok(DatasetKind::Spirals),
            _ => Err(Error::invalid(format!("unknown dataset `{s}`"))),
        }
    }
}

/// Parameters for [`generate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise: f64,
    /// Ignored for moons, which always has two classes.
    #[serde(default = "default_classes")]
    pub classes: usize,
}

fn default_classes() -> usize {
    2
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Moons,
            n: 2000,
            noise: 0.2,
            classes: 2,
        }
    }
}

impl DatasetSpec {
    pub fn class_count(&self) -> usize {
        match self.kind {
            DatasetKind::Moons => 2,
            _ => self.classes,
        }
    }
}

pub const BLOB_RADIUS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 || features.shape()[0] != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if classes < 2 {
            return Err(Error::invalid("a dataset needs at least two classes"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn point(&self, id: usize) -> &[f64] {
        self.features.row(id)
    }

    /// Features and labels of `ids`, in that order.
    pub fn batch(&self, ids: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.select_rows(ids),
            ids.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// `id,label,f0,f1,...` with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        out.write_record(&header)?;
        for id in 0..self.len() {
            let mut rec = vec![id.to_string(), self.labels[id].to_string()];
            rec.extend(self.point(id).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Inverse of [`Dataset::write_csv`]. Ids must be dense and in order;
    /// the class count is one more than the largest label.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = header.len().saturating_sub(2);
        let expected: Vec<String> = ["id".to_string(), "label".to_string()]
            .into_iter()
            .chain((0..dim).map(|j| format!("f{j}")))
            .collect();
        if dim == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |j: usize| -> Result<&str> {
                rec.get(j).ok_or_else(|| Error::Parse {
                    line,
                    column: j + 1,
                    message: "missing field".into(),
                })
            };
            let bad = |j: usize, what: &str| Error::Parse {
                line,
                column: j + 1,
                message: format!("invalid {what}"),
            };
            let id: usize = field(0)?.parse().map_err(|_| bad(0, "id"))?;
            if id != i {
                return Err(Error::Parse {
                    line,
                    column: 1,
                    message: format!("expected id {i}, found {id}"),
                });
            }
            labels.push(field(1)?.parse().map_err(|_| bad(1, "label"))?);
            for j in 0..dim {
                data.push(field(j + 2)?.parse::<f64>().map_err(|_| bad(j + 2, "feature"))?);
            }
        }
        let classes = labels.iter().copied().max().map_or(0, |m: usize| m + 1).max(2);
        let n = labels.len();
        Dataset::new(Tensor::matrix(n, dim, data)?, labels, classes)
    }
}

/// Deterministic given `seed`. Labels cycle `0, 1, …, C−1`, so every class
/// gets `n/C` examples up to one.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    let classes = spec.class_count();
    if classes < 2 || (spec.kind == DatasetKind::Blobs && classes > 8) {
        return Err(Error::invalid(format!("{} cannot have {classes} classes", spec.kind)));
    }
    if spec.n < 2 * classes {
        return Err(Error::invalid(format!(
            "n={} is below two examples per class ({classes} classes)",
            spec.n
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be finite and non-negative, got {}", spec.noise)));
    }
    let mut rng = RngState::new(derive_seed(seed, 0x4441_5441));
    let mut data = Vec::with_capacity(spec.n * 2);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % classes;
        let (x, y) = match spec.kind {
            DatasetKind::Moons => {
                let t = PI * rng.next_f64();
                if c == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
            DatasetKind::Blobs => {
                let phi = 2.0 * PI * c as f64 / classes as f64;
                (BLOB_RADIUS * phi.cos(), BLOB_RADIUS * phi.sin())
            }
            DatasetKind::Spirals => {
                let r = rng.next_f64();
                let theta = 3.0 * PI * r + 2.0 * PI * c as f64 / classes as f64;
                (r * theta.cos(), r * theta.sin())
            }
        };
        data.push(x + rng.gen_normal(0.0, spec.noise));
        data.push(y + rng.gen_normal(0.0, spec.noise));
        labels.push(c);
    }
    Dataset::new(Tensor::matrix(spec.n, 2, data)?, labels, classes)
}

/// Disjoint train/valid ids, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Stratified split: each class sends `round(fraction · n_c)` examples to
/// valid, clamped so both sides get at least one.
pub fn split(ds: &Dataset, valid_fraction: f64, seed: u64) -> Result<Split> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "valid_fraction must lie in (0, 1), got {valid_fraction}"
        )));
    }
    let mut rng = RngState::new(derive_seed(seed, 0x5350_4c54));
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for c in 0..ds.classes() {
        let mut ids: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == c).collect();
        if ids.is_empty() {
            continue;
        }
        rng.shuffle(&mut ids);
        let n_c = ids.len();
        let k = if n_c < 2 {
            0
        } else {
            ((valid_fraction * n_c as f64).round() as usize).clamp(1, n_c - 1)
        };
        valid.extend_from_slice(&ids[..k]);
        train.extend_from_slice(&ids[k..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok(Split { train, valid })
}

/// Shuffled mini-batches of `ids` for one epoch; the order depends only on
/// `(seed, epoch)`. The last batch may be short.
pub fn epoch_batches(ids: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut order = ids.to_vec();
    RngState::new(derive_seed(seed, 0x4241_5443 ^ ((epoch as u64) << 32))).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: DatasetKind, n: usize, noise: f64, classes: usize) -> DatasetSpec {
        DatasetSpec { kind, n, noise, classes }
    }

    #[test]
    fn noiseless_moons_lie_on_their_arcs() {
        let ds = generate(&spec(DatasetKind::Moons, 200, 0.0, 2), 1).unwrap();
        for id in 0..ds.len() {
            let p = ds.point(id);
            let r = if ds.labels()[id] == 0 {
                (p[0] * p[0] + p[1] * p[1]).sqrt()
            } else {
                ((p[0] - 1.0).powi(2) + (p[1] - 0.5).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
            // upper arc for class 0, lower arc for class 1
            if ds.labels()[id] == 0 {
                assert!(p[1] >= 0.0);
            } else {
                assert!(p[1] <= 0.5);
            }
        }
    }

    #[test]
    fn noiseless_blobs_collapse_to_centroids() {
        let ds = generate(&spec(DatasetKind::Blobs, 40, 0.0, 5), 3).unwrap();
        for c in 0..5 {
            let pts: Vec<&[f64]> = (0..ds.len()).filter(|&i| ds.labels()[i] == c).map(|i| ds.point(i)).collect();
            assert!(pts.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn spirals_are_deterministic() {
        let s = spec(DatasetKind::Spirals, 300, 0.1, 3);
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate(&s, 7).unwrap().write_csv(&mut a).unwrap();
        generate(&s, 7).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate(&s, 8).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn classes_are_balanced_within_one() {
        let ds = generate(&spec(DatasetKind::Blobs, 103, 0.5, 4), 0).unwrap();
        let counts = ds.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(generate(&spec(DatasetKind::Moons, 3, 0.1, 2), 0).is_err());
        assert!(generate(&spec(DatasetKind::Moons, 100, -0.1, 2), 0).is_err());
        assert!(generate(&spec(DatasetKind::Blobs, 100, 0.1, 9), 0).is_err());
        assert!(generate(&spec(DatasetKind::Spirals, 100, 0.1, 1), 0).is_err());
    }

    #[test]
    fn half_split_of_100() {
        let ds = generate(&spec(DatasetKind::Moons, 100, 0.2, 2), 0).unwrap();
        let s = split(&ds, 0.5, 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len()), (50, 50));
    }

    #[test]
    fn tiny_fraction_keeps_one_per_class() {
        let ds = generate(&spec(DatasetKind::Moons, 10, 0.2, 2), 0).unwrap();
        let s = split(&ds, 0.01, 0).unwrap();
        assert_eq!(s.valid.len(), 2);
        let mut labels: Vec<_> = s.valid.iter().map(|&i| ds.labels()[i]).collect();
        labels.sort();
        assert_eq!(labels, vec![0, 1]);
    }

    #[test]
    fn split_is_disjoint_covering_and_seeded() {
        let ds = generate(&spec(DatasetKind::Blobs, 97, 0.3, 3), 2).unwrap();
        let s = split(&ds, 0.3, 11).unwrap();
        assert_eq!(s, split(&ds, 0.3, 11).unwrap());
        let mut all: Vec<_> = s.train.iter().chain(&s.valid).copied().collect();
        all.sort();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn batches_reshuffle_per_epoch() {
        let ids: Vec<usize> = (0..50).collect();
        let e0 = epoch_batches(&ids, 16, 3, 0).unwrap();
        assert_eq!(e0, epoch_batches(&ids, 16, 3, 0).unwrap());
        assert_ne!(e0, epoch_batches(&ids, 16, 3, 1).unwrap());
        assert_eq!(e0.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 16, 16, 2]);
        let mut flat: Vec<_> = e0.concat();
        flat.sort();
        assert_eq!(flat, ids);
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate(&spec(DatasetKind::Spirals, 30, 0.05, 3), 5).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"id,label,f0,f1\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn csv_with_gap_in_ids_is_rejected() {
        let text = "id,label,f0,f1\n0,0,0.1,0.2\n2,1,0.3,0.4\n";
        match Dataset::read_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
