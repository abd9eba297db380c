//! Stored teacher probabilities, student/teacher discrepancy metrics and the
//! distillation loss.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Valid,
}

impl SplitKind {
    fn slot(self) -> usize {
        match self {
            SplitKind::Train => 0,
            SplitKind::Valid => 1,
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Valid => "valid",
        })
    }
}

/// Student/teacher discrepancy. `Kl` is `KL(student ‖ teacher)`; `KlRev`
/// swaps the arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "KL_REV")]
    KlRev,
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "MD")]
    Md,
    #[serde(rename = "CD")]
    Cd,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Kl, Metric::KlRev, Metric::Ed, Metric::Md, Metric::Cd];

    pub fn tag(self) -> &'static str {
        match self {
            Metric::Kl => "KL",
            Metric::KlRev => "KL_REV",
            Metric::Ed => "ED",
            Metric::Md => "MD",
            Metric::Cd => "CD",
        }
    }

    pub fn needs_probabilities(self) -> bool {
        matches!(self, Metric::Kl | Metric::KlRev)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

pub fn check_probabilities(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Discrepancy between two single vectors, evaluated directly.
pub fn metric_value(student: &[f64], teacher: &[f64], metric: Metric) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(Error::Shape {
            op: "metric_value",
            lhs: vec![student.len()],
            rhs: vec![teacher.len()],
        });
    }
    if metric.needs_probabilities() {
        check_probabilities(student, "student")?;
        check_probabilities(teacher, "teacher")?;
    }
    let pairs = student.iter().zip(teacher);
    let ln = |x: f64| x.max(PROB_FLOOR).ln();
    Ok(match metric {
        Metric::Kl => pairs.map(|(&s, &t)| s * (ln(s) - ln(t))).sum(),
        Metric::KlRev => pairs.map(|(&s, &t)| t * (ln(t) - ln(s))).sum(),
        Metric::Ed => pairs.map(|(&s, &t)| (s - t) * (s - t)).sum(),
        Metric::Md => pairs.map(|(&s, &t)| (s - t).abs()).sum(),
        Metric::Cd => {
            let dot: f64 = pairs.map(|(&s, &t)| s * t).sum();
            let ns = student.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nt = teacher.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - dot / (ns * nt)
        }
    })
}

/// Batch-mean discrepancy between `student (m×C)` on the tape and a constant
/// teacher batch. Differentiable with respect to the student only.
pub fn correlation(tape: &mut Tape, student: Var, teacher: &Tensor, metric: Metric) -> Result<Var> {
    let s = tape.value(student);
    if s.shape() != teacher.shape() || s.shape().len() != 2 {
        return Err(Error::Shape {
            op: "correlation",
            lhs: s.shape().to_vec(),
            rhs: teacher.shape().to_vec(),
        });
    }
    if metric.needs_probabilities() {
        let c = s.last_dim();
        for (i, row) in s.data().chunks(c).enumerate() {
            check_probabilities(row, &format!("student row {i}"))?;
        }
        for (i, row) in teacher.data().chunks(c).enumerate() {
            check_probabilities(row, &format!("teacher row {i}"))?;
        }
    }
    let per_example = match metric {
        Metric::Kl => {
            let clamped = tape.clamp_min(student, PROB_FLOOR);
            let log_s = tape.log(clamped);
            let log_t = tape.constant(teacher.map(|t| t.max(PROB_FLOOR).ln()));
            let diff = tape.sub(log_s, log_t)?;
            let terms = tape.mul(student, diff)?;
            tape.sum_last_dim(terms)
        }
        Metric::KlRev => {
            let clamped = tape.clamp_min(student, PROB_FLOOR);
            let log_s = tape.log(clamped);
            let log_t = tape.constant(teacher.map(|t| t.max(PROB_FLOOR).ln()));
            let t = tape.constant(teacher.clone());
            let diff = tape.sub(log_t, log_s)?;
            let terms = tape.mul(t, diff)?;
            tape.sum_last_dim(terms)
        }
        Metric::Ed => {
            let t = tape.constant(teacher.clone());
            let d = tape.sub(student, t)?;
            let sq = tape.mul(d, d)?;
            tape.sum_last_dim(sq)
        }
        Metric::Md => {
            let t = tape.constant(teacher.clone());
            let d = tape.sub(student, t)?;
            let a = tape.abs(d);
            tape.sum_last_dim(a)
        }
        Metric::Cd => {
            let c = teacher.last_dim();
            let m = teacher.outer_len();
            let t = tape.constant(teacher.clone());
            let st = tape.mul(student, t)?;
            let dot = tape.sum_last_dim(st);
            let ss = tape.mul(student, student)?;
            let ss = tape.sum_last_dim(ss);
            let ns = tape.sqrt(ss);
            let nt: Vec<f64> = teacher
                .data()
                .chunks(c)
                .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            let nt = tape.constant(Tensor::vector(nt));
            let denom = tape.mul(ns, nt)?;
            let cos = tape.div(dot, denom)?;
            let ones = tape.constant(Tensor::full(&[m], 1.0));
            tape.sub(ones, cos)?
        }
    };
    Ok(tape.mean(per_example))
}

/// Nodes of a distillation loss on the tape.
#[derive(Clone, Copy, Debug)]
pub struct DistillTerms {
    pub total: Var,
    pub ce: Var,
    /// The unscaled discrepancy, absent when `λ = 0`.
    pub h: Option<Var>,
}

/// `CE(logits, labels) + λ·H(softmax(logits), teacher)`.
///
/// With `lambda == 0` the teacher is ignored and `total` is the plain
/// cross-entropy node itself.
pub fn distill_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    teacher: Option<&Tensor>,
    lambda: f64,
    metric: Metric,
) -> Result<DistillTerms> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let ce = tape.cross_entropy(logits, labels)?;
    if lambda == 0.0 {
        return Ok(DistillTerms { total: ce, ce, h: None });
    }
    let teacher = teacher.ok_or_else(|| Error::MissingTeacher("no teacher batch for lambda > 0".into()))?;
    let probs = tape.softmax(logits);
    let h = correlation(tape, probs, teacher, metric)?;
    let scaled = tape.scale(h, lambda);
    Ok(DistillTerms {
        total: tape.add(ce, scaled)?,
        ce,
        h: Some(h),
    })
}

/// Where teacher probabilities come from during the distillation phase.
pub trait TeacherSource {
    fn record(&mut self, split: SplitKind, epoch: usize, id: usize, probs: &[f64]) -> Result<()>;

    /// Teacher batch (`ids.len() × C`) for a student in epoch `epoch`.
    fn vote(&self, split: SplitKind, epoch: usize, ids: &[usize]) -> Result<Tensor>;

    fn record_batch(&mut self, split: SplitKind, epoch: usize, ids: &[usize], probs: &Tensor) -> Result<()> {
        if probs.outer_len() != ids.len() {
            return Err(Error::Shape {
                op: "record_batch",
                lhs: probs.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        for (i, &id) in ids.iter().enumerate() {
            self.record(split, epoch, id, probs.row(i))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Slot {
    epoch: Option<usize>,
    data: Vec<f64>,
    present: Vec<bool>,
}

impl Slot {
    fn new(n: usize, c: usize) -> Self {
        Self {
            epoch: None,
            data: vec![0.0; n * c],
            present: vec![false; n],
        }
    }

    fn open(&mut self, epoch: usize) {
        self.epoch = Some(epoch);
        self.present.iter_mut().for_each(|p| *p = false);
    }
}

/// Per-example probabilities from the last `K` epochs for both splits.
///
/// One extra slot is kept for the epoch being written, so streaming capture
/// never overwrites a teacher that is still voting.
#[derive(Clone, Debug)]
pub struct TeacherBank {
    window: usize,
    n: usize,
    classes: usize,
    slots: [Vec<Slot>; 2],
}

impl TeacherBank {
    pub fn new(window: usize, n: usize, classes: usize) -> Result<Self> {
        if window == 0 || n == 0 || classes < 2 {
            return Err(Error::invalid(format!(
                "teacher bank needs K ≥ 1, N ≥ 1 and C ≥ 2 (got K={window}, N={n}, C={classes})"
            )));
        }
        let split = || (0..=window).map(|_| Slot::new(n, classes)).collect::<Vec<_>>();
        Ok(Self {
            window,
            n,
            classes,
            slots: [split(), split()],
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn slot_index(&self, epoch: usize) -> usize {
        epoch % (self.window + 1)
    }

    /// Stored vector for `(epoch, id)`, if still in the bank.
    pub fn get(&self, split: SplitKind, epoch: usize, id: usize) -> Option<&[f64]> {
        let slot = &self.slots[split.slot()][self.slot_index(epoch)];
        if slot.epoch != Some(epoch) || id >= self.n || !slot.present[id] {
            return None;
        }
        Some(&slot.data[id * self.classes..(id + 1) * self.classes])
    }

    /// Epochs currently held for `split`, ascending.
    pub fn epochs(&self, split: SplitKind) -> Vec<usize> {
        let mut e: Vec<usize> = self.slots[split.slot()].iter().filter_map(|s| s.epoch).collect();
        e.sort_unstable();
        e
    }

    /// Writes the voting window for a student at `epoch` (slots `epoch−1`
    /// down to `epoch−K`) as little-endian `f64`s after a one-line text
    /// header. Missing entries are written as NaN.
    pub fn dump<W: Write>(&self, split: SplitKind, epoch: usize, mut w: W) -> Result<()> {
        let io = |e| Error::io("<bank dump>", e);
        writeln!(
            w,
            "bank v1; K={}; N={}; C={}; split={}",
            self.window, self.n, self.classes, split
        )
        .map_err(io)?;
        for i in 1..=self.window {
            for id in 0..self.n {
                let row = epoch.checked_sub(i).and_then(|e| self.get(split, e, id));
                for c in 0..self.classes {
                    let v = row.map_or(f64::NAN, |r| r[c]);
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        Ok(())
    }
}

impl TeacherSource for TeacherBank {
    fn record(&mut self, split: SplitKind, epoch: usize, id: usize, probs: &[f64]) -> Result<()> {
        if probs.len() != self.classes {
            return Err(Error::Shape {
                op: "record",
                lhs: vec![probs.len()],
                rhs: vec![self.classes],
            });
        }
        if id >= self.n {
            return Err(Error::invalid(format!("example id {id} out of range for {} examples", self.n)));
        }
        check_probabilities(probs, &format!("probabilities for example {id}"))?;
        let idx = self.slot_index(epoch);
        let c = self.classes;
        let slot = &mut self.slots[split.slot()][idx];
        match slot.epoch {
            Some(e) if e == epoch => {}
            Some(e) if e > epoch => {
                return Err(Error::invalid(format!(
                    "epoch {epoch} is older than the {split} slot it maps to (epoch {e})"
                )))
            }
            _ => slot.open(epoch),
        }
        slot.data[id * c..(id + 1) * c].copy_from_slice(probs);
        slot.present[id] = true;
        Ok(())
    }

    /// Arithmetic mean of the stored vectors from epochs `epoch−1 … epoch−K`.
    fn vote(&self, split: SplitKind, epoch: usize, ids: &[usize]) -> Result<Tensor> {
        let c = self.classes;
        let mut out = vec![0.0; ids.len() * c];
        for i in 1..=self.window {
            let Some(e) = epoch.checked_sub(i) else {
                return Err(Error::MissingTeacher(format!(
                    "{split} teacher for epoch {epoch} needs epoch -{}",
                    i - epoch
                )));
            };
            for (row, &id) in out.chunks_mut(c).zip(ids) {
                let stored = self.get(split, e, id).ok_or_else(|| {
                    Error::MissingTeacher(format!("{split} slot for epoch {e} has no entry for example {id}"))
                })?;
                if i == 1 {
                    row.copy_from_slice(stored);
                } else {
                    row.iter_mut().zip(stored).for_each(|(o, s)| *o += s);
                }
            }
        }
        if self.window > 1 {
            let k = self.window as f64;
            out.iter_mut().for_each(|v| *v /= k);
        }
        Tensor::matrix(ids.len(), c, out)
    }
}

/// Previous-epoch teacher only, kept in two plain buffers per split.
#[derive(Clone, Debug)]
pub struct SingleTeacher {
    classes: usize,
    /// `[split] = (previous, current)`
    buffers: [(Slot, Slot); 2],
}

impl SingleTeacher {
    pub fn new(n: usize, classes: usize) -> Result<Self> {
        if n == 0 || classes < 2 {
            return Err(Error::invalid("single teacher needs N ≥ 1 and C ≥ 2"));
        }
        let pair = || (Slot::new(n, classes), Slot::new(n, classes));
        Ok(Self {
            classes,
            buffers: [pair(), pair()],
        })
    }
}

impl TeacherSource for SingleTeacher {
    fn record(&mut self, split: SplitKind, epoch: usize, id: usize, probs: &[f64]) -> Result<()> {
        if probs.len() != self.classes {
            return Err(Error::Shape {
                op: "record",
                lhs: vec![probs.len()],
                rhs: vec![self.classes],
            });
        }
        check_probabilities(probs, &format!("probabilities for example {id}"))?;
        let (prev, cur) = &mut self.buffers[split.slot()];
        if cur.epoch != Some(epoch) {
            if cur.epoch.is_some_and(|e| e + 1 == epoch) {
                std::mem::swap(prev, cur);
            } else {
                prev.epoch = None;
            }
            cur.open(epoch);
        }
        let c = self.classes;
        cur.data[id * c..(id + 1) * c].copy_from_slice(probs);
        cur.present[id] = true;
        Ok(())
    }

    fn vote(&self, split: SplitKind, epoch: usize, ids: &[usize]) -> Result<Tensor> {
        let (prev, cur) = &self.buffers[split.slot()];
        let want = epoch.checked_sub(1);
        let slot = [prev, cur]
            .into_iter()
            .find(|s| s.epoch.is_some() && s.epoch == want)
            .ok_or_else(|| Error::MissingTeacher(format!("{split} teacher for epoch {epoch} is not stored")))?;
        let c = self.classes;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if !slot.present[id] {
                return Err(Error::MissingTeacher(format!("{split} teacher has no entry for example {id}")));
            }
            out.extend_from_slice(&slot.data[id * c..(id + 1) * c]);
        }
        Tensor::matrix(ids.len(), c, out)
    }
}
