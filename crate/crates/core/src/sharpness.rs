//! Curvature of the validation loss with respect to α.
//!
//! Everything here works through [`AlphaObjective`], so the same estimators
//! run against the supernet and against closed-form quadratics in tests.

use serde::{Deserialize, Serialize};

use crate::diffcore::{derive_seed, RngState, Tape, Tensor};
use crate::searchspace::{GradMode, Supernet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SharpnessConfig {
    pub rho: f64,
    /// Relative finite-difference step for Hessian-vector products.
    pub eps: f64,
    pub max_steps: usize,
    pub tol: f64,
    /// Measure every `every` epochs; 0 disables measurement.
    pub every: usize,
    pub probe_size: usize,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            eps: 1e-3,
            max_steps: 50,
            tol: 1e-3,
            every: 1,
            probe_size: 256,
        }
    }
}

impl SharpnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.eps > 0.0) || !(self.tol > 0.0) {
            return Err(Error::invalid("sharpness: rho, eps and tol must be positive"));
        }
        if self.max_steps == 0 || self.probe_size == 0 {
            return Err(Error::invalid("sharpness: max_steps and probe_size must be positive"));
        }
        Ok(())
    }
}

/// A scalar loss over a flat α vector with its gradient.
pub trait AlphaObjective {
    fn alpha(&self) -> Vec<f64>;
    fn set_alpha(&mut self, alpha: &[f64]);
    fn loss_and_grad(&mut self) -> Result<(f64, Vec<f64>)>;
}

/// `L(α) = ½ αᵀ A α` for a dense symmetric `A`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub a: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

impl Quadratic {
    pub fn diagonal(diag: &[f64], alpha: Vec<f64>) -> Self {
        let n = diag.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self { a, alpha }
    }
}

impl AlphaObjective for Quadratic {
    fn alpha(&self) -> Vec<f64> {
        self.alpha.clone()
    }

    fn set_alpha(&mut self, alpha: &[f64]) {
        self.alpha.copy_from_slice(alpha);
    }

    fn loss_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        let g: Vec<f64> = self
            .a
            .iter()
            .map(|row| row.iter().zip(&self.alpha).map(|(a, x)| a * x).sum())
            .collect();
        let loss = 0.5 * g.iter().zip(&self.alpha).map(|(g, x)| g * x).sum::<f64>();
        Ok((loss, g))
    }
}

/// Plain cross-entropy of the supernet on a fixed batch, as a function of α.
pub struct SupernetProbe<'a> {
    pub net: &'a mut Supernet,
    pub x: &'a Tensor,
    pub labels: &'a [usize],
}

impl AlphaObjective for SupernetProbe<'_> {
    fn alpha(&self) -> Vec<f64> {
        self.net.params().get(self.net.alpha_id()).data().to_vec()
    }

    fn set_alpha(&mut self, alpha: &[f64]) {
        let id = self.net.alpha_id();
        self.net.params_mut().get_mut(id).data_mut().copy_from_slice(alpha);
    }

    fn loss_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let logits = self.net.forward(&mut tape, self.x, GradMode::Alpha)?;
        let loss = tape.cross_entropy(logits, self.labels)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let g = grads.get_or_zeros(self.net.alpha_id(), self.net.params());
        Ok((value, g.into_data()))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn alpha_grad_norm(obj: &mut dyn AlphaObjective) -> Result<f64> {
    let (loss, g) = obj.loss_and_grad()?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("probe loss".into()));
    }
    Ok(norm(&g))
}

/// `R = ρ · ‖∇_α L‖`.
pub fn sharpness_estimate(grad_norm: f64, rho: f64) -> f64 {
    rho * grad_norm
}

/// Central-difference Hessian-vector product along `v`, with step
/// `δ = eps·(1 + ‖α‖)` along `v/‖v‖`. α is restored bit-for-bit afterwards.
pub fn hvp(obj: &mut dyn AlphaObjective, v: &[f64], eps: f64) -> Result<Vec<f64>> {
    let vn = norm(v);
    if !(vn > 0.0) || !vn.is_finite() {
        return Err(Error::invalid("hvp direction must be non-zero and finite"));
    }
    let alpha = obj.alpha();
    if alpha.len() != v.len() {
        return Err(Error::Shape {
            op: "hvp",
            lhs: vec![alpha.len()],
            rhs: vec![v.len()],
        });
    }
    let delta = eps * (1.0 + norm(&alpha));
    let mut eval = |sign: f64| -> Result<Vec<f64>> {
        let shifted: Vec<f64> = alpha.iter().zip(v).map(|(a, d)| a + sign * delta * d / vn).collect();
        obj.set_alpha(&shifted);
        let (loss, g) = obj.loss_and_grad()?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("probe loss during hvp".into()));
        }
        Ok(g)
    };
    let plus = eval(1.0);
    let minus = plus.as_ref().ok().map(|_| eval(-1.0));
    obj.set_alpha(&alpha);
    let plus = plus?;
    let minus = minus.expect("evaluated after a successful plus step")?;
    Ok(plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / (2.0 * delta) * vn)
        .collect())
}

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>>;
}

/// Dense matrix as an operator; rows are the outer index.
pub struct DenseOperator<'a>(pub &'a [Vec<f64>]);

impl LinearOperator for DenseOperator<'_> {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.iter().map(|r| r.iter().zip(v).map(|(a, x)| a * x).sum()).collect())
    }
}

/// The Hessian of an [`AlphaObjective`], applied through [`hvp`].
pub struct HessianOperator<'a> {
    pub obj: &'a mut dyn AlphaObjective,
    pub eps: f64,
}

impl LinearOperator for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.obj.alpha().len()
    }

    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        hvp(self.obj, v, self.eps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerResult {
    /// Rayleigh quotient of the final iterate, sign preserved.
    pub lambda_max: f64,
    /// `‖Hv − λv‖ / ‖v‖`.
    pub residual: f64,
    pub converged: bool,
    pub steps: usize,
}

/// Power iteration for the largest-magnitude eigenvalue.
///
/// Converged once the relative change in the Rayleigh quotient and the
/// relative residual both fall to `tol`. Running out of steps is not an
/// error; the last estimate is returned with `converged = false`.
pub fn power_iteration(
    op: &mut dyn LinearOperator,
    start: &[f64],
    max_steps: usize,
    tol: f64,
) -> Result<PowerResult> {
    if op.dim() == 0 || start.len() != op.dim() {
        return Err(Error::Shape {
            op: "power_iteration",
            lhs: vec![start.len()],
            rhs: vec![op.dim()],
        });
    }
    let n0 = norm(start);
    if !(n0 > 0.0) {
        return Err(Error::invalid("power iteration start vector is zero"));
    }
    let mut v: Vec<f64> = start.iter().map(|x| x / n0).collect();
    let mut prev: Option<f64> = None;
    let mut result = PowerResult {
        lambda_max: 0.0,
        residual: f64::INFINITY,
        converged: false,
        steps: 0,
    };
    for step in 1..=max_steps {
        let w = op.apply(&v)?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator output in power iteration".into()));
        }
        let lambda: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual = norm(&w.iter().zip(&v).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        let scale = lambda.abs().max(f64::MIN_POSITIVE);
        let settled = prev.is_some_and(|p| (lambda - p).abs() <= tol * scale);
        result = PowerResult {
            lambda_max: lambda,
            residual,
            converged: false,
            steps: step,
        };
        let wn = norm(&w);
        if wn == 0.0 {
            // v is in the null space and every eigenvalue seen is zero
            result.converged = true;
            break;
        }
        if settled && residual <= tol * scale {
            result.converged = true;
            break;
        }
        prev = Some(lambda);
        v = w.iter().map(|x| x / wn).collect();
    }
    Ok(result)
}

/// Dominant eigenvalue of the Hessian of `obj`, from a start vector drawn
/// from `seed`.
pub fn dominant_eigenvalue(obj: &mut dyn AlphaObjective, cfg: &SharpnessConfig, seed: u64) -> Result<PowerResult> {
    let dim = obj.alpha().len();
    let mut rng = RngState::new(derive_seed(seed, 0x4549_4745));
    let start: Vec<f64> = (0..dim).map(|_| rng.gen_normal(0.0, 1.0)).collect();
    let mut op = HessianOperator { obj, eps: cfg.eps };
    power_iteration(&mut op, &start, cfg.max_steps, cfg.tol)
}

/// Hessian assembled column by column from [`hvp`] on the basis vectors.
pub fn dense_hessian(obj: &mut dyn AlphaObjective, eps: f64) -> Result<Vec<Vec<f64>>> {
    let n = obj.alpha().len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(hvp(obj, &e, eps)?);
    }
    Ok((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub grad_norm: f64,
    pub sharpness_r: f64,
    pub lambda_max: f64,
    pub residual: f64,
    pub converged: bool,
    /// Probe loss at this epoch minus the next measurement's.
    pub loss_delta: Option<f64>,
    pub probe_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SharpnessTrace {
    pub rows: Vec<TraceRow>,
}

impl SharpnessTrace {
    /// Appends `row` and fills in the previous row's `loss_delta`.
    pub fn push(&mut self, row: TraceRow) {
        if let Some(last) = self.rows.last_mut() {
            last.loss_delta = Some(last.probe_loss - row.probe_loss);
        }
        self.rows.push(row);
    }

    pub fn final_lambda_max(&self) -> Option<f64> {
        self.rows.last().map(|r| r.lambda_max)
    }

    /// `epoch,grad_norm,sharpness_R,lambda_max,residual,converged,loss_delta`;
    /// a missing delta is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,grad_norm,sharpness_R,lambda_max,residual,converged,loss_delta\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                r.grad_norm,
                r.sharpness_r,
                r.lambda_max,
                r.residual,
                r.converged,
                r.loss_delta.map(|d| d.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    /// Inverse of [`SharpnessTrace::to_csv`]; `probe_loss` is not stored and
    /// reads back as NaN.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let expected = ["epoch", "grad_norm", "sharpness_R", "lambda_max", "residual", "converged", "loss_delta"];
        if rdr.headers()?.iter().ne(expected) {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |col: usize| Error::Parse {
                line: i + 2,
                column: col + 1,
                message: format!("invalid `{}`", expected[col]),
            };
            let f = |col: usize| -> Result<f64> { rec.get(col).and_then(|s| s.parse().ok()).ok_or_else(|| bad(col)) };
            rows.push(TraceRow {
                epoch: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad(0))?,
                grad_norm: f(1)?,
                sharpness_r: f(2)?,
                lambda_max: f(3)?,
                residual: f(4)?,
                converged: rec.get(5).and_then(|s| s.parse().ok()).ok_or_else(|| bad(5))?,
                loss_delta: match rec.get(6) {
                    Some("") | None => None,
                    Some(_) => Some(f(6)?),
                },
                probe_loss: f64::NAN,
            });
        }
        Ok(Self { rows })
    }
}

/// One trace row at the current α: gradient norm, sharpness, and the
/// dominant Hessian eigenvalue. α is unchanged afterwards.
pub fn measure(obj: &mut dyn AlphaObjective, cfg: &SharpnessConfig, epoch: usize, seed: u64) -> Result<TraceRow> {
    let (probe_loss, g) = obj.loss_and_grad()?;
    if !probe_loss.is_finite() {
        return Err(Error::NonFinite(format!("probe loss at epoch {epoch}")));
    }
    let grad_norm = norm(&g);
    let eig = dominant_eigenvalue(obj, cfg, seed)?;
    Ok(TraceRow {
        epoch,
        grad_norm,
        sharpness_r: sharpness_estimate(grad_norm, cfg.rho),
        lambda_max: eig.lambda_max,
        residual: eig.residual,
        converged: eig.converged,
        loss_delta: None,
        probe_loss,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossDeltaReport {
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    /// `None` when either series is constant.
    pub spearman: Option<f64>,
}

/// Observed loss drops between consecutive rows against the first-order
/// prediction `(lr/ρ²)·R²`.
pub fn loss_delta_proxy(trace: &SharpnessTrace, lr: f64, rho: f64) -> Result<LossDeltaReport> {
    if trace.rows.len() < 3 {
        return Err(Error::invalid(format!(
            "loss delta proxy needs at least 3 trace rows, got {}",
            trace.rows.len()
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::invalid("rho must be positive"));
    }
    let pairs = &trace.rows[..trace.rows.len() - 1];
    let observed: Vec<f64> = trace.rows.windows(2).map(|w| w[0].probe_loss - w[1].probe_loss).collect();
    let predicted: Vec<f64> = pairs.iter().map(|r| lr / (rho * rho) * r.sharpness_r * r.sharpness_r).collect();
    let spearman = spearman(&observed, &predicted);
    Ok(LossDeltaReport {
        observed,
        predicted,
        spearman,
    })
}

/// Average ranks, 1-based.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation of the ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
