use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::{SearchConfig, TeacherCapture};
use super::optim::{cosine_lr, Adam, Sgd};
use crate::datasets::{epoch_batches, Dataset, Split};
use crate::diffcore::{derive_seed, softmax_row, RngState, Tape, Tensor};
use crate::distill::{distill_loss, SplitKind, TeacherBank, TeacherSource};
use crate::searchspace::{discretize, ArchitectureParameters, Genotype, GradMode, Supernet};
use crate::sharpness::{measure, SharpnessConfig, SharpnessTrace, SupernetProbe};
use crate::{Error, Result};

pub(crate) const TRAIN_STREAM: u64 = 0x5452_4149;
pub(crate) const VALID_STREAM: u64 = 0x5641_4c49;
const PROBE_STREAM: u64 = 0x5052_4f42;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Sd,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Warmup => "warmup",
            Phase::Sd => "sd",
        })
    }
}

/// Per-epoch means over the epoch's iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Cross-entropy part only.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub distill_train: f64,
    pub distill_valid: f64,
    pub alpha_grad_norm: f64,
    pub w_grad_norm: f64,
    pub lr_w: f64,
    pub lr_alpha: f64,
    pub wall_ms: u64,
}

pub const EPOCH_LOG_HEADER: &str =
    "epoch,phase,train_loss,valid_loss,distill_train,distill_valid,alpha_grad_norm,w_grad_norm,lr_w,lr_alpha,wall_ms";

/// CSV text of `logs`. With `zero_wall` the timing column is written as 0
/// so that reruns compare byte for byte.
pub fn epoch_log_csv(logs: &[EpochLog], zero_wall: bool) -> String {
    let mut out = format!("{EPOCH_LOG_HEADER}\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            l.epoch,
            l.phase,
            l.train_loss,
            l.valid_loss,
            l.distill_train,
            l.distill_valid,
            l.alpha_grad_norm,
            l.w_grad_norm,
            l.lr_w,
            l.lr_alpha,
            if zero_wall { 0 } else { l.wall_ms }
        ));
    }
    out
}

struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn millis(&self) -> u64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_millis() as u64
        }
        #[cfg(target_arch = "wasm32")]
        {
            0
        }
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.last_dim();
    let mut data = logits.data().to_vec();
    data.chunks_mut(c).for_each(softmax_row);
    Tensor::new(logits.shape().to_vec(), data).expect("shape preserved")
}

pub(crate) fn check_split(data: &Dataset, split: &Split) -> Result<()> {
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(Error::invalid("both train and valid splits must be non-empty"));
    }
    if let Some(&bad) = split.train.iter().chain(&split.valid).find(|&&i| i >= data.len()) {
        return Err(Error::invalid(format!("split refers to example {bad} beyond {}", data.len())));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub genotype: Genotype,
    pub alpha: ArchitectureParameters,
    pub logs: Vec<EpochLog>,
    pub trace: SharpnessTrace,
    pub net: Supernet,
}

/// A search in progress, advanced one epoch at a time.
pub struct Search<'d, T: TeacherSource> {
    cfg: SearchConfig,
    sharp: SharpnessConfig,
    data: &'d Dataset,
    split: &'d Split,
    net: Supernet,
    sgd: Sgd,
    adam: Adam,
    teacher: T,
    probe_x: Tensor,
    probe_labels: Vec<usize>,
    epoch: usize,
    logs: Vec<EpochLog>,
    trace: SharpnessTrace,
}

impl<'d> Search<'d, TeacherBank> {
    pub fn with_bank(cfg: &SearchConfig, sharp: &SharpnessConfig, data: &'d Dataset, split: &'d Split) -> Result<Self> {
        let bank = TeacherBank::new(cfg.window, data.len(), data.classes())?;
        Self::new(cfg, sharp, data, split, bank)
    }
}

impl<'d, T: TeacherSource> Search<'d, T> {
    pub fn new(
        cfg: &SearchConfig,
        sharp: &SharpnessConfig,
        data: &'d Dataset,
        split: &'d Split,
        teacher: T,
    ) -> Result<Self> {
        cfg.validate()?;
        sharp.validate()?;
        check_split(data, split)?;
        let space = cfg.arch.space()?;
        let net = Supernet::new(space, cfg.arch.shape(data.dim(), data.classes()), cfg.seed)?;
        let sgd = Sgd::new(cfg.sgd, net.weight_ids(), net.params());
        let adam = Adam::new(cfg.adam, net.alpha_id(), net.params());

        let mut probe_ids = split.valid.clone();
        RngState::new(derive_seed(cfg.seed, PROBE_STREAM)).shuffle(&mut probe_ids);
        probe_ids.truncate(sharp.probe_size);
        probe_ids.sort_unstable();
        let (probe_x, probe_labels) = data.batch(&probe_ids);

        Ok(Self {
            cfg: cfg.clone(),
            sharp: *sharp,
            data,
            split,
            net,
            sgd,
            adam,
            teacher,
            probe_x,
            probe_labels,
            epoch: 0,
            logs: Vec::new(),
            trace: SharpnessTrace::default(),
        })
    }

    pub fn net(&self) -> &Supernet {
        &self.net
    }

    pub fn teacher(&self) -> &T {
        &self.teacher
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn logs(&self) -> &[EpochLog] {
        &self.logs
    }

    pub fn trace(&self) -> &SharpnessTrace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Runs the next epoch: warm-up while `epoch ≤ ξ`, distillation after.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        if self.is_done() {
            return Err(Error::invalid(format!("search already ran all {} epochs", self.cfg.epochs)));
        }
        let clock = Stopwatch::start();
        let e = self.epoch + 1;
        let cfg = &self.cfg;
        let warm = e <= cfg.warmup_epochs;
        let lambda = if warm { 0.0 } else { cfg.lambda };
        // the last K warm-up epochs fill the window before distillation starts
        let record = cfg.lambda > 0.0 && e + cfg.window > cfg.warmup_epochs && e < cfg.epochs;
        let streaming = record && cfg.teacher_capture == TeacherCapture::Streaming;
        let alpha_step = !(warm && cfg.warmup_freeze_alpha);
        let lr_w = cosine_lr(cfg.sgd.lr, e - 1, cfg.epochs);

        let train_batches = epoch_batches(&self.split.train, cfg.batch_size, derive_seed(cfg.seed, TRAIN_STREAM), e)?;
        let valid_batches = epoch_batches(&self.split.valid, cfg.batch_size, derive_seed(cfg.seed, VALID_STREAM), e)?;
        let iters = train_batches.len().max(valid_batches.len());

        let mut sums = [0.0f64; 6];
        for i in 0..iters {
            let v_ids = &valid_batches[i % valid_batches.len()];
            let t_ids = &train_batches[i % train_batches.len()];

            // architecture step on the valid batch, w fixed
            let (x, y) = self.data.batch(v_ids);
            let mut tape = Tape::new();
            let mode = if alpha_step { GradMode::Alpha } else { GradMode::None };
            let logits = self.net.forward(&mut tape, &x, mode)?;
            let teacher = if lambda > 0.0 {
                Some(self.teacher.vote(SplitKind::Valid, e, v_ids)?)
            } else {
                None
            };
            let terms = distill_loss(&mut tape, logits, &y, teacher.as_ref(), lambda, cfg.metric)?;
            let loss = tape.value(terms.total).item();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("valid loss at epoch {e}, batch {i}")));
            }
            sums[1] += tape.value(terms.ce).item();
            sums[3] += terms.h.map_or(0.0, |h| tape.value(h).item());
            if alpha_step {
                let grads = tape.backward(terms.total)?;
                sums[4] += self.adam.step(self.net.params_mut(), &grads);
            }
            if streaming {
                let probs = softmax_rows(tape.value(logits));
                self.teacher.record_batch(SplitKind::Valid, e, v_ids, &probs)?;
            }

            // weight step on the train batch, α fixed
            let (x, y) = self.data.batch(t_ids);
            let mut tape = Tape::new();
            let logits = self.net.forward(&mut tape, &x, GradMode::Weights)?;
            let teacher = if lambda > 0.0 {
                Some(self.teacher.vote(SplitKind::Train, e, t_ids)?)
            } else {
                None
            };
            let terms = distill_loss(&mut tape, logits, &y, teacher.as_ref(), lambda, cfg.metric)?;
            let loss = tape.value(terms.total).item();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("train loss at epoch {e}, batch {i}")));
            }
            sums[0] += tape.value(terms.ce).item();
            sums[2] += terms.h.map_or(0.0, |h| tape.value(h).item());
            let grads = tape.backward(terms.total)?;
            sums[5] += self.sgd.step(self.net.params_mut(), &grads, lr_w);
            if streaming {
                let probs = softmax_rows(tape.value(logits));
                self.teacher.record_batch(SplitKind::Train, e, t_ids, &probs)?;
            }
        }

        if record && cfg.teacher_capture == TeacherCapture::EndOfEpoch {
            for (kind, ids) in [(SplitKind::Train, &self.split.train), (SplitKind::Valid, &self.split.valid)] {
                for chunk in ids.chunks(cfg.batch_size) {
                    let (x, _) = self.data.batch(chunk);
                    let probs = softmax_rows(&self.net.logits(&x)?);
                    self.teacher.record_batch(kind, e, chunk, &probs)?;
                }
            }
        }

        if self.sharp.every > 0 && e % self.sharp.every == 0 {
            let mut probe = SupernetProbe {
                net: &mut self.net,
                x: &self.probe_x,
                labels: &self.probe_labels,
            };
            let row = measure(&mut probe, &self.sharp, e, self.cfg.seed)?;
            self.trace.push(row);
        }

        let n = iters as f64;
        let log = EpochLog {
            epoch: e,
            phase: if warm { Phase::Warmup } else { Phase::Sd },
            train_loss: sums[0] / n,
            valid_loss: sums[1] / n,
            distill_train: sums[2] / n,
            distill_valid: sums[3] / n,
            alpha_grad_norm: sums[4] / n,
            w_grad_norm: sums[5] / n,
            lr_w,
            lr_alpha: if alpha_step { self.cfg.adam.lr } else { 0.0 },
            wall_ms: clock.millis(),
        };
        self.logs.push(log);
        self.epoch = e;
        Ok(log)
    }

    pub fn finish(self) -> Result<SearchOutcome> {
        let alpha = self.net.arch_params();
        let genotype = discretize(&alpha, self.net.space(), self.cfg.retain)?;
        Ok(SearchOutcome {
            genotype,
            alpha,
            logs: self.logs,
            trace: self.trace,
            net: self.net,
        })
    }
}

/// All `E` epochs with a [`TeacherBank`], then discretization.
pub fn run_search(cfg: &SearchConfig, sharp: &SharpnessConfig, data: &Dataset, split: &Split) -> Result<SearchOutcome> {
    let mut search = Search::with_bank(cfg, sharp, data, split)?;
    while !search.is_done() {
        search.run_epoch()?;
    }
    search.finish()
}
