//! Plain first-order DARTS written out directly, without banks, distillation
//! or the optimizer types. Used as the baseline that the search loop must
//! reproduce when `λ = 0`.

use std::f64::consts::PI;

use super::config::SearchConfig;
use super::search::{check_split, TRAIN_STREAM, VALID_STREAM};
use crate::datasets::{epoch_batches, Dataset, Split};
use crate::diffcore::{derive_seed, Tape};
use crate::searchspace::{GradMode, Supernet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceEpoch {
    pub train_loss: f64,
    pub valid_loss: f64,
}

/// Runs `epochs` epochs of alternating α (Adam) and w (SGD) steps on plain
/// cross-entropy. The learning-rate schedule spans `cfg.epochs`.
pub fn reference_darts(
    cfg: &SearchConfig,
    data: &Dataset,
    split: &Split,
    epochs: usize,
) -> Result<(Vec<ReferenceEpoch>, Supernet)> {
    cfg.validate()?;
    check_split(data, split)?;
    let mut net = Supernet::new(cfg.arch.space()?, cfg.arch.shape(data.dim(), data.classes()), cfg.seed)?;
    let alpha_id = net.alpha_id();
    let w_ids = net.weight_ids().to_vec();

    let mut velocity: Vec<Vec<f64>> = w_ids.iter().map(|&id| vec![0.0; net.params().get(id).len()]).collect();
    let alpha_len = net.params().get(alpha_id).len();
    let (mut m1, mut m2) = (vec![0.0; alpha_len], vec![0.0; alpha_len]);
    let mut t = 0i32;

    let mut out = Vec::with_capacity(epochs);
    for e in 1..=epochs {
        let lr = cfg.sgd.lr * 0.5 * (1.0 + (PI * ((e - 1) as f64 / cfg.epochs as f64)).cos());
        let tb = epoch_batches(&split.train, cfg.batch_size, derive_seed(cfg.seed, TRAIN_STREAM), e)?;
        let vb = epoch_batches(&split.valid, cfg.batch_size, derive_seed(cfg.seed, VALID_STREAM), e)?;
        let iters = tb.len().max(vb.len());
        let (mut train_sum, mut valid_sum) = (0.0, 0.0);
        for i in 0..iters {
            let (x, y) = data.batch(&vb[i % vb.len()]);
            let mut tape = Tape::new();
            let logits = net.forward(&mut tape, &x, GradMode::Alpha)?;
            let loss = tape.cross_entropy(logits, &y)?;
            valid_sum += tape.value(loss).item();
            let g = tape.backward(loss)?.get_or_zeros(alpha_id, net.params());
            t += 1;
            let a = &cfg.adam;
            let alpha = net.params_mut().get_mut(alpha_id).data_mut();
            for k in 0..alpha_len {
                let d = g.data()[k] + a.weight_decay * alpha[k];
                m1[k] = a.beta1 * m1[k] + (1.0 - a.beta1) * d;
                m2[k] = a.beta2 * m2[k] + (1.0 - a.beta2) * d * d;
                let mh = m1[k] / (1.0 - a.beta1.powi(t));
                let vh = m2[k] / (1.0 - a.beta2.powi(t));
                alpha[k] -= a.lr * mh / (vh.sqrt() + a.eps);
            }

            let (x, y) = data.batch(&tb[i % tb.len()]);
            let mut tape = Tape::new();
            let logits = net.forward(&mut tape, &x, GradMode::Weights)?;
            let loss = tape.cross_entropy(logits, &y)?;
            train_sum += tape.value(loss).item();
            let grads = tape.backward(loss)?;
            let gnorm = grads.norm(&w_ids);
            let s = &cfg.sgd;
            let clip = if s.grad_clip > 0.0 && gnorm > s.grad_clip {
                s.grad_clip / (gnorm + 1e-6)
            } else {
                1.0
            };
            for (j, &id) in w_ids.iter().enumerate() {
                let Some(g) = grads.get(id) else { continue };
                let w = net.params_mut().get_mut(id).data_mut();
                for k in 0..w.len() {
                    let d = g.data()[k] * clip + s.weight_decay * w[k];
                    velocity[j][k] = s.momentum * velocity[j][k] + d;
                    w[k] -= lr * velocity[j][k];
                }
            }
        }
        let n = iters as f64;
        let row = ReferenceEpoch {
            train_loss: train_sum / n,
            valid_loss: valid_sum / n,
        };
        if !(row.train_loss.is_finite() && row.valid_loss.is_finite()) {
            return Err(Error::NonFinite(format!("reference loss at epoch {e}")));
        }
        out.push(row);
    }
    Ok((out, net))
}
