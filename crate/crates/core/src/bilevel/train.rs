use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, Sgd, SgdConfig};
use super::search::check_split;
use crate::datasets::{epoch_batches, Dataset, Split};
use crate::diffcore::{derive_seed, Tape, Tensor};
use crate::searchspace::{build_discrete_net, Genotype, GradMode, NetShape};
use crate::{Error, Result};

/// Budget for training one discrete architecture from scratch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscreteTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub cells: usize,
    pub width: usize,
    pub sgd: SgdConfig,
}

impl Default for DiscreteTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            cells: 2,
            width: 16,
            sgd: SgdConfig::default(),
        }
    }
}

impl DiscreteTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.cells == 0 || self.width == 0 {
            return Err(Error::invalid("train: batch_size, cells and width must be positive"));
        }
        self.sgd.validate()
    }
}

/// Fraction of rows whose argmax matches the label (ties to the lower class).
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.last_dim();
    let hits = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (k, &v)| if v > row[b] { k } else { b });
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Trains a fresh network for `g` on the train split and returns its
/// accuracy on the valid split.
pub fn train_discrete(g: &Genotype, data: &Dataset, split: &Split, cfg: &DiscreteTrainConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    check_split(data, split)?;
    let shape = NetShape {
        input_dim: data.dim(),
        classes: data.classes(),
        num_cells: cfg.cells,
        feature_dim: cfg.width,
    };
    let mut net = build_discrete_net(g, shape, seed)?;
    let ids = net.weight_ids();
    let mut sgd = Sgd::new(cfg.sgd, &ids, net.params());
    let stream = derive_seed(seed, 0x4556_414c);
    for e in 1..=cfg.epochs {
        let lr = cosine_lr(cfg.sgd.lr, e - 1, cfg.epochs);
        for (b, batch) in epoch_batches(&split.train, cfg.batch_size, stream, e)?.iter().enumerate() {
            let (x, y) = data.batch(batch);
            let mut tape = Tape::new();
            let logits = net.forward(&mut tape, &x, GradMode::Weights)?;
            let loss = tape.cross_entropy(logits, &y)?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::NonFinite(format!("training `{}` at epoch {e}, batch {b}", g.to_text().trim_end())));
            }
            let grads = tape.backward(loss)?;
            sgd.step(net.params_mut(), &grads, lr);
        }
    }
    let (x, y) = data.batch(&split.valid);
    Ok(accuracy(&net.logits(&x)?, &y))
}
