//! Alternating first-order optimization of α and w.
//!
//! Epochs are numbered from 1. Epochs `1..=ξ` are warm-up (λ treated as 0)
//! and epochs `ξ+1..=E` add the distillation term against the mean of the
//! stored outputs from the previous `K` epochs. Each iteration takes one
//! Adam step on α with a valid batch, then one SGD step on w with a train
//! batch; the shorter split's batches wrap around.

mod config;
mod optim;
mod reference;
mod search;
mod train;

pub use config::{ArchConfig, SearchConfig, TeacherCapture};
pub use optim::{cosine_lr, Adam, AdamConfig, Sgd, SgdConfig};
pub use reference::{reference_darts, ReferenceEpoch};
pub use search::{epoch_log_csv, run_search, EpochLog, Phase, Search, SearchOutcome, EPOCH_LOG_HEADER};
pub use train::{accuracy, train_discrete, DiscreteTrainConfig};

#[cfg(test)]
mod tests;
