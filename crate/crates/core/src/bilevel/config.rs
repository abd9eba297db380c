use serde::{Deserialize, Serialize};

use super::optim::{AdamConfig, SgdConfig};
use crate::distill::Metric;
use crate::searchspace::{CellTopology, NetShape, OperationKind, RetainPolicy, SearchSpace};
use crate::{Error, Result};

/// When teacher probabilities for an epoch are taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherCapture {
    /// As each example is forward-passed during the epoch.
    #[default]
    Streaming,
    /// One extra full pass over both splits after the epoch's last step.
    EndOfEpoch,
}

/// Supernet and discrete-network geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub nodes: usize,
    pub cells: usize,
    pub width: usize,
    pub ops: Vec<OperationKind>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            nodes: 2,
            cells: 2,
            width: 16,
            ops: OperationKind::ALL.to_vec(),
        }
    }
}

impl ArchConfig {
    pub fn space(&self) -> Result<SearchSpace> {
        SearchSpace::new(CellTopology::dense(self.nodes)?, self.ops.clone())
    }

    pub fn shape(&self, input_dim: usize, classes: usize) -> NetShape {
        NetShape {
            input_dim,
            classes,
            num_cells: self.cells,
            feature_dim: self.width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub window: usize,
    pub lambda: f64,
    pub batch_size: usize,
    pub metric: Metric,
    pub retain: RetainPolicy,
    pub seed: u64,
    pub teacher_capture: TeacherCapture,
    pub warmup_freeze_alpha: bool,
    pub arch: ArchConfig,
    pub sgd: SgdConfig,
    pub adam: AdamConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            warmup_epochs: 25,
            window: 2,
            lambda: 1.0,
            batch_size: 64,
            metric: Metric::Kl,
            retain: RetainPolicy::All,
            seed: 0,
            teacher_capture: TeacherCapture::Streaming,
            warmup_freeze_alpha: false,
            arch: ArchConfig::default(),
            sgd: SgdConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl SearchConfig {
    /// Messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::invalid(format!("{field}: {msg}")));
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.epochs {
            return fail(
                "warmup_epochs",
                format!("need 0 < warmup_epochs < epochs, got {} and {}", self.warmup_epochs, self.epochs),
            );
        }
        if self.window == 0 {
            return fail("window", "must be at least 1".into());
        }
        if self.warmup_epochs < self.window {
            return fail(
                "window",
                format!(
                    "warm-up of {} epochs cannot fill a window of {}",
                    self.warmup_epochs, self.window
                ),
            );
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda", format!("must be finite and non-negative, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if self.arch.cells == 0 || self.arch.width == 0 {
            return fail("arch", "cells and width must be positive".into());
        }
        let space = self.arch.space().map_err(|e| Error::invalid(format!("arch: {e}")))?;
        self.retain
            .validate(space.topology())
            .map_err(|e| Error::invalid(format!("retain: {e}")))?;
        self.sgd.validate().map_err(|e| Error::invalid(format!("sgd: {e}")))?;
        self.adam.validate().map_err(|e| Error::invalid(format!("adam: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SearchConfig::default();
        c.validate().unwrap();
        assert_eq!((c.epochs, c.warmup_epochs, c.window, c.batch_size), (50, 25, 2, 64));
        assert_eq!(c.lambda, 1.0);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            SearchConfig { warmup_epochs: 50, ..Default::default() },
            SearchConfig { warmup_epochs: 0, ..Default::default() },
            SearchConfig { window: 0, ..Default::default() },
            SearchConfig { warmup_epochs: 3, window: 4, ..Default::default() },
            SearchConfig { lambda: -0.5, ..Default::default() },
            SearchConfig { batch_size: 0, ..Default::default() },
            SearchConfig { retain: RetainPolicy::Top(3), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn field_named_in_message() {
        let c = SearchConfig { warmup_epochs: 60, ..Default::default() };
        assert!(c.validate().unwrap_err().to_string().contains("warmup_epochs"));
    }

    #[test]
    fn json_round_trip() {
        let c = SearchConfig { metric: Metric::Cd, retain: RetainPolicy::Top(1), ..Default::default() };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<SearchConfig>(&text).unwrap(), c);
        assert!(serde_json::from_str::<SearchConfig>(r#"{"epoch": 3}"#).is_err());
    }
}
