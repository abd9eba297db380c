use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdnas_core::benchmark::Fingerprint;
use sdnas_core::bilevel::{DiscreteTrainConfig, SearchConfig};
use sdnas_core::datasets::{generate, split, Dataset, DatasetSpec, Split};
use sdnas_core::sharpness::SharpnessConfig;

use crate::CliError;

/// One experiment description. Every field has a default, so an empty file
/// is a complete config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_id: String,
    pub out: PathBuf,
    /// Seeds the dataset and its split; independent of the search seed.
    pub data_seed: u64,
    pub valid_fraction: f64,
    pub dataset: DatasetSpec,
    pub search: SearchConfig,
    pub sharpness: SharpnessConfig,
    pub train: DiscreteTrainConfig,
    pub oracle: OracleConfig,
    pub compare: CompareConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            out: PathBuf::from("runs"),
            data_seed: 0,
            valid_fraction: 0.5,
            dataset: DatasetSpec::default(),
            search: SearchConfig::default(),
            sharpness: SharpnessConfig::default(),
            train: DiscreteTrainConfig::default(),
            oracle: OracleConfig::default(),
            compare: CompareConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub eval_seeds: usize,
    pub base_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            eval_seeds: 3,
            base_seed: 0,
        }
    }
}

/// The distillation method compared against the λ=0 baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub window: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            lambda: 1.0,
            window: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Warmup,
    Window,
    Lambda,
}

impl Axis {
    /// `base` with this axis set to `v`, or a message when `v` cannot be
    /// represented on the axis.
    pub fn apply(self, base: &SearchConfig, v: f64) -> Result<SearchConfig, String> {
        let mut cfg = base.clone();
        let count = || {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(format!("{self:?} value {v} is not a whole number"))
            }
        };
        match self {
            Axis::Warmup => cfg.warmup_epochs = count()?,
            Axis::Window => cfg.window = count()?,
            Axis::Lambda => cfg.lambda = v,
        }
        Ok(cfg)
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Warmup => "warmup",
            Axis::Window => "window",
            Axis::Lambda => "lambda",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: Axis::Window,
            values: vec![1.0, 2.0, 4.0, 8.0],
            seeds: vec![0, 1, 2],
        }
    }
}

/// A completed run's record; `--config` accepts it in place of a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub run_id: String,
    pub seed: u64,
    pub deterministic: bool,
    pub wall_ms: u64,
    pub genotype: String,
    pub config: RunConfig,
}

impl RunConfig {
    /// Reads TOML, or a run manifest when the file is JSON.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            m.config
        } else {
            Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return bad("run_id", format!("`{}` is not a usable directory name", self.run_id));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return bad("valid_fraction", format!("must lie in (0, 1), got {}", self.valid_fraction));
        }
        if self.dataset.n < 4 || !(self.dataset.noise >= 0.0 && self.dataset.noise.is_finite()) {
            return bad("dataset", format!("need n >= 4 and finite noise >= 0, got {:?}", self.dataset));
        }
        if self.dataset.class_count() < 2 {
            return bad("dataset.classes", "need at least 2 classes".into());
        }
        self.search.validate().map_err(|e| CliError::Config(format!("search.{}", strip(e))))?;
        self.sharpness.validate().map_err(|e| CliError::Config(format!("sharpness: {}", strip(e))))?;
        self.train.validate().map_err(|e| CliError::Config(format!("train: {}", strip(e))))?;
        if self.oracle.eval_seeds == 0 {
            return bad("oracle.eval_seeds", "must be at least 1".into());
        }
        if self.compare.seeds.is_empty() {
            return bad("compare.seeds", "must not be empty".into());
        }
        let sd = SearchConfig {
            lambda: self.compare.lambda,
            window: self.compare.window,
            ..self.search.clone()
        };
        sd.validate().map_err(|e| CliError::Config(format!("compare.{}", strip(e))))?;
        Ok(())
    }

    pub fn task(&self) -> Result<(Dataset, Split), CliError> {
        let ds = generate(&self.dataset, self.data_seed)?;
        let sp = split(&ds, self.valid_fraction, self.data_seed)?;
        Ok((ds, sp))
    }

    /// The oracle table this config's searches are scored against.
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            nodes: self.search.arch.nodes,
            ops: self.search.arch.ops.clone(),
            retain: self.search.retain,
            allow_zero: false,
            dataset: self.dataset,
            data_seed: self.data_seed,
            valid_fraction: self.valid_fraction,
            train: self.train,
            eval_seeds: self.oracle.eval_seeds,
            base_seed: self.oracle.base_seed,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_id)
    }
}

fn strip(e: sdnas_core::Error) -> String {
    let s = e.to_string();
    s.strip_prefix("invalid argument: ").map(str::to_owned).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.search.lambda = 0.5;
        cfg.search.retain = sdnas_core::searchspace::RetainPolicy::Top(1);
        cfg.sweep.axis = Axis::Warmup;
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[search]\nepochz = 3\n").unwrap_err();
        assert!(err.contains("epochz"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let cfg = RunConfig::from_toml("[search]\nepochs = 10\nwarmup_epochs = 10\n").unwrap();
        match cfg.validate() {
            Err(CliError::Config(msg)) => assert!(msg.starts_with("search.warmup_epochs"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn axis_rejects_fractional_counts() {
        let base = SearchConfig::default();
        assert_eq!(Axis::Window.apply(&base, 4.0).unwrap().window, 4);
        assert!(Axis::Warmup.apply(&base, 2.5).is_err());
        assert_eq!(Axis::Lambda.apply(&base, 0.25).unwrap().lambda, 0.25);
    }
}
