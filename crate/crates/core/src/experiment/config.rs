use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::CsvSchema;
use crate::error::{Error, Result};
use crate::federation::{Mode, RoundConfig, Weighting};
use crate::model::DEFAULT_BATCH_SIZE;
use crate::scalar::Scalar;

/// Environment variable that overrides `results_dir`.
pub const RESULTS_DIR_ENV: &str = "FEDDP_RESULTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Centralized,
    Flr,
    OpenFlr,
    FedDp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Centralized => "Centralized",
            Method::Flr => "FLR",
            Method::OpenFlr => "OpenFLR",
            Method::FedDp => "FedDP",
        }
    }

    pub fn federation_mode(self) -> Option<Mode> {
        match self {
            Method::Centralized => None,
            Method::Flr => Some(Mode::Flr),
            Method::OpenFlr => Some(Mode::OpenFlr),
            Method::FedDp => Some(Mode::FedDp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedProx,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "FedAvg",
            Algorithm::FedProx => "FedProx",
        }
    }
}

/// Unit paired by the signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// One value per repeat (the last-window average).
    Repeats,
    /// Every round inside the averaging window of every repeat.
    Rounds,
}

/// How the latest version of the test project is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VersionOrder {
    /// Last entry in manifest order.
    Manifest,
    /// Highest dotted numeric version; falls back to manifest order when a
    /// version does not parse.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Flat experiment description; every field has a default, so a config file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Manifest listing the project CSVs. Relative paths resolve against the
    /// config file.
    pub manifest: Option<PathBuf>,
    /// `promise`, `softlab` or `custom`.
    pub schema: String,
    pub label_column: Option<String>,
    pub feature_columns: Option<Vec<String>>,
    pub distillation_project: String,
    pub test_project: String,
    pub method: Method,
    pub algorithm: Algorithm,
    pub weighting: Weighting,
    pub local_epochs: usize,
    pub rounds: usize,
    pub distill_steps: usize,
    pub sample_size: usize,
    pub participation_ratio: f64,
    pub learning_rate: f64,
    /// Defaults to `learning_rate`.
    pub server_learning_rate: Option<f64>,
    /// Proximal coefficient used when `algorithm = "fedprox"`.
    pub prox_mu: f64,
    pub batch_size: usize,
    pub repeats: usize,
    pub window: usize,
    pub seed: u64,
    pub threshold: f64,
    pub pairing: Pairing,
    pub version_order: VersionOrder,
    pub precision: Precision,
    pub results_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            schema: "promise".into(),
            label_column: None,
            feature_columns: None,
            distillation_project: "camel".into(),
            test_project: "ant".into(),
            method: Method::FedDp,
            algorithm: Algorithm::FedProx,
            weighting: Weighting::Correlation,
            local_epochs: 10,
            rounds: 50,
            distill_steps: 10,
            sample_size: 700,
            participation_ratio: 1.0,
            learning_rate: 0.001,
            server_learning_rate: None,
            prox_mu: 0.01,
            batch_size: DEFAULT_BATCH_SIZE,
            repeats: 5,
            window: 10,
            seed: 20240,
            threshold: 0.5,
            pairing: Pairing::Repeats,
            version_order: VersionOrder::Manifest,
            precision: Precision::F64,
            results_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a TOML config. A relative `manifest` is resolved
    /// against the directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.participation_ratio > 0.0 && self.participation_ratio <= 1.0) {
            return bad(format!("participation_ratio must be in (0, 1], got {}", self.participation_ratio));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if let Some(lr) = self.server_learning_rate {
            if !(lr.is_finite() && lr >= 0.0) {
                return bad(format!("server_learning_rate must be finite and non-negative, got {lr}"));
            }
        }
        if !(self.prox_mu.is_finite() && self.prox_mu >= 0.0) {
            return bad(format!("prox_mu must be finite and non-negative, got {}", self.prox_mu));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be positive".into());
        }
        if self.window == 0 || self.window > self.rounds {
            return bad(format!("window must be in 1..={}, got {}", self.rounds, self.window));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must be in [0, 1], got {}", self.threshold));
        }
        if self.test_project == self.distillation_project {
            return Err(Error::TestEqualsDistillation(self.test_project.clone()));
        }
        self.csv_schema()?;
        Ok(())
    }

    pub fn csv_schema(&self) -> Result<CsvSchema> {
        let preset = CsvSchema::preset(&self.schema);
        match (preset, self.schema.as_str()) {
            (Some(mut s), _) => {
                if let Some(label) = &self.label_column {
                    s.label_column = label.clone();
                }
                if let Some(cols) = &self.feature_columns {
                    s.feature_columns = cols.clone();
                }
                Ok(s)
            }
            (None, "custom") => match (&self.label_column, &self.feature_columns) {
                (Some(label), Some(cols)) if !cols.is_empty() => Ok(CsvSchema::new(label.clone(), cols.clone())),
                _ => Err(Error::InvalidConfig(
                    "custom schema needs label_column and a non-empty feature_columns".into(),
                )),
            },
            (None, other) => Err(Error::InvalidConfig(format!(
                "unknown schema {other:?}; expected promise, softlab or custom"
            ))),
        }
    }

    pub fn server_rate(&self) -> f64 {
        self.server_learning_rate.unwrap_or(self.learning_rate)
    }

    /// Proximal coefficient actually applied: zero under FedAvg.
    pub fn effective_prox_mu(&self) -> f64 {
        match self.algorithm {
            Algorithm::FedAvg => 0.0,
            Algorithm::FedProx => self.prox_mu,
        }
    }

    /// Display label such as `FedDP/FedProx`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Centralized => Method::Centralized.name().to_string(),
            m => {
                let mut s = format!("{}/{}", m.name(), self.algorithm.name());
                if m == Method::FedDp && self.weighting == Weighting::Uniform {
                    s.push_str(" w/o factor");
                }
                s
            }
        }
    }

    /// `FEDDP_RESULTS_DIR` when set, otherwise `results_dir`.
    pub fn resolved_results_dir(&self) -> PathBuf {
        std::env::var_os(RESULTS_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.results_dir.clone())
    }

    /// Round parameters for a federated method. `sample_size` is clamped to the
    /// distillation set size.
    pub fn round_config<T: Scalar>(&self, distillation_len: usize) -> Option<RoundConfig<T>> {
        let mode = self.method.federation_mode()?;
        Some(RoundConfig {
            participation_ratio: self.participation_ratio,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            learning_rate: T::of(self.learning_rate),
            server_learning_rate: T::of(self.server_rate()),
            prox_mu: T::of(self.effective_prox_mu()),
            distill_steps: self.distill_steps,
            sample_size: self.sample_size.min(distillation_len),
            mode,
            weighting: self.weighting,
        })
    }
}
