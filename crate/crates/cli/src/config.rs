use std::path::{Path, PathBuf};

use corrdyn::kramers::{BinCount, KmConfig, DEFAULT_MIN_OCCUPANCY, DEFAULT_TAUS};
use corrdyn::states::{DEFAULT_MIN_STATE_DAYS, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of a pipeline run. Stored as TOML; missing keys take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Price file, long (`date,ticker,adj_close`) or wide.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// `long`, `wide` or `auto`.
    pub format: String,
    pub output_dir: PathBuf,
    pub normalization_window: usize,
    pub correlation_window: usize,
    pub correlation_step: usize,
    /// Also write every correlation vector in long format.
    pub write_matrices: bool,
    pub pca_components: usize,
    pub pca_centered: bool,
    pub threshold: f64,
    pub seed: u64,
    /// Fixed bin count; automatic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub km_bins: Option<usize>,
    pub taus: Vec<usize>,
    pub sliding_window: usize,
    pub sliding_step: usize,
    /// Explicit groups of state labels to estimate together, e.g. `[[2, 3]]`.
    pub merge: Vec<Vec<usize>>,
    pub min_state_days: usize,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: "auto".into(),
            output_dir: PathBuf::from("corrdyn-out"),
            normalization_window: corrdyn::ingest::DEFAULT_NORMALIZATION_WINDOW,
            correlation_window: 42,
            correlation_step: 1,
            write_matrices: false,
            pca_components: 3,
            pca_centered: true,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            km_bins: None,
            taus: DEFAULT_TAUS.to_vec(),
            sliding_window: 1008,
            sliding_step: 42,
            merge: Vec::new(),
            min_state_days: DEFAULT_MIN_STATE_DAYS,
            histogram_bins: 50,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("normalization_window", self.normalization_window),
            ("correlation_window", self.correlation_window),
            ("correlation_step", self.correlation_step),
            ("pca_components", self.pca_components),
            ("sliding_window", self.sliding_window),
            ("sliding_step", self.sliding_step),
            ("histogram_bins", self.histogram_bins),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{name} must be positive")));
        }
        if self.normalization_window < 2 || self.correlation_window < 2 {
            return Err(CliError::Config("normalization and correlation windows must be at least 2".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(CliError::Config("threshold must be positive".into()));
        }
        if self.km_bins == Some(0) {
            return Err(CliError::Config("km_bins must be positive".into()));
        }
        if self.taus.is_empty() || self.taus[0] == 0 || self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("taus must be ascending integers >= 1".into()));
        }
        if self.merge.iter().flatten().any(|&l| l == 0) {
            return Err(CliError::Config("merge lists use 1-based state labels".into()));
        }
        self.format.parse::<corrdyn::ingest::PriceFormat>().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn km(&self) -> KmConfig {
        KmConfig {
            bins: self.km_bins.map_or(BinCount::Auto, BinCount::Fixed),
            taus: self.taus.clone(),
            dt: 1.0,
            min_occupancy: DEFAULT_MIN_OCCUPANCY,
        }
    }
}
