//! JSON configuration for `bvmi run` and `bvmi impute`.
//!
//! Relative paths inside a config file are resolved against the directory
//! holding that file.

use std::fs;
use std::path::{Path, PathBuf};

use bvmi_core::nalgebra::{DMatrix, DVector};
use bvmi_core::{FactorModelSpec, ImputationMode, MaskSpec, Prior, SpdMatrix, Split};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PanelFileSchema;

pub const DEFAULT_GRID_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub test: usize,
    pub oos: usize,
}

impl SplitConfig {
    pub fn to_split(self) -> Result<Split> {
        Split::new(self.train, self.test, self.oos).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub n_assets: usize,
    /// Factor loadings; all ones when absent.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    /// Pricing errors; equi-spaced over `[-0.3, 0.3]` when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default = "default_premium")]
    pub premium: f64,
    pub split: SplitConfig,
}

fn default_premium() -> f64 {
    bvmi_core::synthetic::DEFAULT_PREMIUM
}

impl SyntheticSource {
    pub fn factor_model(&self) -> Result<FactorModelSpec> {
        let mut spec = FactorModelSpec::standard(self.n_assets);
        spec.premium = self.premium;
        if let Some(beta) = &self.beta {
            spec.beta = beta.clone();
        }
        if let Some(alpha) = &self.alpha {
            spec.alpha = alpha.clone();
        }
        if self.n_assets == 0 || spec.beta.len() != self.n_assets || spec.alpha.len() != self.n_assets {
            return Err(Error::Config(format!(
                "synthetic source needs n_assets >= 1 and beta/alpha of length n_assets ({})",
                self.n_assets
            )));
        }
        Ok(spec)
    }
}

/// Which window of the source each repetition uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Every repetition uses the window at `start_offset`.
    #[default]
    Fixed,
    /// Repetition `k` uses the window at `start_offset + k`.
    Rolling,
}

/// Periods used to fit the noise covariance of a file source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceWindow {
    /// Every row of the (date-filtered) source file.
    #[default]
    FullSource,
    /// Only the training and testing periods of each repetition's window.
    TrainTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: PanelFileSchema,
    pub split: SplitConfig,
    #[serde(default)]
    pub window: WindowMode,
    #[serde(default)]
    pub start_offset: usize,
    #[serde(default)]
    pub covariance: CovarianceWindow,
    /// Ridge added to the fitted covariance; `1e-8` times its mean variance when absent.
    #[serde(default)]
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    File(FileSource),
}

impl DataSource {
    pub fn split(&self) -> SplitConfig {
        match self {
            DataSource::Synthetic(s) => s.split,
            DataSource::File(f) => f.split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskConfig {
    Mcar { p: f64 },
    Block { fraction: f64 },
    ByValue { threshold: f64 },
}

impl MaskConfig {
    pub fn to_spec(self) -> MaskSpec {
        match self {
            MaskConfig::Mcar { p } => MaskSpec::Mcar { p },
            MaskConfig::Block { fraction } => MaskSpec::Block { fraction },
            MaskConfig::ByValue { threshold } => MaskSpec::ByValue { threshold },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    #[default]
    Flat,
    /// `N(mean · 1, variance · I)`.
    Isotropic { mean: f64, variance: f64 },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

impl PriorConfig {
    pub fn to_prior(&self, n: usize) -> Result<Prior> {
        let prior = match self {
            PriorConfig::Flat => return Ok(Prior::Flat),
            PriorConfig::Isotropic { mean, variance } => {
                let cov = SpdMatrix::from_diagonal(&vec![*variance; n]).map_err(|e| Error::Config(format!("prior: {e}")))?;
                Prior::gaussian(DVector::from_element(n, *mean), cov)
            }
            PriorConfig::Gaussian { mean, cov } => {
                if mean.len() != n || cov.len() != n || cov.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("prior mean and covariance must have dimension {n}")));
                }
                let m = DMatrix::from_fn(n, n, |i, j| cov[i][j]);
                let cov = SpdMatrix::new(m).map_err(|e| Error::Config(format!("prior covariance: {e}")))?;
                Prior::gaussian(DVector::from_column_slice(mean), cov)
            }
        };
        prior.map_err(|e| Error::Config(format!("prior: {e}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    ConditionalExpectation,
    WithNoise,
}

impl From<ModeConfig> for ImputationMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::ConditionalExpectation => ImputationMode::ConditionalExpectation,
            ModeConfig::WithNoise => ImputationMode::WithNoise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub mask: MaskConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    pub repetitions: usize,
    pub imputations: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeConfig,
    /// CSV destination; standard output when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::ConfigRead {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::ConfigParse {
        path: path.to_owned(),
        source,
    })
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new(""))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut config: Self = read_json(path)?;
        let base = base_dir(path);
        if let DataSource::File(f) = &mut config.data {
            resolve(base, &mut f.path);
        }
        if let Some(out) = &mut config.output {
            resolve(base, out);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.imputations < 2 {
            return Err(Error::Config("imputations must be at least 2".into()));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        self.mask.to_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.data.split().to_split()?;
        match &self.data {
            DataSource::Synthetic(s) => {
                self.prior.to_prior(s.factor_model()?.n_assets())?;
            }
            DataSource::File(f) => {
                if f.ridge.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
                    return Err(Error::Config("ridge must be non-negative".into()));
                }
            }
        }
        Ok(())
    }
}

/// Source of the noise covariance for `impute`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OmegaSource {
    /// Sample covariance over the dates with no missing cell.
    CompleteRows {
        #[serde(default)]
        ridge: Option<f64>,
    },
    /// Explicit matrix in scaled units.
    Matrix(Vec<Vec<f64>>),
}

impl Default for OmegaSource {
    fn default() -> Self {
        OmegaSource::CompleteRows { ridge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeConfig {
    /// Panel file; missing cells are written `NA`.
    pub input: PathBuf,
    #[serde(default)]
    pub schema: PanelFileSchema,
    pub split: SplitConfig,
    #[serde(default)]
    pub start_offset: usize,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub omega: OmegaSource,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl ImputeConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut config: Self = read_json(path)?;
        let base = base_dir(path);
        resolve(base, &mut config.input);
        resolve(base, &mut config.output_dir);
        config.split.to_split()?;
        Ok(config)
    }
}
