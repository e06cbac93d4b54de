//! Conditional-Gaussian imputation of masked training entries.
//!
//! Given the mean parameter `θ`, the missing block `Y` of a period with
//! observed block `X = x` is `N(A θ + b, S)` where
//! `A = P_M − K P⊥_M`, `b = K x`, `K = Ω_YX Ω_X⁻¹` and
//! `S = Ω_Y − Ω_YX Ω_X⁻¹ Ω_XY`.
//!
//! Each imputed panel uses one `θ` draw from the consensus posterior, shared
//! by every period. In conditional-expectation mode the missing block is set
//! to `A θ + b`; with noise an independent `N(0, S)` draw is added per period.
//!
//! Random numbers for imputation `j` come from [`substream`]`(seed, j)`:
//! first `n` standard normals for `θ`, then (with noise) `dim(Y_t)` standard
//! normals per masked period in ascending period order.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::sampling_factor;
use crate::panel::{submatrix, IndexSplit, MissingMask, ReturnsPanel, Split};
use crate::posterior::{GaussianPosterior, NoiseModel};
use crate::rng::{standard_normal, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImputationMode {
    #[default]
    ConditionalExpectation,
    WithNoise,
}

/// Affine model of one mask pattern; `b` is produced per period by [`ConditionalModel::offset`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalModel {
    pub indices: IndexSplit,
    /// `A`, `dim(Y) x n`.
    pub affine: DMatrix<f64>,
    /// `K = Ω_YX Ω_X⁻¹`, `dim(Y) x dim(X)`.
    pub gain: DMatrix<f64>,
    /// `S`, `dim(Y) x dim(Y)`.
    pub residual_cov: DMatrix<f64>,
}

impl ConditionalModel {
    pub fn n_missing(&self) -> usize {
        self.indices.missing.len()
    }

    /// `b = K x` for the observed values `x`.
    pub fn offset(&self, observed: &DVector<f64>) -> Result<DVector<f64>> {
        if observed.len() != self.indices.observed.len() {
            return Err(Error::dim("observed values", self.indices.observed.len(), observed.len()));
        }
        Ok(&self.gain * observed)
    }

    /// `A θ + b`.
    pub fn mean(&self, theta: &DVector<f64>, offset: &DVector<f64>) -> DVector<f64> {
        &self.affine * theta + offset
    }
}

pub fn conditional_model(mask_column: &[bool], noise: &NoiseModel) -> Result<ConditionalModel> {
    let n = noise.dim();
    if mask_column.len() != n {
        return Err(Error::dim("mask column", n, mask_column.len()));
    }
    let indices = IndexSplit::from_mask_column(mask_column);
    let (miss, obs) = (&indices.missing, &indices.observed);
    let omega = noise.cov().matrix();
    let omega_y = submatrix(omega, miss, miss);

    let (gain, residual_cov) = if obs.is_empty() || miss.is_empty() {
        (DMatrix::zeros(miss.len(), obs.len()), omega_y)
    } else {
        let omega_yx = submatrix(omega, miss, obs);
        let inv_x = noise.observed_precision(obs)?;
        let gain = &omega_yx * inv_x;
        let s = &omega_y - &gain * omega_yx.transpose();
        (gain, crate::linalg::symmetrize(&s))
    };

    let mut affine = DMatrix::zeros(miss.len(), n);
    for (r, &i) in miss.iter().enumerate() {
        affine[(r, i)] = 1.0;
        for (c, &j) in obs.iter().enumerate() {
            affine[(r, j)] = -gain[(r, c)];
        }
    }
    Ok(ConditionalModel {
        indices,
        affine,
        gain,
        residual_cov,
    })
}

#[derive(Debug, Clone)]
struct PeriodPlan {
    period: usize,
    model: Arc<ConditionalModel>,
    offset: DVector<f64>,
    noise_factor: Option<Arc<DMatrix<f64>>>,
}

/// Draws `θ = μ + L z` with `L Lᵀ = Σ`.
#[derive(Debug, Clone)]
pub struct ThetaSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl ThetaSampler {
    pub fn new(posterior: &GaussianPosterior) -> Result<Self> {
        Ok(ThetaSampler {
            mean: posterior.mean().clone(),
            factor: sampling_factor(posterior.cov().matrix())?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normals(rng, self.dim());
        &self.mean + &self.factor * z
    }
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| standard_normal(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedPanel {
    pub values: DMatrix<f64>,
    pub mask: MissingMask,
    pub theta: DVector<f64>,
    pub split: Split,
}

/// Training-block column sum of an imputed panel as an affine function of
/// `θ`: `Σ_t Z̃_t = base + gain θ` (noise contributions excluded).
#[derive(Debug, Clone)]
pub struct TrainingSumMap {
    pub base: DVector<f64>,
    pub gain: DMatrix<f64>,
}

impl TrainingSumMap {
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.base + &self.gain * theta
    }
}

/// Per-period conditional models of one masked panel, built once and reused
/// across posteriors and imputations.
#[derive(Debug, Clone)]
pub struct Imputer<'a> {
    panel: &'a ReturnsPanel,
    mask: &'a MissingMask,
    mode: ImputationMode,
    plans: Vec<PeriodPlan>,
}

impl<'a> Imputer<'a> {
    pub fn new(panel: &'a ReturnsPanel, mask: &'a MissingMask, noise: &NoiseModel, mode: ImputationMode) -> Result<Self> {
        mask.check_matches(panel)?;
        if noise.dim() != panel.n_assets() {
            return Err(Error::dim("noise covariance", panel.n_assets(), noise.dim()));
        }
        let mut models: BTreeMap<&[bool], (Arc<ConditionalModel>, Option<Arc<DMatrix<f64>>>)> = BTreeMap::new();
        let mut plans = Vec::new();
        for t in 0..panel.split().train {
            let column = mask.column(t);
            if !column.iter().any(|&m| m) {
                continue;
            }
            if !models.contains_key(column) {
                let model = conditional_model(column, noise)?;
                let factor = match mode {
                    ImputationMode::WithNoise => Some(Arc::new(sampling_factor(&model.residual_cov)?)),
                    ImputationMode::ConditionalExpectation => None,
                };
                models.insert(column, (Arc::new(model), factor));
            }
            let (model, factor) = models[column].clone();
            let values = panel.values().column(t);
            let observed = DVector::from_iterator(
                model.indices.observed.len(),
                model.indices.observed.iter().map(|&i| values[i]),
            );
            let offset = model.offset(&observed)?;
            plans.push(PeriodPlan {
                period: t,
                model,
                offset,
                noise_factor: factor,
            });
        }
        Ok(Imputer { panel, mask, mode, plans })
    }

    pub fn mode(&self) -> ImputationMode {
        self.mode
    }

    /// Periods that carry at least one masked entry, ascending.
    pub fn masked_periods(&self) -> impl Iterator<Item = usize> + '_ {
        self.plans.iter().map(|p| p.period)
    }

    /// Per-period noise draws `η_t`, consuming the generator in plan order.
    /// Empty in conditional-expectation mode.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        self.plans
            .iter()
            .filter_map(|p| {
                p.noise_factor
                    .as_ref()
                    .map(|l| l.as_ref() * standard_normals(rng, p.model.n_missing()))
            })
            .collect()
    }

    /// Completes the panel for a given `θ` and optional per-period noise.
    pub fn fill(&self, theta: &DVector<f64>, noise: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        if theta.len() != self.panel.n_assets() {
            return Err(Error::dim("theta", self.panel.n_assets(), theta.len()));
        }
        let with_noise = !noise.is_empty();
        if with_noise && noise.len() != self.plans.len() {
            return Err(Error::dim("noise draws", self.plans.len(), noise.len()));
        }
        let mut values = self.panel.values().clone();
        for (k, plan) in self.plans.iter().enumerate() {
            let mut y = plan.model.mean(theta, &plan.offset);
            if with_noise {
                y += &noise[k];
            }
            for (r, &i) in plan.model.indices.missing.iter().enumerate() {
                values[(i, plan.period)] = y[r];
            }
        }
        Ok(values)
    }

    /// `m` imputed panels under `posterior`, imputation `j` seeded by `(seed, j)`.
    pub fn impute(&self, posterior: &GaussianPosterior, seed: u64, m: usize) -> Result<Vec<ImputedPanel>> {
        if m == 0 {
            return Err(Error::InvalidArgument("imputation count must be at least 1".into()));
        }
        if posterior.dim() != self.panel.n_assets() {
            return Err(Error::dim("posterior dimension", self.panel.n_assets(), posterior.dim()));
        }
        let sampler = ThetaSampler::new(posterior)?;
        (0..m)
            .map(|j| {
                let mut rng = substream(seed, j as u64);
                let theta = sampler.draw(&mut rng);
                let noise = self.draw_noise(&mut rng);
                Ok(ImputedPanel {
                    values: self.fill(&theta, &noise)?,
                    mask: self.mask.clone(),
                    theta,
                    split: self.panel.split(),
                })
            })
            .collect()
    }

    pub fn training_sum_map(&self) -> TrainingSumMap {
        let n = self.panel.n_assets();
        let train = self.panel.split().train;
        let mut base = DVector::zeros(n);
        for t in 0..train {
            let column = self.panel.values().column(t);
            let mask = self.mask.column(t);
            for i in 0..n {
                if !mask[i] {
                    base[i] += column[i];
                }
            }
        }
        let mut gain = DMatrix::zeros(n, n);
        for plan in &self.plans {
            for (r, &i) in plan.model.indices.missing.iter().enumerate() {
                base[i] += plan.offset[r];
                for j in 0..n {
                    gain[(i, j)] += plan.model.affine[(r, j)];
                }
            }
        }
        TrainingSumMap { base, gain }
    }

    /// Sum of noise draws scattered onto their missing coordinates.
    pub fn noise_training_sum(&self, noise: &[DVector<f64>]) -> DVector<f64> {
        let mut sum = DVector::zeros(self.panel.n_assets());
        for (plan, eta) in self.plans.iter().zip(noise) {
            for (r, &i) in plan.model.indices.missing.iter().enumerate() {
                sum[i] += eta[r];
            }
        }
        sum
    }
}

/// Algorithm-style multiple imputation without idiosyncratic noise.
pub fn impute_conditional_expectation(
    panel: &ReturnsPanel,
    mask: &MissingMask,
    posterior: &GaussianPosterior,
    noise: &NoiseModel,
    seed: u64,
    m: usize,
) -> Result<Vec<ImputedPanel>> {
    Imputer::new(panel, mask, noise, ImputationMode::ConditionalExpectation)?.impute(posterior, seed, m)
}

/// Full sampler: conditional mean plus `N(0, S_t)` noise per period.
pub fn impute_with_noise(
    panel: &ReturnsPanel,
    mask: &MissingMask,
    posterior: &GaussianPosterior,
    noise: &NoiseModel,
    seed: u64,
    m: usize,
) -> Result<Vec<ImputedPanel>> {
    Imputer::new(panel, mask, noise, ImputationMode::WithNoise)?.impute(posterior, seed, m)
}
