//! Gaussian posteriors of the mean return vector.
//!
//! With known noise covariance `Ω`, each period contributes its observed
//! block precision `Ω_X⁻¹` (scattered back to `n x n` with zeros) and the
//! matching information vector `Ω_X⁻¹ x`. The posterior precision is the sum
//! of these contributions over the conditioning horizon, plus `Σ₀⁻¹` under a
//! Gaussian prior.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_psd, symmetrize, SpdMatrix};
use crate::panel::{scatter_add, submatrix, unobserved_rows, IndexSplit, MissingMask, ReturnsPanel};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    cov: SpdMatrix,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::dim("posterior mean", cov.dim(), mean.len()));
        }
        Ok(GaussianPosterior { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Flat,
    Gaussian { mean: DVector<f64>, cov: SpdMatrix },
}

impl Prior {
    pub fn gaussian(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::dim("prior mean", cov.dim(), mean.len()));
        }
        Ok(Prior::Gaussian { mean, cov })
    }
}

/// Known covariance `Ω` of the per-period return noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    cov: SpdMatrix,
    precision: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(cov: SpdMatrix) -> Result<Self> {
        let precision = cov.inverse()?.into_matrix();
        Ok(NoiseModel { cov, precision })
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// `Ω⁻¹`, used directly for fully observed periods.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// Inverse of the principal block of `Ω` on `observed`.
    pub(crate) fn observed_precision(&self, observed: &[usize]) -> Result<DMatrix<f64>> {
        if observed.len() == self.dim() {
            return Ok(self.precision.clone());
        }
        let block = submatrix(self.cov.matrix(), observed, observed);
        Ok(SpdMatrix::new(block)?.inverse()?.into_matrix())
    }
}

/// Conditioning horizon: the training block only, or training plus testing.
/// The out-of-sample block is never conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    TrainOnly,
    Full,
}

impl Horizon {
    pub fn periods(self, panel: &ReturnsPanel) -> usize {
        match self {
            Horizon::TrainOnly => panel.split().train,
            Horizon::Full => panel.split().train_test(),
        }
    }
}

/// Summed precision and information vector over a horizon.
#[derive(Debug, Clone)]
pub struct PrecisionAccumulator {
    pub precision: DMatrix<f64>,
    pub information: DVector<f64>,
}

/// Accumulates per-period contributions for periods `0..periods`. Observed
/// block inverses are memoized by observed index set.
pub fn accumulate_precision(
    panel: &ReturnsPanel,
    mask: &MissingMask,
    noise: &NoiseModel,
    periods: usize,
) -> Result<PrecisionAccumulator> {
    mask.check_matches(panel)?;
    let n = panel.n_assets();
    if noise.dim() != n {
        return Err(Error::dim("noise covariance", n, noise.dim()));
    }
    let mut precision = DMatrix::zeros(n, n);
    let mut information = DVector::zeros(n);
    let mut memo: BTreeMap<Vec<usize>, DMatrix<f64>> = BTreeMap::new();

    for t in 0..periods.min(panel.n_periods()) {
        let idx = IndexSplit::from_mask_column(mask.column(t));
        if idx.observed.is_empty() {
            continue;
        }
        let column = panel.values().column(t);
        if idx.missing.is_empty() {
            precision += noise.precision();
            information += noise.precision() * column;
            continue;
        }
        if !memo.contains_key(&idx.observed) {
            let inv = noise.observed_precision(&idx.observed)?;
            memo.insert(idx.observed.clone(), inv);
        }
        let block = &memo[&idx.observed];
        let x = DVector::from_iterator(idx.observed.len(), idx.observed.iter().map(|&i| column[i]));
        let h = block * x;
        scatter_add(&mut precision, block, &idx.observed)?;
        for (k, &i) in idx.observed.iter().enumerate() {
            information[i] += h[k];
        }
    }
    Ok(PrecisionAccumulator {
        precision,
        information,
    })
}

/// Posterior of the mean parameter conditioned on the observed entries up to
/// `horizon`.
pub fn posterior_k(
    panel: &ReturnsPanel,
    mask: &MissingMask,
    noise: &NoiseModel,
    prior: &Prior,
    horizon: Horizon,
) -> Result<GaussianPosterior> {
    let periods = horizon.periods(panel);
    let PrecisionAccumulator {
        mut precision,
        mut information,
    } = accumulate_precision(panel, mask, noise, periods)?;

    match prior {
        Prior::Flat => {
            let rows = unobserved_rows(mask, periods);
            if !rows.is_empty() {
                return Err(Error::SingularPrecision(rows));
            }
        }
        Prior::Gaussian { mean, cov } => {
            if mean.len() != panel.n_assets() {
                return Err(Error::dim("prior mean", panel.n_assets(), mean.len()));
            }
            let prior_precision = cov.inverse()?;
            information += prior_precision.matrix() * mean;
            precision += prior_precision.matrix();
        }
    }

    let precision = symmetrize(&precision);
    let chol = nalgebra::Cholesky::new(precision.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        min_eigenvalue: precision.clone().symmetric_eigenvalues().min(),
    })?;
    let cov = SpdMatrix::new(symmetrize(&chol.inverse()))?;
    let mean = chol.solve(&information);
    GaussianPosterior::new(mean, cov)
}

/// Outcome of comparing `Σ₁` against `Σ₂` in the Loewner order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nestedness {
    /// `Σ₁ − Σ₂` is PSD up to tolerance.
    pub nested: bool,
    pub min_eigenvalue: f64,
}

/// Tolerance relative to `max(1, |λ|_max)` of `Σ₁ − Σ₂`.
pub const NESTED_TOL: f64 = 1e-10;

pub fn nestedness_check(p1: &GaussianPosterior, p2: &GaussianPosterior) -> Result<Nestedness> {
    if p1.dim() != p2.dim() {
        return Err(Error::dim("posterior dimension", p1.dim(), p2.dim()));
    }
    let diff = p1.cov().matrix() - p2.cov().matrix();
    let scale = p1.cov().matrix().amax().max(p2.cov().matrix().amax());
    let (_, min) = is_psd(&diff, 0.0);
    Ok(Nestedness {
        nested: min >= -NESTED_TOL * scale.max(f64::MIN_POSITIVE),
        min_eigenvalue: min,
    })
}
