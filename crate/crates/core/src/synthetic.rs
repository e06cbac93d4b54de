//! One-factor synthetic return panels: `Z_t ~ N(θ, Ω)` i.i.d. with
//! `θ = premium·β + α` and `Ω = ββᵀ + I`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::panel::{ReturnsPanel, Split};
use crate::posterior::NoiseModel;
use crate::rng::{standard_normal, substream};

pub const DEFAULT_PREMIUM: f64 = 0.2;
pub const DEFAULT_ALPHA_SPAN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelSpec {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub premium: f64,
}

impl FactorModelSpec {
    /// Unit betas and alphas equi-spaced over `[-0.3, 0.3]` (a single asset gets 0).
    pub fn standard(n: usize) -> Self {
        FactorModelSpec {
            beta: alloc::vec![1.0; n],
            alpha: equi_spaced(-DEFAULT_ALPHA_SPAN, DEFAULT_ALPHA_SPAN, n),
            premium: DEFAULT_PREMIUM,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.beta.len()
    }

    fn check(&self) -> Result<()> {
        if self.beta.is_empty() {
            return Err(Error::InvalidArgument("factor model needs at least one asset".into()));
        }
        if self.alpha.len() != self.beta.len() {
            return Err(Error::dim("alpha", self.beta.len(), self.alpha.len()));
        }
        Ok(())
    }

    pub fn true_mean(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.beta.len(),
            self.beta.iter().zip(&self.alpha).map(|(b, a)| self.premium * b + a),
        )
    }

    pub fn true_cov(&self) -> SpdMatrix {
        let b = DVector::from_column_slice(&self.beta);
        let n = b.len();
        SpdMatrix::new(&b * b.transpose() + DMatrix::identity(n, n)).expect("ββᵀ + I is positive definite")
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        self.check()?;
        NoiseModel::new(self.true_cov())
    }
}

/// `count` equi-spaced points covering `[lo, hi]`; one point sits at the midpoint.
pub fn equi_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![(lo + hi) / 2.0],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// I.i.d. columns from `N(θ, Ω)` via the Cholesky factor of `Ω`.
pub fn generate_synthetic_panel(spec: &FactorModelSpec, split: Split, seed: u64) -> Result<ReturnsPanel> {
    spec.check()?;
    let n = spec.n_assets();
    let mean = spec.true_mean();
    let factor = spec.true_cov().cholesky()?.unpack();
    let mut rng = substream(seed, 0);
    let mut values = DMatrix::zeros(n, split.total());
    for t in 0..split.total() {
        let z = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
        values.set_column(t, &(&mean + &factor * z));
    }
    ReturnsPanel::new(values, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_parameters() {
        let spec = FactorModelSpec::standard(100);
        let theta = spec.true_mean();
        assert!((theta[0] + 0.1).abs() < 1e-15);
        assert!((theta[99] - 0.5).abs() < 1e-15);
        let step = 0.6 / 99.0;
        for i in 1..100 {
            assert!((theta[i] - theta[i - 1] - step).abs() < 1e-12);
        }
        let omega = spec.true_cov();
        for i in 0..100 {
            for j in 0..100 {
                assert_eq!(omega.matrix()[(i, j)], if i == j { 2.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn degenerate_factor_is_standard_noise() {
        let spec = FactorModelSpec {
            beta: alloc::vec![0.0],
            alpha: alloc::vec![0.0],
            premium: DEFAULT_PREMIUM,
        };
        assert_eq!(spec.true_mean()[0], 0.0);
        assert_eq!(spec.true_cov().matrix()[(0, 0)], 1.0);
        let split = Split::new(20_000, 0, 0).unwrap();
        let p = generate_synthetic_panel(&spec, split, 3).unwrap();
        let row = p.values().row(0);
        let mean = row.mean();
        let var = row.variance();
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05);
    }

    #[test]
    fn reproducible_at_fixed_seed() {
        let spec = FactorModelSpec::standard(5);
        let split = Split::new(10, 5, 5).unwrap();
        let a = generate_synthetic_panel(&spec, split, 9).unwrap();
        let b = generate_synthetic_panel(&spec, split, 9).unwrap();
        let c = generate_synthetic_panel(&spec, split, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_converges() {
        let spec = FactorModelSpec::standard(4);
        let split = Split::new(100_000, 0, 0).unwrap();
        let p = generate_synthetic_panel(&spec, split, 21).unwrap();
        let theta = spec.true_mean();
        for i in 0..4 {
            assert!((p.values().row(i).mean() - theta[i]).abs() < 0.02);
        }
    }

    #[test]
    fn mismatched_alpha_rejected() {
        let spec = FactorModelSpec {
            beta: alloc::vec![1.0, 1.0],
            alpha: alloc::vec![0.0],
            premium: 0.2,
        };
        assert!(generate_synthetic_panel(&spec, Split::new(1, 0, 0).unwrap(), 0).is_err());
    }
}
