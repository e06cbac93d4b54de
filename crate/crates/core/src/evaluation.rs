//! Downstream portfolio task and the ECMSE decomposition of its regret.
//!
//! Weights are the ℓ₂-normalized sum of the imputed training columns. The
//! regret `ΔR` is the average portfolio return over the (true) testing block
//! minus that over the out-of-sample block. Over `K` repetitions of `M`
//! imputations, `ECBias² = max(mean ΔR, 0)²` with the grand mean over all
//! `K·M` values, and `ECVar` is the mean over repetitions of the unbiased
//! (`M − 1`) within-repetition variance.

use alloc::vec::Vec;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::imputer::ImputedPanel;
use crate::panel::ReturnsPanel;

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub w: DVector<f64>,
    /// The training sum was zero; `w` is the zero vector.
    pub degenerate: bool,
}

pub fn normalize_weights(training_sum: DVector<f64>) -> PortfolioWeights {
    let norm = training_sum.norm();
    if norm == 0.0 || !norm.is_finite() {
        return PortfolioWeights {
            w: DVector::zeros(training_sum.len()),
            degenerate: true,
        };
    }
    PortfolioWeights {
        w: training_sum / norm,
        degenerate: false,
    }
}

pub fn portfolio_weights(imputed: &ImputedPanel) -> Result<PortfolioWeights> {
    let train = imputed.split.train;
    if train == 0 || imputed.values.ncols() < train {
        return Err(Error::InvalidArgument("imputed panel has no training block".into()));
    }
    let sum = imputed.values.columns(0, train).column_sum();
    Ok(normalize_weights(sum))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioResult {
    pub weights: PortfolioWeights,
    pub r_test: f64,
    pub r_oos: f64,
    pub regret: f64,
}

/// Average portfolio return over `[start, start + len)` of the true panel.
fn block_return(w: &DVector<f64>, truth: &ReturnsPanel, start: usize, len: usize) -> f64 {
    let total: f64 = (start..start + len).map(|t| w.dot(&truth.values().column(t))).sum();
    total / len as f64
}

pub fn regret(imputed: &ImputedPanel, truth: &ReturnsPanel) -> Result<PortfolioResult> {
    let split = truth.split();
    if imputed.split != split || imputed.values.shape() != truth.values().shape() {
        return Err(Error::InvalidArgument("imputed panel and truth differ in shape or split".into()));
    }
    if split.test == 0 || split.oos == 0 {
        return Err(Error::InvalidArgument("regret needs non-empty testing and out-of-sample blocks".into()));
    }
    let weights = portfolio_weights(imputed)?;
    let r_test = block_return(&weights.w, truth, split.train, split.test);
    let r_oos = block_return(&weights.w, truth, split.train_test(), split.oos);
    Ok(PortfolioResult {
        weights,
        r_test,
        r_oos,
        regret: r_test - r_oos,
    })
}

/// Precomputed block means of the true panel, so regrets of many weight
/// vectors cost two dot products each.
#[derive(Debug, Clone)]
pub struct RegretEvaluator {
    test_mean: DVector<f64>,
    oos_mean: DVector<f64>,
}

impl RegretEvaluator {
    pub fn new(truth: &ReturnsPanel) -> Result<Self> {
        let split = truth.split();
        if split.test == 0 || split.oos == 0 {
            return Err(Error::InvalidArgument("regret needs non-empty testing and out-of-sample blocks".into()));
        }
        let v = truth.values();
        Ok(RegretEvaluator {
            test_mean: v.columns(split.train, split.test).column_mean(),
            oos_mean: v.columns(split.train_test(), split.oos).column_mean(),
        })
    }

    /// `(r_test, r_oos, ΔR)`.
    pub fn evaluate(&self, w: &DVector<f64>) -> (f64, f64, f64) {
        let r_test = w.dot(&self.test_mean);
        let r_oos = w.dot(&self.oos_mean);
        (r_test, r_oos, r_test - r_oos)
    }
}

/// ECMSE decomposition at one bias budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmseRow {
    pub mean_regret: f64,
    pub ec_bias_sq: f64,
    pub ec_var: f64,
    pub ec_mse: f64,
    pub repetitions: usize,
    pub imputations: usize,
    /// Per-repetition `E[ΔR | D_k]` and `Var[ΔR | D_k]`.
    pub conditional_means: Vec<f64>,
    pub conditional_vars: Vec<f64>,
}

/// `regrets[k][j]` is the regret of imputation `j` in repetition `k`; every
/// repetition must carry the same `M ≥ 2` imputations.
pub fn ecmse(regrets: &[Vec<f64>]) -> Result<EcmseRow> {
    let k = regrets.len();
    if k == 0 {
        return Err(Error::InvalidArgument("ecmse needs at least one repetition".into()));
    }
    let m = regrets[0].len();
    if m < 2 {
        return Err(Error::InvalidArgument("ecmse needs at least two imputations per repetition".into()));
    }
    if let Some(bad) = regrets.iter().find(|r| r.len() != m) {
        return Err(Error::dim("imputations per repetition", m, bad.len()));
    }
    let mut conditional_means = Vec::with_capacity(k);
    let mut conditional_vars = Vec::with_capacity(k);
    let mut grand = 0.0;
    for row in regrets {
        let mean = row.iter().sum::<f64>() / m as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
        grand += row.iter().sum::<f64>();
        conditional_means.push(mean);
        conditional_vars.push(var);
    }
    let mean_regret = grand / (k * m) as f64;
    let ec_bias_sq = mean_regret.max(0.0) * mean_regret.max(0.0);
    let ec_var = conditional_vars.iter().sum::<f64>() / k as f64;
    Ok(EcmseRow {
        mean_regret,
        ec_bias_sq,
        ec_var,
        ec_mse: ec_bias_sq + ec_var,
        repetitions: k,
        imputations: m,
        conditional_means,
        conditional_vars,
    })
}

/// Ranks with ties sharing their average rank (1-based).
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = alloc::vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant or lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{MissingMask, Split};
    use alloc::vec;
    use nalgebra::DMatrix;

    fn imputed(values: DMatrix<f64>, split: Split) -> ImputedPanel {
        let n = values.nrows();
        ImputedPanel {
            values,
            mask: MissingMask::none(n, split),
            theta: DVector::zeros(n),
            split,
        }
    }

    #[test]
    fn weight_examples() {
        let split = Split::new(3, 0, 0).unwrap();
        let v = DMatrix::from_row_slice(2, 3, &[3.0, 3.0, 3.0, 4.0, 4.0, 4.0]);
        let w = portfolio_weights(&imputed(v, split)).unwrap();
        assert!((w.w[0] - 0.6).abs() < 1e-15 && (w.w[1] - 0.8).abs() < 1e-15);
        assert!(!w.degenerate);

        let w = portfolio_weights(&imputed(DMatrix::from_row_slice(1, 3, &[0.1, 0.2, 0.3]), split)).unwrap();
        assert_eq!(w.w[0], 1.0);

        let w = portfolio_weights(&imputed(DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 1.0]), split)).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.w[0], 0.0);
    }

    #[test]
    fn regret_examples() {
        let split = Split::new(1, 2, 1).unwrap();
        let truth = ReturnsPanel::new(DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 3.0, 2.0]), split).unwrap();
        let r = regret(&imputed(truth.values().clone(), split), &truth).unwrap();
        assert_eq!(r.weights.w[0], 1.0);
        assert_eq!((r.r_test, r.r_oos, r.regret), (2.0, 2.0, 0.0));

        let split = Split::new(1, 1, 1).unwrap();
        let v = DMatrix::from_row_slice(2, 3, &[3.0, 1.0, 0.0, 4.0, 1.0, 0.0]);
        let truth = ReturnsPanel::new(v.clone(), split).unwrap();
        let r = regret(&imputed(v, split), &truth).unwrap();
        assert!((r.regret - 1.4).abs() < 1e-15);
        assert_eq!(r.regret, r.r_test - r.r_oos);
    }

    #[test]
    fn symmetric_periods_have_zero_regret() {
        let split = Split::new(2, 3, 3).unwrap();
        let v = DMatrix::from_fn(2, 8, |i, t| match t {
            0 | 1 => 1.0 + i as f64,
            t if t < 5 => (t as f64) * 0.1 - i as f64,
            t => ((t - 3) as f64) * 0.1 - i as f64,
        });
        let truth = ReturnsPanel::new(v.clone(), split).unwrap();
        assert!(regret(&imputed(v, split), &truth).unwrap().regret.abs() < 1e-15);
    }

    #[test]
    fn regret_needs_evaluation_blocks() {
        let split = Split::new(1, 0, 1).unwrap();
        let truth = ReturnsPanel::new(DMatrix::from_element(1, 2, 1.0), split).unwrap();
        assert!(regret(&imputed(truth.values().clone(), split), &truth).is_err());
        assert!(RegretEvaluator::new(&truth).is_err());
    }

    #[test]
    fn evaluator_matches_direct_regret() {
        let split = Split::new(2, 3, 4).unwrap();
        let v = DMatrix::from_fn(3, 9, |i, t| libm::sin((i * 9 + t) as f64));
        let truth = ReturnsPanel::new(v.clone(), split).unwrap();
        let direct = regret(&imputed(v, split), &truth).unwrap();
        let (rt, ro, dr) = RegretEvaluator::new(&truth).unwrap().evaluate(&direct.weights.w);
        assert!((rt - direct.r_test).abs() < 1e-14 && (ro - direct.r_oos).abs() < 1e-14);
        assert!((dr - direct.regret).abs() < 1e-14);
    }

    #[test]
    fn weights_are_scale_invariant() {
        let split = Split::new(2, 1, 1).unwrap();
        let v = DMatrix::from_row_slice(2, 4, &[0.3, -0.1, 0.5, 0.2, 0.1, 0.4, -0.2, 0.3]);
        let truth = ReturnsPanel::new(v.clone(), split).unwrap();
        let mut scaled = v.clone();
        scaled.columns_mut(0, 2).scale_mut(7.5);
        let a = regret(&imputed(v, split), &truth).unwrap();
        let b = regret(&imputed(scaled, split), &truth).unwrap();
        assert!((a.weights.w.clone() - b.weights.w.clone()).norm() < 1e-15);
        assert!((a.regret - b.regret).abs() < 1e-15);
    }

    #[test]
    fn ecmse_examples() {
        let row = ecmse(&[vec![0.1, 0.3]]).unwrap();
        assert!((row.mean_regret - 0.2).abs() < 1e-15);
        assert!((row.ec_bias_sq - 0.04).abs() < 1e-15);
        assert!((row.ec_var - 0.02).abs() < 1e-15);
        assert!((row.ec_mse - 0.06).abs() < 1e-15);
        assert_eq!(row.ec_mse, row.ec_bias_sq + row.ec_var);

        let row = ecmse(&[vec![-0.5; 4], vec![-0.5; 4]]).unwrap();
        assert_eq!((row.ec_bias_sq, row.ec_var, row.ec_mse), (0.0, 0.0, 0.0));

        let row = ecmse(&[vec![0.3; 3]]).unwrap();
        assert!((row.ec_mse - 0.09).abs() < 1e-15);
    }

    #[test]
    fn ecmse_errors() {
        assert!(ecmse(&[]).is_err());
        assert!(ecmse(&[vec![1.0]]).is_err());
        assert!(matches!(ecmse(&[vec![1.0, 2.0], vec![1.0]]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn ecmse_permutation_invariant() {
        let a = ecmse(&[vec![0.1, 0.5, -0.2, 0.7], vec![0.0, 0.2, 0.4, 0.1]]).unwrap();
        let b = ecmse(&[vec![0.7, -0.2, 0.1, 0.5], vec![0.4, 0.1, 0.0, 0.2]]).unwrap();
        assert!((a.ec_mse - b.ec_mse).abs() < 1e-15);
        assert!((a.ec_var - b.ec_var).abs() < 1e-15);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 2.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }
}
