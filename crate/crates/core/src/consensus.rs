//! Bias-constrained, variance-minimizing consensus of two Gaussian posteriors.
//!
//! The consensus for weights `λ = (λ₁, λ₂)` is the 2-Wasserstein barycenter
//! (McCann interpolant) `N(λ₁μ₁ + λ₂μ₂, (λ₁I + λ₂Φ) Σ₁ (λ₁I + λ₂Φ))` with
//! `Φ = Σ₂^{1/2} (Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{-1/2} Σ₂^{1/2}`, the optimal transport
//! map from `Σ₁` to `Σ₂`.
//!
//! Its total variance is `λ₁² Tr Σ₁ + 2λ₁λ₂ Tr(Σ₁Φ) + λ₂² Tr Σ₂` and its mean
//! drifts from `μ₁` by exactly `λ₂ ‖μ₁ − μ₂‖`. Minimizing the former subject to
//! the drift staying within `δ` is a convex quadratic in `λ₂` on an interval,
//! solved in closed form by [`ConsensusPair::optimize`].

use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{gaussian_w2_squared, spd_sqrt, symmetrize, SpdMatrix, CLAMP_REL};
use crate::posterior::GaussianPosterior;

/// Leading coefficients at or below this multiple of `Tr Σ₁ + Tr Σ₂` are
/// treated as zero.
pub const DEGENERATE_REL: f64 = 1e-14;

/// Weights on the simplex together with the bias budget that produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsensusWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Bias tolerance. Zero for hand-picked weights.
    pub delta: f64,
    /// `‖μ₁ − μ₂‖₂`. Zero for hand-picked weights.
    pub delta_max: f64,
}

impl ConsensusWeights {
    /// Fixed weights `(1 − λ₂, λ₂)`.
    pub fn fixed(lambda2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda2) {
            return Err(Error::InvalidArgument("lambda2 must lie in [0, 1]".into()));
        }
        Ok(ConsensusWeights {
            lambda1: 1.0 - lambda2,
            lambda2,
            delta: 0.0,
            delta_max: 0.0,
        })
    }
}

/// Coefficients of the total variance as a function of `λ₂` (with
/// `λ₁ = 1 − λ₂`): `g(λ₂) = c + b λ₂ + a λ₂²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VarianceQuadratic {
    pub fn eval(&self, lambda2: f64) -> f64 {
        self.c + lambda2 * (self.b + lambda2 * self.a)
    }
}

/// Pair of elementary posteriors with the transport quantities precomputed,
/// so that many budgets and weights can be evaluated cheaply.
#[derive(Debug, Clone)]
pub struct ConsensusPair {
    p1: GaussianPosterior,
    p2: GaussianPosterior,
    transport: DMatrix<f64>,
    trace1: f64,
    trace2: f64,
    /// `Tr(Σ₁Φ) = Tr((Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
    trace_cross: f64,
    delta_max: f64,
}

impl ConsensusPair {
    pub fn new(p1: &GaussianPosterior, p2: &GaussianPosterior) -> Result<Self> {
        if p1.dim() != p2.dim() {
            return Err(Error::dim("posterior dimension", p1.dim(), p2.dim()));
        }
        let n = p1.dim();
        let r2 = spd_sqrt(p2.cov())?;
        let middle = symmetrize(&(r2.matrix() * p1.cov().matrix() * r2.matrix()));

        // One eigendecomposition of the middle factor serves both Φ and Tr(Σ₁Φ).
        let eig = nalgebra::SymmetricEigen::new(middle);
        let max = eig.eigenvalues.max();
        let floor = CLAMP_REL * max;
        if !(max > 0.0) || eig.eigenvalues.min() < -floor {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: eig.eigenvalues.min(),
            });
        }
        let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(floor)));
        let q = &eig.eigenvectors;
        let inv_root = symmetrize(&(DMatrix::from_fn(n, n, |i, j| q[(i, j)] / roots[j]) * q.transpose()));
        let transport = symmetrize(&(r2.matrix() * inv_root * r2.matrix()));
        let trace_cross = roots.sum();

        Ok(ConsensusPair {
            p1: p1.clone(),
            p2: p2.clone(),
            transport,
            trace1: p1.cov().trace(),
            trace2: p2.cov().trace(),
            trace_cross,
            delta_max: (p1.mean() - p2.mean()).norm(),
        })
    }

    pub fn first(&self) -> &GaussianPosterior {
        &self.p1
    }

    pub fn second(&self) -> &GaussianPosterior {
        &self.p2
    }

    /// The transport map `Φ`.
    pub fn transport(&self) -> &DMatrix<f64> {
        &self.transport
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn trace_cross(&self) -> f64 {
        self.trace_cross
    }

    pub fn variance_quadratic(&self) -> VarianceQuadratic {
        VarianceQuadratic {
            a: self.trace1 + self.trace2 - 2.0 * self.trace_cross,
            b: 2.0 * (self.trace_cross - self.trace1),
            c: self.trace1,
        }
    }

    /// Total variance of the barycenter at weights `λ`.
    pub fn total_variance(&self, w: &ConsensusWeights) -> f64 {
        let (l1, l2) = (w.lambda1, w.lambda2);
        l1 * l1 * self.trace1 + 2.0 * l1 * l2 * self.trace_cross + l2 * l2 * self.trace2
    }

    /// Largest admissible `λ₂` under budget `δ`.
    fn budget_cap(&self, delta: f64) -> f64 {
        if self.delta_max == 0.0 {
            1.0
        } else {
            (delta / self.delta_max).min(1.0)
        }
    }

    /// Variance-minimizing weights with `λ₂ ‖μ₁ − μ₂‖ ≤ δ`.
    pub fn optimize(&self, delta: f64) -> Result<ConsensusWeights> {
        if !(delta >= 0.0) {
            return Err(Error::InvalidArgument("bias tolerance must be non-negative".into()));
        }
        let cap = self.budget_cap(delta);
        let VarianceQuadratic { a, b, .. } = self.variance_quadratic();
        let scale = (self.trace1 + self.trace2).max(f64::MIN_POSITIVE);
        let lambda2 = if a > DEGENERATE_REL * scale {
            (-b / (2.0 * a)).clamp(0.0, cap)
        } else if b > DEGENERATE_REL * scale {
            0.0
        } else {
            // decreasing or constant: spend the whole budget
            cap
        };
        Ok(ConsensusWeights {
            lambda1: 1.0 - lambda2,
            lambda2,
            delta,
            delta_max: self.delta_max,
        })
    }

    pub fn barycenter(&self, w: &ConsensusWeights) -> Result<GaussianPosterior> {
        check_simplex(w)?;
        if w.lambda2 == 0.0 {
            return Ok(self.p1.clone());
        }
        if w.lambda1 == 0.0 {
            return Ok(self.p2.clone());
        }
        let n = self.p1.dim();
        let mean = self.p1.mean() * w.lambda1 + self.p2.mean() * w.lambda2;
        let map = DMatrix::<f64>::identity(n, n) * w.lambda1 + &self.transport * w.lambda2;
        let cov = symmetrize(&(&map * self.p1.cov().matrix() * &map));
        GaussianPosterior::new(mean, SpdMatrix::new(cov)?)
    }

    /// `count` equi-spaced budgets from `0` to `δ_max` inclusive.
    pub fn delta_grid(&self, count: usize) -> Result<Vec<f64>> {
        if count < 2 {
            return Err(Error::InvalidArgument("delta grid needs at least two points".into()));
        }
        let steps = (count - 1) as f64;
        let mut grid: Vec<f64> = (0..count).map(|i| self.delta_max * i as f64 / steps).collect();
        grid[count - 1] = self.delta_max;
        Ok(grid)
    }
}

fn check_simplex(w: &ConsensusWeights) -> Result<()> {
    let ok = w.lambda1 >= 0.0 && w.lambda2 >= 0.0 && ((w.lambda1 + w.lambda2) - 1.0).abs() <= 1e-12;
    if !ok {
        return Err(Error::InvalidArgument("weights must lie on the probability simplex".into()));
    }
    Ok(())
}

pub fn barycenter(p1: &GaussianPosterior, p2: &GaussianPosterior, w: &ConsensusWeights) -> Result<GaussianPosterior> {
    ConsensusPair::new(p1, p2)?.barycenter(w)
}

/// `λ₁ W₂²(candidate, p1) + λ₂ W₂²(candidate, p2)`.
pub fn barycenter_objective(
    p1: &GaussianPosterior,
    p2: &GaussianPosterior,
    candidate: &GaussianPosterior,
    w: &ConsensusWeights,
) -> Result<f64> {
    if p1.dim() != p2.dim() || candidate.dim() != p1.dim() {
        return Err(Error::dim("gaussian dimension", p1.dim(), candidate.dim()));
    }
    let mut total = 0.0;
    if w.lambda1 != 0.0 {
        total += w.lambda1 * gaussian_w2_squared(candidate, p1)?;
    }
    if w.lambda2 != 0.0 {
        total += w.lambda2 * gaussian_w2_squared(candidate, p2)?;
    }
    Ok(total)
}

pub fn optimize_weights(p1: &GaussianPosterior, p2: &GaussianPosterior, delta: f64) -> Result<ConsensusWeights> {
    ConsensusPair::new(p1, p2)?.optimize(delta)
}

pub fn delta_grid(p1: &GaussianPosterior, p2: &GaussianPosterior, count: usize) -> Result<Vec<f64>> {
    if p1.dim() != p2.dim() {
        return Err(Error::dim("posterior dimension", p1.dim(), p2.dim()));
    }
    if count < 2 {
        return Err(Error::InvalidArgument("delta grid needs at least two points".into()));
    }
    let delta_max = (p1.mean() - p2.mean()).norm();
    let steps = (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| delta_max * i as f64 / steps).collect();
    grid[count - 1] = delta_max;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::random_spd;
    use crate::rng::substream;
    use nalgebra::DVector;
    use rand::Rng;

    fn g1(m: f64, v: f64) -> GaussianPosterior {
        GaussianPosterior::new(DVector::from_element(1, m), SpdMatrix::from_diagonal(&[v]).unwrap()).unwrap()
    }

    fn random_gaussian<R: Rng>(rng: &mut R, n: usize) -> GaussianPosterior {
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        GaussianPosterior::new(mean, SpdMatrix::new(random_spd(rng, n, 0.1)).unwrap()).unwrap()
    }

    #[test]
    fn barycenter_endpoints_and_scalar_rule() {
        let (p1, p2) = (g1(0.0, 4.0), g1(2.0, 1.0));
        let b = barycenter(&p1, &p2, &ConsensusWeights::fixed(0.0).unwrap()).unwrap();
        assert_eq!(b, p1);
        let b = barycenter(&p1, &p2, &ConsensusWeights::fixed(0.5).unwrap()).unwrap();
        assert!((b.mean()[0] - 1.0).abs() < 1e-12);
        assert!((b.cov().matrix()[(0, 0)] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn equal_covariances_give_identity_transport() {
        let mut rng = substream(1, 0);
        let s = SpdMatrix::new(random_spd(&mut rng, 3, 0.3)).unwrap();
        let p1 = GaussianPosterior::new(DVector::from_vec(alloc::vec![1.0, 0.0, -1.0]), s.clone()).unwrap();
        let p2 = GaussianPosterior::new(DVector::from_vec(alloc::vec![0.0, 2.0, 1.0]), s.clone()).unwrap();
        let pair = ConsensusPair::new(&p1, &p2).unwrap();
        assert!((pair.transport() - DMatrix::identity(3, 3)).norm() < 1e-10);
        let b = pair.barycenter(&ConsensusWeights::fixed(0.3).unwrap()).unwrap();
        assert!((b.cov().matrix() - s.matrix()).norm() < 1e-10);
        assert!((b.mean() - (p1.mean() * 0.7 + p2.mean() * 0.3)).norm() < 1e-15);
    }

    #[test]
    fn objective_examples() {
        let (p1, p2) = (g1(0.0, 4.0), g1(2.0, 1.0));
        let w10 = ConsensusWeights::fixed(0.0).unwrap();
        let w01 = ConsensusWeights::fixed(1.0).unwrap();
        assert!(barycenter_objective(&p1, &p2, &p1, &w10).unwrap().abs() < 1e-14);
        let w2 = gaussian_w2_squared(&p1, &p2).unwrap();
        assert!((barycenter_objective(&p1, &p2, &p1, &w01).unwrap() - w2).abs() < 1e-14);
        let half = ConsensusWeights::fixed(0.5).unwrap();
        let b = barycenter(&p1, &p2, &half).unwrap();
        assert!((barycenter_objective(&p1, &p2, &b, &half).unwrap() - 1.25).abs() < 1e-12);
    }

    #[test]
    fn scalar_optimum_is_capped_by_budget() {
        let (p1, p2) = (g1(0.0, 4.0), g1(2.0, 1.0));
        let w = optimize_weights(&p1, &p2, 1.0).unwrap();
        assert!((w.lambda2 - 0.5).abs() < 1e-15);
        assert!((w.lambda1 - 0.5).abs() < 1e-15);
        // grid oracle on (2λ₁ + λ₂)², the scalar total variance
        let best = (0..=1000)
            .map(|k| k as f64 / 1000.0)
            .filter(|l2| l2 * 2.0 <= 1.0 + 1e-12)
            .map(|l2| (l2, libm::pow(2.0 * (1.0 - l2) + l2, 2.0)))
            .fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assert!((best.0 - w.lambda2).abs() <= 1e-3);
    }

    #[test]
    fn zero_budget_returns_first_posterior() {
        let mut rng = substream(2, 0);
        let (p1, p2) = (random_gaussian(&mut rng, 3), random_gaussian(&mut rng, 3));
        let pair = ConsensusPair::new(&p1, &p2).unwrap();
        let w = pair.optimize(0.0).unwrap();
        assert_eq!((w.lambda1, w.lambda2), (1.0, 0.0));
        assert_eq!(pair.barycenter(&w).unwrap(), p1);
    }

    #[test]
    fn negative_budget_rejected() {
        let (p1, p2) = (g1(0.0, 4.0), g1(2.0, 1.0));
        assert!(matches!(optimize_weights(&p1, &p2, -0.1), Err(Error::InvalidArgument(_))));
        assert!(matches!(optimize_weights(&p1, &p2, f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identical_means_leave_constraint_vacuous() {
        let (p1, p2) = (g1(1.0, 4.0), g1(1.0, 1.0));
        let pair = ConsensusPair::new(&p1, &p2).unwrap();
        assert_eq!(pair.delta_max(), 0.0);
        let w = pair.optimize(0.0).unwrap();
        assert_eq!(w.lambda2, 1.0);
        assert_eq!(pair.delta_grid(4).unwrap(), alloc::vec![0.0; 4]);
    }

    #[test]
    fn identical_posteriors_take_full_budget() {
        let (p, q) = (g1(0.0, 2.0), g1(1.0, 2.0));
        let w = optimize_weights(&p, &q, 0.25).unwrap();
        assert!((w.lambda2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn grid_examples() {
        let (p1, p2) = (g1(0.0, 1.0), g1(9.0, 1.0));
        let grid = delta_grid(&p1, &p2, 10).unwrap();
        let expected: alloc::vec::Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(grid, expected);
        assert_eq!(delta_grid(&p1, &p2, 2).unwrap(), alloc::vec![0.0, 9.0]);
        assert!(delta_grid(&p1, &p2, 1).is_err());
        assert_eq!(ConsensusPair::new(&p1, &p2).unwrap().delta_grid(10).unwrap(), grid);
    }

    #[test]
    fn variance_formula_and_bias_linearity() {
        let mut rng = substream(3, 0);
        for k in 0..40 {
            let n = 1 + k % 5;
            let (p1, p2) = (random_gaussian(&mut rng, n), random_gaussian(&mut rng, n));
            let pair = ConsensusPair::new(&p1, &p2).unwrap();
            for step in 0..=10 {
                let w = ConsensusWeights::fixed(step as f64 / 10.0).unwrap();
                let b = pair.barycenter(&w).unwrap();
                assert!((b.cov().trace() - pair.total_variance(&w)).abs() <= 1e-9);
                let drift = (b.mean() - p1.mean()).norm();
                assert!((drift - w.lambda2 * pair.delta_max()).abs() <= 1e-12 * (1.0 + pair.delta_max()));
                assert!((pair.variance_quadratic().eval(w.lambda2) - pair.total_variance(&w)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn endpoint_consistency() {
        let mut rng = substream(4, 0);
        for n in 1..6 {
            let (p1, p2) = (random_gaussian(&mut rng, n), random_gaussian(&mut rng, n));
            let pair = ConsensusPair::new(&p1, &p2).unwrap();
            // transport maps Σ₁ onto Σ₂
            let pushed = pair.transport() * p1.cov().matrix() * pair.transport();
            assert!((pushed - p2.cov().matrix()).norm() <= 1e-10);
        }
    }
}
