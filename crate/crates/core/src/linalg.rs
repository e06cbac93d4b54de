//! Symmetric positive-definite matrices and their spectral functions.
//!
//! Roots are taken through a symmetric eigendecomposition of `(S + Sᵀ)/2`,
//! with eigenvalues floored at `1e-12 * λ_max` to absorb round-off.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::posterior::GaussianPosterior;

/// Relative symmetry tolerance accepted at construction.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Relative eigenvalue floor used by the spectral functions.
pub const CLAMP_REL: f64 = 1e-12;

/// Dense symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Checks squareness, symmetry (relative to the largest entry) and strict
    /// positivity of the spectrum; stores the symmetrized matrix.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let sym = checked_symmetrize(matrix)?;
        if sym.nrows() == 0 {
            return Ok(SpdMatrix(sym));
        }
        let min = sym.clone().symmetric_eigenvalues().min();
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
        }
        Ok(SpdMatrix(sym))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Inverse through Cholesky, symmetrized.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let chol = cholesky(&self.0)?;
        Ok(SpdMatrix(symmetrize(&chol.inverse())))
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        cholesky(&self.0)
    }
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        min_eigenvalue: m.clone().symmetric_eigenvalues().min(),
    })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn checked_symmetrize(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    for (k, v) in m.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: k % m.nrows(),
                col: k / m.nrows(),
            });
        }
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (&m - m.transpose()).amax() / scale;
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(symmetrize(&m))
}

/// `Q f(Λ) Qᵀ` over the clamped spectrum of a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max().max(0.0);
    let floor = CLAMP_REL * max;
    let min = eig.eigenvalues.min();
    if min < -floor || max == 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let mapped = eig.eigenvalues.map(|l| f(l.max(floor)));
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| q[(i, j)] * mapped[j]);
    Ok(symmetrize(&(scaled * q.transpose())))
}

pub fn spd_sqrt(s: &SpdMatrix) -> Result<SpdMatrix> {
    spectral_map(&s.0, libm::sqrt).map(SpdMatrix)
}

pub fn spd_inv_sqrt(s: &SpdMatrix) -> Result<SpdMatrix> {
    spectral_map(&s.0, |l| 1.0 / libm::sqrt(l)).map(SpdMatrix)
}

/// Sum of square roots of the clamped spectrum, i.e. `Tr(S^{1/2})`.
pub(crate) fn trace_sqrt(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let ev = symmetrize(m).symmetric_eigenvalues();
    let max = ev.max().max(0.0);
    let floor = CLAMP_REL * max;
    if ev.min() < -floor {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: ev.min() });
    }
    Ok(ev.iter().map(|&l| libm::sqrt(l.max(0.0))).sum())
}

/// Factor `L` with `L Lᵀ = S` for a symmetric PSD `S`: lower Cholesky when it
/// succeeds, otherwise `Q Λ₊^{1/2}` from the eigendecomposition.
pub fn sampling_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if let Some(chol) = Cholesky::new(s.clone()) {
        return Ok(chol.unpack());
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let max = eig.eigenvalues.max().max(0.0);
    let tol = 1e-10 * max.max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let q = &eig.eigenvectors;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        q[(i, j)] * libm::sqrt(eig.eigenvalues[j].max(0.0))
    }))
}

/// Whether a symmetric matrix is PSD up to `tol * max(1, |λ|_max)`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> (bool, f64) {
    if m.nrows() == 0 {
        return (true, 0.0);
    }
    let ev = symmetrize(m).symmetric_eigenvalues();
    let scale = ev.amax().max(1.0);
    let min = ev.min();
    (min >= -tol * scale, min)
}

/// Squared 2-Wasserstein distance between two Gaussians:
/// `‖μ₁−μ₂‖² + Tr(Σ₁) + Tr(Σ₂) − 2 Tr((Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
pub fn gaussian_w2_squared(p1: &GaussianPosterior, p2: &GaussianPosterior) -> Result<f64> {
    if p1.dim() != p2.dim() {
        return Err(Error::dim("gaussian dimension", p1.dim(), p2.dim()));
    }
    let mean_term = (p1.mean() - p2.mean()).norm_squared();
    let r2 = spd_sqrt(p2.cov())?;
    let cross = r2.matrix() * p1.cov().matrix() * r2.matrix();
    let cov_term = p1.cov().trace() + p2.cov().trace() - 2.0 * trace_sqrt(&cross)?;
    Ok(mean_term + cov_term.max(0.0))
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use crate::rng::substream;
    use alloc::vec;

    fn diag(v: &[f64]) -> SpdMatrix {
        SpdMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(spd_sqrt(&SpdMatrix::identity(3)).unwrap(), SpdMatrix::identity(3));
        let r = spd_sqrt(&diag(&[4.0, 9.0])).unwrap();
        assert!((r.matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = spd_sqrt(&SpdMatrix::new(s.clone()).unwrap()).unwrap();
        assert!((r.matrix() * r.matrix() - &s).norm() / s.norm() < 1e-10);
        assert_eq!(r.matrix(), &r.matrix().transpose());
    }

    #[test]
    fn inv_sqrt_examples() {
        assert!((spd_inv_sqrt(&SpdMatrix::identity(2)).unwrap().matrix() - DMatrix::identity(2, 2)).norm() < 1e-15);
        let r = spd_inv_sqrt(&diag(&[4.0])).unwrap();
        assert!((r.matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        let mut rng = substream(11, 0);
        let s = SpdMatrix::new(random_spd(&mut rng, 5, 0.1)).unwrap();
        let r = spd_inv_sqrt(&s).unwrap();
        let resid = r.matrix() * s.matrix() * r.matrix() - DMatrix::identity(5, 5);
        assert!(resid.norm() <= 1e-8);
    }

    #[test]
    fn construction_errors() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(Error::NotSymmetric { .. })));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(indef.clone()), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(spectral_map(&indef, libm::sqrt), Err(Error::NotPositiveDefinite { .. })));
        assert!(matches!(
            SpdMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn roots_on_random_spd() {
        let mut rng = substream(3, 0);
        for k in 0..100 {
            let n = 1 + k % 20;
            let s = SpdMatrix::new(random_spd(&mut rng, n, 0.05)).unwrap();
            let r = spd_sqrt(&s).unwrap();
            let ri = spd_inv_sqrt(&s).unwrap();
            assert!((r.matrix() * r.matrix() - s.matrix()).norm() <= 1e-8);
            assert!((ri.matrix() * s.matrix() * ri.matrix() - DMatrix::identity(n, n)).norm() <= 1e-8);
        }
    }

    #[test]
    fn sqrt_commutes_with_orthogonal_conjugation() {
        let mut rng = substream(4, 0);
        for n in 1..8 {
            let s = random_spd(&mut rng, n, 0.2);
            let q = random_orthogonal(&mut rng, n);
            let lhs = spd_sqrt(&SpdMatrix::new(&q * &s * q.transpose()).unwrap()).unwrap();
            let rhs = &q * spd_sqrt(&SpdMatrix::new(s).unwrap()).unwrap().matrix() * q.transpose();
            assert!((lhs.matrix() - rhs).norm() <= 1e-8);
        }
    }

    fn g(mean: &[f64], cov: DMatrix<f64>) -> GaussianPosterior {
        GaussianPosterior::new(DVector::from_column_slice(mean), SpdMatrix::new(cov).unwrap()).unwrap()
    }

    #[test]
    fn w2_examples() {
        let a = g(&[0.0, 0.0], DMatrix::identity(2, 2));
        assert!(gaussian_w2_squared(&a, &a).unwrap().abs() < 1e-14);
        let b = g(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let c = g(&[3.0], DMatrix::from_element(1, 1, 1.0));
        assert!((gaussian_w2_squared(&b, &c).unwrap() - 9.0).abs() < 1e-12);
        let d = g(&[0.0], DMatrix::from_element(1, 1, 4.0));
        assert!((gaussian_w2_squared(&d, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(gaussian_w2_squared(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn w2_symmetric_and_triangle() {
        let mut rng = substream(5, 0);
        use rand::Rng;
        for k in 0..60 {
            let n = 1 + k % 5;
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let m: alloc::vec::Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                g(&m, random_spd(rng, n, 0.1))
            };
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let ab = gaussian_w2_squared(&a, &b).unwrap();
            let ba = gaussian_w2_squared(&b, &a).unwrap();
            assert!((ab - ba).abs() <= 1e-8);
            let bc = gaussian_w2_squared(&b, &c).unwrap();
            let ac = gaussian_w2_squared(&a, &c).unwrap();
            assert!(libm::sqrt(ac) <= libm::sqrt(ab) + libm::sqrt(bc) + 1e-7);
        }
    }

    #[test]
    fn sampling_factor_falls_back_on_singular() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = sampling_factor(&s).unwrap();
        assert!((&l * l.transpose() - s).norm() < 1e-12);
    }
}
