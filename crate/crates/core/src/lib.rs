//! Bias-variance multiple imputation of missing return panels.
//!
//! Two Gaussian posteriors of the mean return vector are formed from the
//! training block alone and from training plus testing blocks. A
//! 2-Wasserstein barycenter of the pair, with weights chosen to minimize total
//! variance under a budget on the drift away from the training-only mean,
//! drives conditional-Gaussian imputation of the masked training entries.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod consensus;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod imputer;
pub mod linalg;
pub mod missingness;
pub mod panel;
pub mod posterior;
pub mod rng;
pub mod synthetic;

pub use consensus::{barycenter, barycenter_objective, delta_grid, optimize_weights, ConsensusPair, ConsensusWeights};
pub use error::{Error, Result};
pub use evaluation::{ecmse, portfolio_weights, regret, EcmseRow, PortfolioResult};
pub use imputer::{
    conditional_model, impute_conditional_expectation, impute_with_noise, ImputationMode, ImputedPanel, Imputer,
};
pub use linalg::{gaussian_w2_squared, spd_inv_sqrt, spd_sqrt, SpdMatrix};
pub use missingness::{generate_mask, MaskSpec};
pub use panel::{MissingMask, ReturnsPanel, Split};
pub use posterior::{nestedness_check, posterior_k, GaussianPosterior, Horizon, NoiseModel, Prior};
pub use synthetic::{generate_synthetic_panel, FactorModelSpec};

pub use nalgebra;
