//! One repetition of the bias-variance study on a fixed masked panel:
//! elementary posteriors, the δ-grid, consensus weights, `M` imputations per
//! budget and their regrets.
//!
//! The imputation seed is shared by every budget, so budget `i` and budget
//! `i'` draw their `θ`s from the same standard normals (common random
//! numbers) and differ only through the consensus posterior.

use alloc::vec::Vec;

use crate::consensus::{ConsensusPair, ConsensusWeights};
use crate::error::{Error, Result};
use crate::evaluation::{normalize_weights, RegretEvaluator};
use crate::imputer::{ImputationMode, Imputer, ThetaSampler};
use crate::panel::{validate_row_coverage, MissingMask, ReturnsPanel};
use crate::posterior::{posterior_k, nestedness_check, Horizon, NoiseModel, Prior};
use crate::rng::substream;

#[derive(Debug, Clone, Copy)]
pub struct RepetitionSpec<'a> {
    pub panel: &'a ReturnsPanel,
    pub mask: &'a MissingMask,
    pub noise: &'a NoiseModel,
    pub prior: &'a Prior,
    pub grid_size: usize,
    pub imputations: usize,
    pub mode: ImputationMode,
    pub imputation_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetOutcome {
    pub weights: ConsensusWeights,
    /// Total variance `Tr Σ̂` of the consensus posterior.
    pub total_variance: f64,
    pub regrets: Vec<f64>,
    /// Imputations whose training sum vanished (zero weights).
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionOutcome {
    pub delta_max: f64,
    /// `Σ₁ ⪰ Σ₂` held for this repetition.
    pub nested: bool,
    pub budgets: Vec<BudgetOutcome>,
}

pub fn run_repetition(spec: &RepetitionSpec<'_>) -> Result<RepetitionOutcome> {
    let offending = validate_row_coverage(spec.panel, spec.mask)?;
    if !offending.is_empty() && matches!(spec.prior, Prior::Flat) {
        return Err(Error::UnobservedRows(offending));
    }
    if spec.imputations == 0 {
        return Err(Error::InvalidArgument("imputation count must be at least 1".into()));
    }
    let p1 = posterior_k(spec.panel, spec.mask, spec.noise, spec.prior, Horizon::TrainOnly)?;
    let p2 = posterior_k(spec.panel, spec.mask, spec.noise, spec.prior, Horizon::Full)?;
    let nested = nestedness_check(&p1, &p2)?.nested;
    let pair = ConsensusPair::new(&p1, &p2)?;
    let grid = pair.delta_grid(spec.grid_size)?;

    let imputer = Imputer::new(spec.panel, spec.mask, spec.noise, spec.mode)?;
    let sum_map = imputer.training_sum_map();
    let evaluator = RegretEvaluator::new(spec.panel)?;

    let mut budgets = Vec::with_capacity(grid.len());
    for &delta in &grid {
        let weights = pair.optimize(delta)?;
        let consensus = pair.barycenter(&weights)?;
        let sampler = ThetaSampler::new(&consensus)?;
        let mut regrets = Vec::with_capacity(spec.imputations);
        let mut degenerate = 0;
        for j in 0..spec.imputations {
            let mut rng = substream(spec.imputation_seed, j as u64);
            let theta = sampler.draw(&mut rng);
            let mut sum = sum_map.apply(&theta);
            if spec.mode == ImputationMode::WithNoise {
                let eta = imputer.draw_noise(&mut rng);
                sum += imputer.noise_training_sum(&eta);
            }
            let w = normalize_weights(sum);
            degenerate += usize::from(w.degenerate);
            regrets.push(evaluator.evaluate(&w.w).2);
        }
        budgets.push(BudgetOutcome {
            total_variance: consensus.cov().trace(),
            weights,
            regrets,
            degenerate,
        });
    }
    Ok(RepetitionOutcome {
        delta_max: pair.delta_max(),
        nested,
        budgets,
    })
}
