//! Mask generators for the three missing mechanisms.

use rand::Rng;

use crate::error::{Error, Result};
use crate::panel::{unobserved_rows, MissingMask, ReturnsPanel};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSpec {
    /// Each training entry independently missing with probability `p`.
    Mcar { p: f64 },
    /// The first `⌊fraction · T_train⌋` training periods entirely missing.
    Block { fraction: f64 },
    /// Training entries with `|value| > threshold` missing.
    ByValue { threshold: f64 },
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaskSpec::Mcar { p } if !(0.0..=1.0).contains(&p) => {
                Err(Error::InvalidArgument("mcar probability must lie in [0, 1]".into()))
            }
            MaskSpec::Block { fraction } if !(0.0..1.0).contains(&fraction) => Err(Error::InvalidArgument(
                "block fraction must lie in [0, 1); a full block leaves rows unobserved".into(),
            )),
            MaskSpec::ByValue { threshold } if !(threshold > 0.0) => {
                Err(Error::InvalidArgument("by-value threshold must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Whether repeated draws can differ.
    pub fn is_random(&self) -> bool {
        matches!(self, MaskSpec::Mcar { .. })
    }
}

/// Number of leading training periods masked by a block of `fraction`.
pub fn block_len(fraction: f64, train: usize) -> usize {
    libm::floor(fraction * train as f64) as usize
}

/// Generates a mask and checks that every row keeps an observed training
/// entry. A violation returns [`Error::UnobservedRows`]; callers may retry
/// an MCAR mask with a fresh seed.
pub fn generate_mask(panel: &ReturnsPanel, spec: &MaskSpec, seed: u64) -> Result<MissingMask> {
    spec.validate()?;
    let n = panel.n_assets();
    let split = panel.split();
    let mask = match *spec {
        MaskSpec::Mcar { p } => {
            let mut rng = substream(seed, 0);
            MissingMask::from_fn(n, split, |_, _| rng.random::<f64>() < p)
        }
        MaskSpec::Block { fraction } => {
            let len = block_len(fraction, split.train);
            MissingMask::from_fn(n, split, |_, t| t < len)
        }
        MaskSpec::ByValue { threshold } => {
            let values = panel.values();
            MissingMask::from_fn(n, split, |i, t| libm::fabs(values[(i, t)]) > threshold)
        }
    };
    let rows = unobserved_rows(&mask, split.train);
    if !rows.is_empty() {
        return Err(Error::UnobservedRows(rows));
    }
    Ok(mask)
}
