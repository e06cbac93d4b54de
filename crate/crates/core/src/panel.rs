//! Return panels, missing masks and the projections between full and
//! observed/missing coordinates of a single period.
//!
//! Panels are stored asset-by-period (`n` rows, `T` columns). Periods are
//! split into a training block, a testing block and an out-of-sample block,
//! in that order. Only training entries may ever be masked.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lengths of the training, testing and out-of-sample blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Split {
    pub train: usize,
    pub test: usize,
    pub oos: usize,
}

impl Split {
    pub fn new(train: usize, test: usize, oos: usize) -> Result<Self> {
        if train == 0 {
            return Err(Error::InvalidArgument("training block must be non-empty".into()));
        }
        Ok(Split { train, test, oos })
    }

    pub fn total(&self) -> usize {
        self.train + self.test + self.oos
    }

    /// End (exclusive) of the testing block.
    pub fn train_test(&self) -> usize {
        self.train + self.test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    values: DMatrix<f64>,
    split: Split,
}

impl ReturnsPanel {
    pub fn new(values: DMatrix<f64>, split: Split) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidArgument("panel needs at least one asset".into()));
        }
        if values.ncols() != split.total() {
            return Err(Error::dim("panel periods", split.total(), values.ncols()));
        }
        for t in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, t)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: t });
                }
            }
        }
        Ok(ReturnsPanel { values, split })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn n_assets(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Boolean `n x T` matrix, `true` marking a missing entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    n: usize,
    periods: usize,
    train: usize,
    // column-major, matching the panel layout
    cells: Vec<bool>,
}

impl MissingMask {
    /// Builds a mask from column-major cells. Cells outside the training
    /// block must be `false`.
    pub fn new(n: usize, split: Split, cells: Vec<bool>) -> Result<Self> {
        let periods = split.total();
        if cells.len() != n * periods {
            return Err(Error::dim("mask cells", n * periods, cells.len()));
        }
        for t in split.train..periods {
            for i in 0..n {
                if cells[t * n + i] {
                    return Err(Error::MaskOutsideTraining { row: i, col: t });
                }
            }
        }
        Ok(MissingMask {
            n,
            periods,
            train: split.train,
            cells,
        })
    }

    /// Builds a mask by evaluating `f(asset, period)` on the training block.
    pub fn from_fn(n: usize, split: Split, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let periods = split.total();
        let mut cells = vec![false; n * periods];
        for t in 0..split.train {
            for i in 0..n {
                cells[t * n + i] = f(i, t);
            }
        }
        MissingMask {
            n,
            periods,
            train: split.train,
            cells,
        }
    }

    pub fn none(n: usize, split: Split) -> Self {
        Self::from_fn(n, split, |_, _| false)
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    pub fn n_periods(&self) -> usize {
        self.periods
    }

    pub fn is_missing(&self, asset: usize, period: usize) -> bool {
        self.cells[period * self.n + asset]
    }

    pub fn column(&self, period: usize) -> &[bool] {
        &self.cells[period * self.n..(period + 1) * self.n]
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn column_has_missing(&self, period: usize) -> bool {
        self.column(period).iter().any(|&c| c)
    }

    pub(crate) fn check_matches(&self, panel: &ReturnsPanel) -> Result<()> {
        if self.n != panel.n_assets() {
            return Err(Error::dim("mask assets", panel.n_assets(), self.n));
        }
        if self.periods != panel.n_periods() {
            return Err(Error::dim("mask periods", panel.n_periods(), self.periods));
        }
        if self.train != panel.split().train {
            return Err(Error::dim("mask training block", panel.split().train, self.train));
        }
        Ok(())
    }
}

/// Which coordinates of a period a projection keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Missing,
    Observed,
}

/// Missing and observed index sets of one period, both ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSplit {
    pub missing: Vec<usize>,
    pub observed: Vec<usize>,
}

impl IndexSplit {
    pub fn from_mask_column(mask_column: &[bool]) -> Self {
        let mut missing = Vec::new();
        let mut observed = Vec::new();
        for (i, &m) in mask_column.iter().enumerate() {
            if m {
                missing.push(i);
            } else {
                observed.push(i);
            }
        }
        IndexSplit { missing, observed }
    }

    pub fn part(&self, which: Part) -> &[usize] {
        match which {
            Part::Missing => &self.missing,
            Part::Observed => &self.observed,
        }
    }

    pub fn len(&self) -> usize {
        self.missing.len() + self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One period as seen through its mask: observed values and index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSlice {
    pub period: usize,
    pub observed_values: DVector<f64>,
    pub indices: IndexSplit,
}

impl ObservedSlice {
    pub fn new(panel: &ReturnsPanel, mask: &MissingMask, period: usize) -> Result<Self> {
        mask.check_matches(panel)?;
        if period >= panel.n_periods() {
            return Err(Error::IndexOutOfRange {
                index: period,
                len: panel.n_periods(),
            });
        }
        let indices = IndexSplit::from_mask_column(mask.column(period));
        let observed_values = select(panel.values().column(period).iter().copied(), &indices.observed);
        Ok(ObservedSlice {
            period,
            observed_values,
            indices,
        })
    }
}

fn select(values: impl Iterator<Item = f64>, idx: &[usize]) -> DVector<f64> {
    let all: Vec<f64> = values.collect();
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| all[i]))
}

/// Entries of `column` on the missing (`P_M z`) or observed (`P⊥_M z`) coordinates.
pub fn project(column: &[f64], mask_column: &[bool], which: Part) -> Result<DVector<f64>> {
    if column.len() != mask_column.len() {
        return Err(Error::dim("projected vector", mask_column.len(), column.len()));
    }
    let idx = IndexSplit::from_mask_column(mask_column);
    Ok(select(column.iter().copied(), idx.part(which)))
}

/// Block of a square matrix with rows from `rows` and columns from `cols`.
/// Equal parts give the principal submatrix, `(Missing, Observed)` the cross block.
pub fn project_matrix(
    matrix: &DMatrix<f64>,
    mask_column: &[bool],
    rows: Part,
    cols: Part,
) -> Result<DMatrix<f64>> {
    if !matrix.is_square() {
        return Err(Error::NotSquare {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    if matrix.nrows() != mask_column.len() {
        return Err(Error::dim("projected matrix", mask_column.len(), matrix.nrows()));
    }
    let idx = IndexSplit::from_mask_column(mask_column);
    Ok(submatrix(matrix, idx.part(rows), idx.part(cols)))
}

pub(crate) fn submatrix(matrix: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| matrix[(rows[r], cols[c])])
}

/// Scatters a `d x d` block onto the `observed` coordinates of an `n x n` zero matrix.
pub fn embed_observed_precision(
    sub_precision: &DMatrix<f64>,
    observed: &[usize],
    n: usize,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(n, n);
    scatter_add(&mut out, sub_precision, observed)?;
    Ok(out)
}

/// `target[idx, idx] += block`.
pub(crate) fn scatter_add(target: &mut DMatrix<f64>, block: &DMatrix<f64>, idx: &[usize]) -> Result<()> {
    if block.nrows() != idx.len() || block.ncols() != idx.len() {
        return Err(Error::dim("embedded block", idx.len(), block.nrows()));
    }
    let n = target.nrows();
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    for (c, &j) in idx.iter().enumerate() {
        for (r, &i) in idx.iter().enumerate() {
            target[(i, j)] += block[(r, c)];
        }
    }
    Ok(())
}

/// Rows with no observed entry in the first `horizon` periods.
pub fn unobserved_rows(mask: &MissingMask, horizon: usize) -> Vec<usize> {
    let horizon = horizon.min(mask.n_periods());
    (0..mask.n_assets())
        .filter(|&i| (0..horizon).all(|t| mask.is_missing(i, t)))
        .collect()
}

/// Offending rows for the at-least-one-observation-per-row condition on the
/// training block; empty means the mask is admissible.
pub fn validate_row_coverage(panel: &ReturnsPanel, mask: &MissingMask) -> Result<Vec<usize>> {
    mask.check_matches(panel)?;
    Ok(unobserved_rows(mask, panel.split().train))
}
