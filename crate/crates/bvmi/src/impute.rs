//! `bvmi impute`: fill the `NA` cells of one panel file at a chosen bias
//! budget and write the imputed panels next to each other.

use std::borrow::Cow;
use std::fs;
use std::path::PathBuf;

use bvmi_core::nalgebra::DMatrix;
use bvmi_core::panel::validate_row_coverage;
use bvmi_core::{
    posterior_k, ConsensusPair, ConsensusWeights, Horizon, Imputer, MissingMask, NoiseModel, Prior, ReturnsPanel,
    SpdMatrix,
};

use crate::config::{ImputeConfig, OmegaSource};
use crate::error::{Error, Result};
use crate::ingest::{fit_covariance, format_value, read_table, CellIssue, CellProblem, IngestError};

#[derive(Debug, Clone)]
pub struct ImputeOutcome {
    pub delta_max: f64,
    pub weights: ConsensusWeights,
    pub files: Vec<PathBuf>,
}

fn noise_model(omega: &OmegaSource, values: &DMatrix<f64>, missing: &DMatrix<bool>) -> Result<NoiseModel> {
    match omega {
        OmegaSource::CompleteRows { ridge } => {
            let complete: Vec<usize> = (0..values.ncols())
                .filter(|&t| !missing.column(t).iter().any(|&m| m))
                .collect();
            if complete.len() < 2 {
                return Err(Error::Config(format!(
                    "covariance needs at least 2 dates without missing cells, found {}",
                    complete.len()
                )));
            }
            Ok(fit_covariance(&values.select_columns(&complete), *ridge)?)
        }
        OmegaSource::Matrix(rows) => {
            let n = values.nrows();
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Config(format!("omega must be {n}x{n}")));
            }
            let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            let cov = SpdMatrix::new(m).map_err(|e| Error::Config(format!("omega: {e}")))?;
            Ok(NoiseModel::new(cov)?)
        }
    }
}

/// Writes `m` imputed copies of the configured window as
/// `imputed_001.csv`, ... in the output directory. Observed cells keep
/// their original text; imputed cells are written in file units with ten
/// significant digits.
pub fn impute_once(config: &ImputeConfig, delta: f64, m: usize) -> Result<ImputeOutcome> {
    if m == 0 {
        return Err(Error::Config("--m must be at least 1".into()));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Config("--delta must be a non-negative number".into()));
    }
    let split = config.split.to_split()?;
    let table = read_table(&config.input, &config.schema)?;
    let parsed = table.parse_values(config.schema.divisor, true)?;
    let (n, start, total) = (table.n_assets(), config.start_offset, split.total());
    if start + total > table.n_rows() {
        return Err(IngestError::TooShort {
            path: config.input.clone(),
            needed: total,
            offset: start,
            found: table.n_rows(),
        }
        .into());
    }
    let noise = noise_model(&config.omega, &parsed.values, &parsed.missing)?;

    let outside: Vec<CellIssue> = (split.train..total)
        .flat_map(|t| (0..n).map(move |i| (i, t)))
        .filter(|&(i, t)| parsed.missing[(i, start + t)])
        .map(|(i, t)| CellIssue {
            line: table.lines[start + t],
            column: table.assets[i].clone(),
            text: table.cells[start + t][i].clone(),
            problem: CellProblem::Missing,
        })
        .collect();
    if !outside.is_empty() {
        return Err(Error::Config(format!(
            "missing cells are only allowed in the training block: {}",
            IngestError::Cells {
                path: config.input.clone(),
                issues: outside
            }
        )));
    }

    let panel = ReturnsPanel::new(parsed.values.columns(start, total).into_owned(), split)?;
    let mask = MissingMask::from_fn(n, split, |i, t| parsed.missing[(i, start + t)]);
    let prior = config.prior.to_prior(n)?;
    let unobserved = validate_row_coverage(&panel, &mask)?;
    if !unobserved.is_empty() && matches!(prior, Prior::Flat) {
        let names: Vec<&str> = unobserved.iter().map(|&i| table.assets[i].as_str()).collect();
        return Err(Error::Config(format!(
            "assets with no observed training entry (flat prior needs one): {}",
            names.join(", ")
        )));
    }

    let p1 = posterior_k(&panel, &mask, &noise, &prior, Horizon::TrainOnly)?;
    let p2 = posterior_k(&panel, &mask, &noise, &prior, Horizon::Full)?;
    let pair = ConsensusPair::new(&p1, &p2)?;
    let weights = pair.optimize(delta)?;
    let consensus = pair.barycenter(&weights)?;
    log::info!(
        "delta_max {:.6}, lambda2 {:.6}, {} missing cells",
        pair.delta_max(),
        weights.lambda2,
        mask.missing_count()
    );
    let imputed = Imputer::new(&panel, &mask, &noise, config.mode.into())?.impute(&consensus, config.seed, m)?;

    let output = |source| Error::Output {
        path: config.output_dir.clone(),
        source,
    };
    fs::create_dir_all(&config.output_dir).map_err(output)?;
    let width = m.to_string().len().max(3);
    let dates = &table.date_text[start..start + total];
    let mut files = Vec::with_capacity(m);
    for (j, panel) in imputed.iter().enumerate() {
        let path = config.output_dir.join(format!("imputed_{:0width$}.csv", j + 1));
        crate::ingest::write_table(
            &path,
            config.schema.delimiter,
            &table.date_header,
            &table.assets,
            dates,
            |i, t| {
                if mask.is_missing(i, t) {
                    Cow::Owned(format_value(panel.values[(i, t)] * config.schema.divisor))
                } else {
                    Cow::Borrowed(table.cells[start + t][i].as_str())
                }
            },
        )
        .map_err(|source| Error::Output {
            path: path.clone(),
            source,
        })?;
        files.push(path);
    }
    Ok(ImputeOutcome {
        delta_max: pair.delta_max(),
        weights,
        files,
    })
}
