//! The repetition loop behind `bvmi run`.
//!
//! Seeds fan out from the master seed: repetition `k` gets
//! `derive_seed(seed, REPETITION, k)`, and from that its synthetic panel
//! (`PANEL, 0`), its mask attempts (`MASK, attempt`) and its imputations
//! (`IMPUTE, 0`). Repetitions run on a thread pool and are reduced in index
//! order, so the output does not depend on the thread count.

use std::io;
use std::path::Path;

use bvmi_core::evaluation::{ecmse, EcmseRow};
use bvmi_core::experiment::{run_repetition, RepetitionOutcome, RepetitionSpec};
use bvmi_core::rng::{derive_seed, tag};
use bvmi_core::{
    generate_mask, generate_synthetic_panel, FactorModelSpec, MaskSpec, MissingMask, NoiseModel, Prior,
    ReturnsPanel, Split,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CovarianceWindow, DataSource, ExperimentConfig, WindowMode};
use crate::error::{Error, Result};
use crate::ingest::{fit_covariance, IngestError, SourcePanel};

pub const MAX_MASK_ATTEMPTS: u64 = 100;

/// Largest share of repetitions that may abort before the run fails.
pub const MAX_ABORTED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub delta: f64,
    pub delta_over_delta_max: f64,
    pub lambda2_star: f64,
    pub ec_bias_sq: f64,
    pub ec_var: f64,
    pub ec_mse: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionSummary {
    pub index: usize,
    pub delta_max: f64,
    pub nested: bool,
    pub mask_attempts: u64,
    pub missing_cells: usize,
}

#[derive(Debug, Clone)]
pub struct AbortedRepetition {
    pub index: usize,
    pub error: bvmi_core::Error,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub seed: u64,
    /// One row per grid point, `δ/δ_max` ascending.
    pub rows: Vec<CsvRow>,
    pub ecmse: Vec<EcmseRow>,
    pub repetitions: Vec<RepetitionSummary>,
    pub aborted: Vec<AbortedRepetition>,
}

impl ExperimentReport {
    /// Grid index with the smallest ECMSE.
    pub fn ecmse_argmin(&self) -> usize {
        (0..self.rows.len())
            .min_by(|&a, &b| self.rows[a].ec_mse.total_cmp(&self.rows[b].ec_mse))
            .unwrap_or(0)
    }

    /// Whether the ECMSE minimum sits strictly inside the grid.
    pub fn interior_minimizer(&self) -> bool {
        let i = self.ecmse_argmin();
        i > 0 && i + 1 < self.rows.len()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let output = |source| Error::Output {
            path: path.to_owned(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(output)?;
        }
        let file = std::fs::File::create(path).map_err(output)?;
        self.write_csv(io::BufWriter::new(file)).map_err(output)
    }
}

enum PanelSource {
    Synthetic {
        spec: FactorModelSpec,
        noise: NoiseModel,
    },
    File {
        source: SourcePanel,
        window: WindowMode,
        start_offset: usize,
        /// Fitted once when the covariance uses the whole source.
        noise: Option<NoiseModel>,
        ridge: Option<f64>,
    },
}

struct Prepared {
    source: PanelSource,
    split: Split,
    mask: MaskSpec,
    prior: Prior,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let split = config.data.split().to_split()?;
    let mask = config.mask.to_spec();
    let (source, n) = match &config.data {
        DataSource::Synthetic(s) => {
            let spec = s.factor_model()?;
            let noise = spec.noise_model()?;
            let n = spec.n_assets();
            (PanelSource::Synthetic { spec, noise }, n)
        }
        DataSource::File(f) => {
            let source = SourcePanel::read(&f.path, &f.schema)?;
            let last_offset = match f.window {
                WindowMode::Fixed => f.start_offset,
                WindowMode::Rolling => f.start_offset + config.repetitions - 1,
            };
            if last_offset + split.total() > source.n_rows() {
                return Err(IngestError::TooShort {
                    path: f.path.clone(),
                    needed: split.total(),
                    offset: last_offset,
                    found: source.n_rows(),
                }
                .into());
            }
            let noise = match f.covariance {
                CovarianceWindow::FullSource => Some(fit_covariance(&source.values, f.ridge)?),
                CovarianceWindow::TrainTest => None,
            };
            let n = source.values.nrows();
            log::info!(
                "loaded {} assets x {} dates from {}",
                n,
                source.n_rows(),
                f.path.display()
            );
            let source = PanelSource::File {
                source,
                window: f.window,
                start_offset: f.start_offset,
                noise,
                ridge: f.ridge,
            };
            (source, n)
        }
    };
    let prior = config.prior.to_prior(n)?;
    Ok(Prepared {
        source,
        split,
        mask,
        prior,
    })
}

fn repetition_panel(prep: &Prepared, k: usize, rep_seed: u64) -> bvmi_core::Result<(ReturnsPanel, NoiseModel)> {
    match &prep.source {
        PanelSource::Synthetic { spec, noise } => {
            let panel = generate_synthetic_panel(spec, prep.split, derive_seed(rep_seed, tag::PANEL, 0))?;
            Ok((panel, noise.clone()))
        }
        PanelSource::File {
            source,
            window,
            start_offset,
            noise,
            ridge,
        } => {
            let offset = match window {
                WindowMode::Fixed => *start_offset,
                WindowMode::Rolling => start_offset + k,
            };
            let panel = source
                .window(prep.split, offset)
                .expect("window bounds checked before the run");
            let noise = match noise {
                Some(n) => n.clone(),
                None => fit_covariance(&panel.values().columns(0, prep.split.train_test()).into_owned(), *ridge)?,
            };
            Ok((panel, noise))
        }
    }
}

/// Draws a mask, retrying random mechanisms while a row stays unobserved.
fn repetition_mask(panel: &ReturnsPanel, spec: &MaskSpec, rep_seed: u64) -> bvmi_core::Result<(MissingMask, u64)> {
    let attempts = if spec.is_random() { MAX_MASK_ATTEMPTS } else { 1 };
    let mut last = None;
    for attempt in 0..attempts {
        match generate_mask(panel, spec, derive_seed(rep_seed, tag::MASK, attempt)) {
            Ok(mask) => return Ok((mask, attempt + 1)),
            Err(e @ bvmi_core::Error::UnobservedRows(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn run_one(
    config: &ExperimentConfig,
    prep: &Prepared,
    k: usize,
) -> bvmi_core::Result<(RepetitionSummary, RepetitionOutcome)> {
    let rep_seed = derive_seed(config.seed, tag::REPETITION, k as u64);
    let (panel, noise) = repetition_panel(prep, k, rep_seed)?;
    let (mask, mask_attempts) = repetition_mask(&panel, &prep.mask, rep_seed)?;
    let outcome = run_repetition(&RepetitionSpec {
        panel: &panel,
        mask: &mask,
        noise: &noise,
        prior: &prep.prior,
        grid_size: config.grid_size,
        imputations: config.imputations,
        mode: config.mode.into(),
        imputation_seed: derive_seed(rep_seed, tag::IMPUTE, 0),
    })?;
    log::debug!(
        "repetition {k}: {} missing cells, delta_max {:.6}, nested {}",
        mask.missing_count(),
        outcome.delta_max,
        outcome.nested
    );
    let summary = RepetitionSummary {
        index: k,
        delta_max: outcome.delta_max,
        nested: outcome.nested,
        mask_attempts,
        missing_cells: mask.missing_count(),
    };
    Ok((summary, outcome))
}

/// Runs every repetition and reduces them per grid point. `threads = 0`
/// lets the pool pick its size.
pub fn run_experiment(config: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    let prep = prepare(config)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let results: Vec<_> = pool.install(|| {
        (0..config.repetitions)
            .into_par_iter()
            .map(|k| run_one(config, &prep, k))
            .collect()
    });

    let mut repetitions = Vec::new();
    let mut outcomes = Vec::new();
    let mut aborted = Vec::new();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok((summary, outcome)) => {
                repetitions.push(summary);
                outcomes.push(outcome);
            }
            Err(error) => {
                log::warn!("repetition {index} aborted: {error}");
                aborted.push(AbortedRepetition { index, error });
            }
        }
    }
    let total = config.repetitions;
    if outcomes.is_empty() || aborted.len() as f64 > MAX_ABORTED_FRACTION * total as f64 {
        let count = aborted.len();
        let first = aborted.swap_remove(0);
        return Err(Error::TooManyAborted {
            aborted: count,
            total,
            first_index: first.index,
            first: first.error,
        });
    }

    let grid = config.grid_size;
    let mut rows = Vec::with_capacity(grid);
    let mut stats = Vec::with_capacity(grid);
    let count = outcomes.len() as f64;
    for i in 0..grid {
        let regrets: Vec<Vec<f64>> = outcomes.iter().map(|o| o.budgets[i].regrets.clone()).collect();
        let row = ecmse(&regrets)?;
        let delta = outcomes.iter().map(|o| o.budgets[i].weights.delta).sum::<f64>() / count;
        let lambda2 = outcomes.iter().map(|o| o.budgets[i].weights.lambda2).sum::<f64>() / count;
        rows.push(CsvRow {
            delta,
            delta_over_delta_max: i as f64 / (grid - 1) as f64,
            lambda2_star: lambda2,
            ec_bias_sq: row.ec_bias_sq,
            ec_var: row.ec_var,
            ec_mse: row.ec_mse,
            k: row.repetitions,
            m: row.imputations,
            seed: config.seed,
        });
        stats.push(row);
    }
    let report = ExperimentReport {
        seed: config.seed,
        rows,
        ecmse: stats,
        repetitions,
        aborted,
    };
    log::info!(
        "{} repetitions ({} aborted); ECMSE minimum at delta/delta_max = {:.4}{}",
        report.repetitions.len(),
        report.aborted.len(),
        report.rows[report.ecmse_argmin()].delta_over_delta_max,
        if report.interior_minimizer() { " (interior)" } else { "" }
    );
    Ok(report)
}
