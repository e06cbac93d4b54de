//! Delimited return files.
//!
//! A file holds one table: a header row naming the date column and the asset
//! columns, then one row per date. Leading text (titles, notes) is skipped:
//! the header is the last non-blank line before the first row whose first
//! field parses as a date, and the table ends at the next blank line. Dates
//! are `YYYYMMDD` or ISO `YYYY-MM-DD` and must be strictly increasing.
//! A schema that names its date column instead takes the first line holding
//! that name as the header.
//!
//! Panels are stored assets-by-dates, divided by the schema's divisor.

use std::borrow::Cow;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use bvmi_core::nalgebra::DMatrix;
use bvmi_core::{NoiseModel, ReturnsPanel, SpdMatrix, Split};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Source placeholders for missing data; a literal cell with one of these
/// values is rejected rather than read as a return.
pub const SENTINELS: [f64; 2] = [-99.99, -999.0];

/// Marker for a missing cell in files handed to `impute`.
pub const NA: &str = "NA";

/// Relative ridge used when none is configured.
pub const DEFAULT_RIDGE_REL: f64 = 1e-8;

const SIGNIFICANT_DIGITS: usize = 10;
const MAX_LISTED: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    #[default]
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelFileSchema {
    #[serde(default)]
    pub delimiter: Delimiter,
    /// Header name of the date column; the first column when absent. When
    /// set, the first line containing this name is taken as the header.
    #[serde(default)]
    pub date_column: Option<String>,
    /// Asset columns in panel order; every non-date column when absent.
    #[serde(default)]
    pub assets: Option<Vec<String>>,
    /// Raw values are divided by this (100 for percent quotes).
    #[serde(default = "unit_divisor")]
    pub divisor: f64,
    /// Inclusive date bounds, in either accepted date format.
    #[serde(default)]
    pub date_from: Option<String>,
    #[serde(default)]
    pub date_to: Option<String>,
}

fn unit_divisor() -> f64 {
    1.0
}

impl Default for PanelFileSchema {
    fn default() -> Self {
        PanelFileSchema {
            delimiter: Delimiter::Comma,
            date_column: None,
            assets: None,
            divisor: 1.0,
            date_from: None,
            date_to: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellProblem {
    Unparseable,
    Sentinel,
    NonFinite,
    Missing,
    BadDate,
}

impl fmt::Display for CellProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellProblem::Unparseable => "not a number",
            CellProblem::Sentinel => "missing-value sentinel",
            CellProblem::NonFinite => "not finite",
            CellProblem::Missing => "missing",
            CellProblem::BadDate => "not a date",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellIssue {
    /// 1-based line in the source file.
    pub line: usize,
    pub column: String,
    pub text: String,
    pub problem: CellProblem,
}

impl fmt::Display for CellIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} column {:?}: {:?} ({})", self.line, self.column, self.text, self.problem)
    }
}

struct IssueList<'a>(&'a [CellIssue]);

impl fmt::Display for IssueList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.0.iter().take(MAX_LISTED).enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        if self.0.len() > MAX_LISTED {
            write!(f, "; and {} more", self.0.len() - MAX_LISTED)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: no dated rows found", path.display())]
    NoData { path: PathBuf },
    #[error("{}: no header row before the first dated row (line {line})", path.display())]
    NoHeader { path: PathBuf, line: usize },
    #[error("{}: columns not found in header: {}", path.display(), columns.join(", "))]
    MissingColumns { path: PathBuf, columns: Vec<String> },
    #[error("{}: line {line} has {found} fields, header has {expected}", path.display())]
    Ragged {
        path: PathBuf,
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("{}: {} offending cells: {}", path.display(), issues.len(), IssueList(issues))]
    Cells { path: PathBuf, issues: Vec<CellIssue> },
    #[error("{}: dates not strictly increasing at line {line} ({date})", path.display())]
    DateOrder { path: PathBuf, line: usize, date: String },
    #[error("{}: need {needed} rows starting at offset {offset}, found {found}", path.display())]
    TooShort {
        path: PathBuf,
        needed: usize,
        offset: usize,
        found: usize,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
}

pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let text = text.trim();
    if text.len() == 8 && text.bytes().all(|b| b.is_ascii_digit()) {
        NaiveDate::parse_from_str(text, "%Y%m%d").ok()
    } else {
        NaiveDate::parse_from_str(text, "%Y-%m-%d").ok()
    }
}

/// A table as text: the selected columns of every retained row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub path: PathBuf,
    pub date_header: String,
    pub assets: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub date_text: Vec<String>,
    /// 1-based source line of each row.
    pub lines: Vec<usize>,
    /// `cells[row][asset]`, trimmed.
    pub cells: Vec<Vec<String>>,
}

fn split_fields(line: &str, delimiter: Delimiter) -> Vec<String> {
    match delimiter {
        Delimiter::Whitespace => line.split_whitespace().map(str::to_owned).collect(),
        Delimiter::Comma => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(line.as_bytes());
            match reader.records().next() {
                Some(Ok(record)) => record.iter().map(str::to_owned).collect(),
                _ => Vec::new(),
            }
        }
    }
}

fn bound(schema_value: &Option<String>, what: &str) -> Result<Option<NaiveDate>, IngestError> {
    schema_value
        .as_deref()
        .map(|s| parse_date(s).ok_or_else(|| IngestError::Schema(format!("{what} {s:?} is not a date"))))
        .transpose()
}

/// Reads the table's text without interpreting the asset cells.
pub fn read_table(path: &Path, schema: &PanelFileSchema) -> Result<RawTable, IngestError> {
    if !(schema.divisor.is_finite() && schema.divisor > 0.0) {
        return Err(IngestError::Schema("divisor must be positive".into()));
    }
    let from = bound(&schema.date_from, "date_from")?;
    let to = bound(&schema.date_to, "date_to")?;
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let lines: Vec<&str> = text.lines().collect();

    let is_blank = |l: &str| l.trim().is_empty();
    let (header_at, first_data) = match &schema.date_column {
        // a named date column locates the header directly
        Some(name) => {
            let header_at = lines
                .iter()
                .position(|l| split_fields(l, schema.delimiter).iter().any(|f| f == name))
                .ok_or_else(|| IngestError::MissingColumns {
                    path: path.to_owned(),
                    columns: vec![name.clone()],
                })?;
            let first_data = (header_at + 1..lines.len())
                .find(|&k| !is_blank(lines[k]))
                .ok_or_else(|| IngestError::NoData { path: path.to_owned() })?;
            (header_at, first_data)
        }
        None => {
            let first_data = lines
                .iter()
                .position(|l| {
                    split_fields(l, schema.delimiter)
                        .first()
                        .is_some_and(|f| parse_date(f).is_some())
                })
                .ok_or_else(|| IngestError::NoData { path: path.to_owned() })?;
            let header_at = lines[..first_data]
                .iter()
                .rposition(|l| !is_blank(l))
                .ok_or_else(|| IngestError::NoHeader {
                    path: path.to_owned(),
                    line: first_data + 1,
                })?;
            (header_at, first_data)
        }
    };
    let header = split_fields(lines[header_at], schema.delimiter);
    // whitespace headers commonly omit the date label
    let header_offset = usize::from(schema.delimiter == Delimiter::Whitespace && schema.date_column.is_none() && {
        let first = split_fields(lines[first_data], schema.delimiter);
        first.len() == header.len() + 1
    });
    let width = header.len() + header_offset;

    let date_idx = match &schema.date_column {
        None => 0,
        Some(name) => match header.iter().position(|h| h == name) {
            Some(i) => i,
            None => {
                return Err(IngestError::MissingColumns {
                    path: path.to_owned(),
                    columns: vec![name.clone()],
                })
            }
        },
    };
    let date_header = if header_offset == 1 { String::new() } else { header[date_idx].clone() };
    let (assets, asset_idx): (Vec<String>, Vec<usize>) = match &schema.assets {
        Some(names) => {
            let missing: Vec<String> = names.iter().filter(|n| !header.contains(n)).cloned().collect();
            if !missing.is_empty() {
                return Err(IngestError::MissingColumns {
                    path: path.to_owned(),
                    columns: missing,
                });
            }
            let idx = names
                .iter()
                .map(|n| header.iter().position(|h| h == n).unwrap() + header_offset)
                .collect();
            (names.clone(), idx)
        }
        None => (0..width)
            .filter(|&i| i != date_idx)
            .map(|i| (header[i - header_offset].clone(), i))
            .unzip(),
    };
    if assets.is_empty() {
        return Err(IngestError::Schema("no asset columns selected".into()));
    }

    let mut table = RawTable {
        path: path.to_owned(),
        date_header,
        assets,
        dates: Vec::new(),
        date_text: Vec::new(),
        lines: Vec::new(),
        cells: Vec::new(),
    };
    let mut bad_dates = Vec::new();
    for (offset, line) in lines[first_data..].iter().enumerate() {
        if is_blank(line) {
            break;
        }
        let line_no = first_data + offset + 1;
        let fields = split_fields(line, schema.delimiter);
        if fields.len() != width {
            return Err(IngestError::Ragged {
                path: path.to_owned(),
                line: line_no,
                found: fields.len(),
                expected: width,
            });
        }
        let Some(date) = parse_date(&fields[date_idx]) else {
            bad_dates.push(CellIssue {
                line: line_no,
                column: table.date_header.clone(),
                text: fields[date_idx].clone(),
                problem: CellProblem::BadDate,
            });
            continue;
        };
        if from.is_some_and(|d| date < d) || to.is_some_and(|d| date > d) {
            continue;
        }
        if let Some(&last) = table.dates.last() {
            if date <= last {
                return Err(IngestError::DateOrder {
                    path: path.to_owned(),
                    line: line_no,
                    date: fields[date_idx].clone(),
                });
            }
        }
        table.dates.push(date);
        table.date_text.push(fields[date_idx].clone());
        table.lines.push(line_no);
        table.cells.push(asset_idx.iter().map(|&i| fields[i].clone()).collect());
    }
    if !bad_dates.is_empty() {
        return Err(IngestError::Cells {
            path: path.to_owned(),
            issues: bad_dates,
        });
    }
    if table.dates.is_empty() {
        return Err(IngestError::NoData { path: path.to_owned() });
    }
    Ok(table)
}

/// Parsed numeric content of a [`RawTable`], assets by dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedValues {
    pub values: DMatrix<f64>,
    /// `missing[(asset, row)]` for `NA` cells; these hold 0 in `values`.
    pub missing: DMatrix<bool>,
}

impl RawTable {
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    /// Parses and scales every cell. `NA` is accepted only with `allow_na`;
    /// every offending cell is reported at once.
    pub fn parse_values(&self, divisor: f64, allow_na: bool) -> Result<ParsedValues, IngestError> {
        let (n, rows) = (self.n_assets(), self.n_rows());
        let mut values = DMatrix::zeros(n, rows);
        let mut missing = DMatrix::from_element(n, rows, false);
        let mut issues = Vec::new();
        for (t, row) in self.cells.iter().enumerate() {
            for (i, text) in row.iter().enumerate() {
                let problem = if text == NA {
                    if allow_na {
                        missing[(i, t)] = true;
                        continue;
                    }
                    CellProblem::Missing
                } else {
                    match text.parse::<f64>() {
                        Ok(v) if SENTINELS.contains(&v) => CellProblem::Sentinel,
                        Ok(v) if !v.is_finite() => CellProblem::NonFinite,
                        Ok(v) => {
                            values[(i, t)] = v / divisor;
                            continue;
                        }
                        Err(_) => CellProblem::Unparseable,
                    }
                };
                issues.push(CellIssue {
                    line: self.lines[t],
                    column: self.assets[i].clone(),
                    text: text.clone(),
                    problem,
                });
            }
        }
        if issues.is_empty() {
            Ok(ParsedValues { values, missing })
        } else {
            Err(IngestError::Cells {
                path: self.path.clone(),
                issues,
            })
        }
    }
}

/// A complete source panel before it is cut into a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePanel {
    pub path: PathBuf,
    pub assets: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// Scaled returns, assets by dates.
    pub values: DMatrix<f64>,
}

impl SourcePanel {
    pub fn read(path: &Path, schema: &PanelFileSchema) -> Result<Self, IngestError> {
        let table = read_table(path, schema)?;
        let parsed = table.parse_values(schema.divisor, false)?;
        Ok(SourcePanel {
            path: table.path,
            assets: table.assets,
            dates: table.dates,
            values: parsed.values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    /// Columns `start_offset .. start_offset + split.total()`.
    pub fn window(&self, split: Split, start_offset: usize) -> Result<ReturnsPanel, IngestError> {
        let needed = split.total();
        if start_offset + needed > self.n_rows() {
            return Err(IngestError::TooShort {
                path: self.path.clone(),
                needed,
                offset: start_offset,
                found: self.n_rows(),
            });
        }
        let values = self.values.columns(start_offset, needed).into_owned();
        Ok(ReturnsPanel::new(values, split).expect("parsed values are finite and sized to the split"))
    }
}

pub fn load_panel(
    path: &Path,
    schema: &PanelFileSchema,
    split: Split,
    start_offset: usize,
) -> Result<ReturnsPanel, IngestError> {
    SourcePanel::read(path, schema)?.window(split, start_offset)
}

/// Sample covariance over the columns of `values` (assets by dates, `T − 1`
/// denominator) plus `ridge · I`. Without a ridge, `1e-8` times the mean
/// sample variance is added.
pub fn fit_covariance(values: &DMatrix<f64>, ridge: Option<f64>) -> bvmi_core::Result<NoiseModel> {
    let (n, t) = values.shape();
    if t < 2 {
        return Err(bvmi_core::Error::InvalidArgument(format!(
            "covariance fit needs at least 2 periods, got {t}"
        )));
    }
    if let Some((k, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(bvmi_core::Error::NonFinite { row: k % n, col: k / n });
    }
    if ridge.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
        return Err(bvmi_core::Error::InvalidArgument("ridge must be non-negative".into()));
    }
    let mean = values.column_mean();
    let mut centered = values.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mut cov = &centered * centered.transpose() / (t - 1) as f64;
    let ridge = ridge.unwrap_or_else(|| DEFAULT_RIDGE_REL * cov.trace() / n as f64);
    for i in 0..n {
        cov[(i, i)] += ridge;
    }
    NoiseModel::new(SpdMatrix::new(cov)?)
}

/// `x` rounded to ten significant digits, printed in its shortest form.
pub fn format_value(x: f64) -> String {
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses");
    format!("{rounded}")
}

/// Writes a table in the same layout [`read_table`] accepts.
pub fn write_table<'a>(
    path: &Path,
    delimiter: Delimiter,
    date_header: &str,
    assets: &[String],
    dates: &[String],
    cell: impl Fn(usize, usize) -> Cow<'a, str>,
) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    match delimiter {
        Delimiter::Comma => {
            let mut writer = csv::Writer::from_writer(out);
            writer.write_record(std::iter::once(date_header).chain(assets.iter().map(String::as_str)))?;
            for (t, date) in dates.iter().enumerate() {
                let row: Vec<Cow<'a, str>> = (0..assets.len()).map(|i| cell(i, t)).collect();
                writer.write_record(std::iter::once(date.as_str()).chain(row.iter().map(|c| c.as_ref())))?;
            }
            writer.flush()?;
        }
        Delimiter::Whitespace => {
            writeln!(out, "{} {}", date_header, assets.join(" "))?;
            for (t, date) in dates.iter().enumerate() {
                write!(out, "{date}")?;
                for i in 0..assets.len() {
                    write!(out, " {}", cell(i, t))?;
                }
                writeln!(out)?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

/// Writes `values` (assets by dates, already in file units) with ten
/// significant digits.
pub fn write_panel(
    path: &Path,
    delimiter: Delimiter,
    date_header: &str,
    assets: &[String],
    dates: &[String],
    values: &DMatrix<f64>,
) -> io::Result<()> {
    if values.shape() != (assets.len(), dates.len()) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!(
                "values are {}x{}, labels are {}x{}",
                values.nrows(),
                values.ncols(),
                assets.len(),
                dates.len()
            ),
        ));
    }
    write_table(path, delimiter, date_header, assets, dates, |i, t| {
        Cow::Owned(format_value(values[(i, t)]))
    })
}
