//! Results table: `k`, then `trP_F,relerr_F,z_F,enorm_F` for each filter `F`
//! in [`FilterKind`] order. Numbers carry 17 significant digits, so parsing
//! them back yields the exact `f64`. An empty `relerr_F` cell means no
//! ensemble reference was run; `NaN` marks steps after a filter diverged.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{FilterError, Result};

use super::config::FilterKind;
use super::experiment::StepRow;

pub const COLUMNS_PER_FILTER: usize = 4;

pub fn header(filters: &[FilterKind]) -> Vec<String> {
    let mut cols = vec!["k".to_string()];
    for f in filters {
        for prefix in ["trP", "relerr", "z", "enorm"] {
            cols.push(format!("{prefix}_{f}"));
        }
    }
    cols
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Renders rows as CSV text with LF line endings.
pub fn render_csv(rows: &[StepRow]) -> Result<String> {
    let first = rows
        .first()
        .ok_or_else(|| FilterError::InvalidParameter("no records to export".into()))?;
    let filters: Vec<FilterKind> = first.filters.iter().map(|m| m.filter).collect();
    if filters.is_empty() {
        return Err(FilterError::InvalidParameter("no filters to export".into()));
    }
    let mut out = header(&filters).join(",");
    out.push('\n');
    for row in rows {
        let mut cells = vec![row.step.to_string()];
        for &f in &filters {
            let m = row.get(f).ok_or_else(|| {
                FilterError::InvalidParameter(format!("row {} is missing filter {f}", row.step))
            })?;
            cells.push(fmt_value(m.trace));
            cells.push(m.relerr.map(fmt_value).unwrap_or_default());
            cells.push(fmt_value(m.output_error_scalar()));
            cells.push(fmt_value(m.error_norm));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_csv(rows: &[StepRow], path: &Path) -> Result<()> {
    let text = render_csv(rows)?;
    let io_err = |source| FilterError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Parsed CSV: header names and rows of optional values (empty cells are `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| FilterError::Config("empty CSV".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(FilterError::Config(format!(
                    "row has {} cells, header has {}",
                    cells.len(),
                    header.len()
                )));
            }
            cells
                .into_iter()
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse::<f64>()
                            .map(Some)
                            .map_err(|e| FilterError::Config(format!("bad number `{c}`: {e}")))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(CsvTable { header, rows })
}
