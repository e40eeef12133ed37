//! Post-hoc decay fits over a time-series CSV.
//!
//! The file is consumed through its header alone: any column can be fitted
//! as a power law in ⟨t⟩ over a tail window, so the schema can grow without
//! touching this module.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mhdbl_core::energy::fit_decay;

/// Parsed CSV: column names and column-major data.
pub fn read_timeseries(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("{}: empty file", path.display()))?;
    let names: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            bail!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                i + 2,
                fields.len(),
                names.len()
            );
        }
        for (slot, field) in cols.iter_mut().zip(&fields) {
            slot.push(
                field
                    .parse::<f64>()
                    .with_context(|| format!("{}: row {}: `{field}`", path.display(), i + 2))?,
            );
        }
    }
    Ok((names, cols))
}

/// Fitted exponent per requested column (every non-time column when the
/// request is empty). Columns that cannot be fitted — nonpositive values,
/// too few records in the window — carry the reason instead.
pub fn run_fit_decay(
    path: &Path,
    columns: &[String],
    window: Option<(f64, f64)>,
) -> Result<Vec<(String, Result<f64, String>)>> {
    let (names, cols) = read_timeseries(path)?;
    let t_idx = names
        .iter()
        .position(|n| n == "t")
        .ok_or_else(|| anyhow!("{}: no `t` column in header", path.display()))?;
    let t = &cols[t_idx];
    if t.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let t_max = *t.last().expect("nonempty");
    let window = window.unwrap_or((0.2 * t_max, t_max));

    let targets: Vec<usize> = if columns.is_empty() {
        (0..names.len()).filter(|&j| j != t_idx).collect()
    } else {
        columns
            .iter()
            .map(|c| {
                names.iter().position(|n| n == c).ok_or_else(|| {
                    anyhow!("no column `{c}` (header has: {})", names.join(", "))
                })
            })
            .collect::<Result<_>>()?
    };

    Ok(targets
        .into_iter()
        .map(|j| {
            let series: Vec<(f64, f64)> = t.iter().copied().zip(cols[j].iter().copied()).collect();
            (
                names[j].clone(),
                fit_decay(&series, window).map_err(|e| e.to_string()),
            )
        })
        .collect())
}
