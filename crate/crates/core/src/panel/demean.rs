//! Two-way (country and period) fixed-effect removal.
//!
//! Balanced masks use the closed form `x - row mean - column mean + grand mean`.
//! Unbalanced masks alternate row and column mean removal over present cells,
//! which converges to the same two-way within projection.

use serde::Serialize;

use super::MaskedMatrix;
use crate::error::{Error, Result};

/// Upper bound on the absolute row/column mean left after demeaning.
pub const DEMEAN_TOLERANCE: f64 = 1e-10;

/// Sweep cap for the alternating scheme.
pub const MAX_DEMEAN_SWEEPS: usize = 100_000;

/// A double-demeaned series together with the name of the variable it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemeanedSeries {
    pub label: String,
    pub values: MaskedMatrix,
}

impl DemeanedSeries {
    pub fn new(label: impl Into<String>, series: &MaskedMatrix) -> Result<Self> {
        Ok(Self {
            label: label.into(),
            values: double_demean(series)?,
        })
    }
}

/// Remove country and period effects from `series`, preserving its mask.
pub fn double_demean(series: &MaskedMatrix) -> Result<MaskedMatrix> {
    check_coverage(series)?;
    if series.is_balanced() {
        Ok(closed_form(series))
    } else {
        iterate(series)
    }
}

/// Four-term closed form; only valid on a fully present matrix.
pub fn closed_form_demean(series: &MaskedMatrix) -> Result<MaskedMatrix> {
    if !series.is_balanced() {
        return Err(Error::Dimension(
            "closed-form demeaning needs a balanced mask".into(),
        ));
    }
    check_coverage(series)?;
    Ok(closed_form(series))
}

/// Alternating row/column demeaning, regardless of balance.
pub fn iterative_demean(series: &MaskedMatrix) -> Result<MaskedMatrix> {
    check_coverage(series)?;
    iterate(series)
}

fn check_coverage(series: &MaskedMatrix) -> Result<()> {
    if let Some(i) = series.row_counts().iter().position(|&c| c == 0) {
        return Err(Error::Dimension(format!("row {i} has no present cells")));
    }
    if let Some(t) = series.col_counts().iter().position(|&c| c == 0) {
        return Err(Error::Dimension(format!("column {t} has no present cells")));
    }
    Ok(())
}

fn closed_form(series: &MaskedMatrix) -> MaskedMatrix {
    let (n, t_len) = (series.rows(), series.cols());
    let row: Vec<f64> = series
        .row_means()
        .into_iter()
        .map(|m| m.unwrap_or(0.0))
        .collect();
    let col: Vec<f64> = series
        .col_means()
        .into_iter()
        .map(|m| m.unwrap_or(0.0))
        .collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    MaskedMatrix::from_fn(n, t_len, |i, t| {
        series.get(i, t).map(|x| x - row[i] - col[t] + grand)
    })
}

fn iterate(series: &MaskedMatrix) -> Result<MaskedMatrix> {
    let (n, t_len) = (series.rows(), series.cols());
    let tol = (1e-12 * series.max_abs().max(1.0)).min(DEMEAN_TOLERANCE);
    let mask = series.mask().to_vec();
    let row_n = series.row_counts();
    let col_n = series.col_counts();
    let mut out = series.clone();
    let mut residual = f64::INFINITY;

    for _ in 0..MAX_DEMEAN_SWEEPS {
        let values = out.values_mut();
        for i in 0..n {
            let cells = i * t_len..(i + 1) * t_len;
            let m = values[cells.clone()]
                .iter()
                .zip(&mask[cells.clone()])
                .filter_map(|(&v, &p)| p.then_some(v))
                .sum::<f64>()
                / row_n[i] as f64;
            for idx in cells.filter(|&idx| mask[idx]) {
                values[idx] -= m;
            }
        }
        for t in 0..t_len {
            let m = (0..n)
                .map(|i| i * t_len + t)
                .filter(|&idx| mask[idx])
                .map(|idx| values[idx])
                .sum::<f64>()
                / col_n[t] as f64;
            for idx in (0..n).map(|i| i * t_len + t).filter(|&idx| mask[idx]) {
                values[idx] -= m;
            }
        }
        residual = max_abs_mean(&out);
        if residual < tol {
            return Ok(out);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_DEMEAN_SWEEPS,
        residual,
    })
}

/// Largest absolute row or column mean over present cells.
pub fn max_abs_mean(series: &MaskedMatrix) -> f64 {
    series
        .row_means()
        .into_iter()
        .chain(series.col_means())
        .flatten()
        .fold(0.0_f64, |acc, m| acc.max(m.abs()))
}
