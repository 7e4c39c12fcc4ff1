//! Unbalanced country-by-period trade panels and the transforms estimators consume.

mod demean;
mod ingest;
mod matrix;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use demean::{
    closed_form_demean, double_demean, iterative_demean, max_abs_mean, DemeanedSeries,
    DEMEAN_TOLERANCE, MAX_DEMEAN_SWEEPS,
};
pub use ingest::{load_panel, write_panel_csv, ColumnSchema, DroppedRow, LoadOptions, LoadOutcome};
pub use matrix::MaskedMatrix;

/// One import record: value `V`, optional quantity `X`, exchange rate `Z` and
/// optional restrictiveness index `R` for a (country, period) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub country: String,
    pub period: i64,
    pub value: f64,
    pub quantity: Option<f64>,
    pub fx_rate: f64,
    pub stri: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub value: f64,
    pub quantity: Option<f64>,
    pub fx_rate: f64,
    pub stri: Option<f64>,
}

/// Immutable country x period panel. Countries are sorted by identifier and
/// periods by ordinal; `cells` is row-major over (country, period).
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    countries: Vec<String>,
    periods: Vec<i64>,
    period_labels: Vec<String>,
    cells: Vec<Option<Cell>>,
}

impl Panel {
    pub fn from_observations(observations: Vec<PanelObservation>) -> Result<Self> {
        Self::with_labels(observations, &HashMap::new())
    }

    /// Build a panel, naming periods with `labels` where given (the ordinal
    /// itself otherwise).
    pub fn with_labels(
        observations: Vec<PanelObservation>,
        labels: &HashMap<i64, String>,
    ) -> Result<Self> {
        let countries: Vec<String> = observations
            .iter()
            .map(|o| o.country.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let periods: Vec<i64> = observations
            .iter()
            .map(|o| o.period)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let period_labels = periods
            .iter()
            .map(|p| labels.get(p).cloned().unwrap_or_else(|| p.to_string()))
            .collect::<Vec<_>>();
        check_dims(countries.len(), periods.len())?;

        let c_index: HashMap<&str, usize> = countries
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let p_index: HashMap<i64, usize> =
            periods.iter().enumerate().map(|(t, &p)| (p, t)).collect();
        let t_len = periods.len();
        let mut cells = vec![None; countries.len() * t_len];

        for o in &observations {
            if !(o.value > 0.0 && o.value.is_finite()) {
                return Err(Error::Dimension(format!(
                    "value for {} at {} must be strictly positive",
                    o.country, o.period
                )));
            }
            if !(o.fx_rate > 0.0 && o.fx_rate.is_finite()) {
                return Err(Error::Dimension(format!(
                    "fx_rate for {} at {} must be strictly positive",
                    o.country, o.period
                )));
            }
            let idx = c_index[o.country.as_str()] * t_len + p_index[&o.period];
            if cells[idx].is_some() {
                return Err(Error::Conflict {
                    country: o.country.clone(),
                    period: period_labels[p_index[&o.period]].clone(),
                });
            }
            cells[idx] = Some(Cell {
                value: o.value,
                quantity: o.quantity.filter(|q| *q > 0.0 && q.is_finite()),
                fx_rate: o.fx_rate,
                stri: o.stri.filter(|r| *r > 0.0 && *r <= 1.0),
            });
        }
        Ok(Self {
            countries,
            periods,
            period_labels,
            cells,
        })
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn period_label(&self, t: usize) -> &str {
        &self.period_labels[t]
    }

    /// Axis index of a period given either its label or its ordinal.
    pub fn period_index(&self, key: &str) -> Option<usize> {
        self.period_labels
            .iter()
            .position(|l| l == key)
            .or_else(|| {
                key.parse::<i64>()
                    .ok()
                    .and_then(|p| self.periods.iter().position(|&q| q == p))
            })
    }

    pub fn cell(&self, i: usize, t: usize) -> Option<&Cell> {
        self.cells[i * self.periods.len() + t].as_ref()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(Option::is_some).collect()
    }

    pub fn present_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_balanced(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn observations(&self) -> Vec<PanelObservation> {
        let t_len = self.periods.len();
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(idx, c)| {
                c.map(|c| PanelObservation {
                    country: self.countries[idx / t_len].clone(),
                    period: self.periods[idx % t_len],
                    value: c.value,
                    quantity: c.quantity,
                    fx_rate: c.fx_rate,
                    stri: c.stri,
                })
            })
            .collect()
    }

    /// True when every present cell carries a usable quantity.
    pub fn has_quantities(&self) -> bool {
        self.cells.iter().flatten().all(|c| c.quantity.is_some())
    }

    pub fn has_any_stri(&self) -> bool {
        self.cells.iter().flatten().any(|c| c.stri.is_some())
    }

    fn matrix(&self, f: impl Fn(&Cell) -> Option<f64>) -> MaskedMatrix {
        let t_len = self.periods.len();
        MaskedMatrix::from_fn(self.countries.len(), t_len, |i, t| {
            self.cells[i * t_len + t].as_ref().and_then(&f)
        })
    }

    pub fn log_fx(&self) -> MaskedMatrix {
        self.matrix(|c| Some(c.fx_rate.ln()))
    }

    pub fn fx_levels(&self) -> MaskedMatrix {
        self.matrix(|c| Some(c.fx_rate))
    }

    /// `ln P = ln(Z V / X)`; requires quantities on every present cell.
    pub fn log_prices(&self) -> Result<MaskedMatrix> {
        if !self.has_quantities() {
            return Err(Error::NotApplicable(
                "import prices need a positive quantity on every observation".into(),
            ));
        }
        Ok(self.matrix(|c| c.quantity.map(|q| (c.fx_rate * c.value / q).ln())))
    }

    /// `ln R` on cells with a usable index; other cells are absent.
    pub fn log_stri(&self) -> MaskedMatrix {
        self.matrix(|c| c.stri.map(f64::ln))
    }

    pub fn log_shares(&self) -> Result<MaskedMatrix> {
        Ok(compute_value_shares(self)?.values.map(f64::ln))
    }

    /// Sub-panel keeping the cells selected by `keep`; countries and periods
    /// left without observations are dropped.
    pub fn restrict(&self, keep: impl Fn(usize, usize, &Cell) -> bool) -> Result<Panel> {
        let t_len = self.periods.len();
        let kept_rows: Vec<usize> = (0..self.countries.len())
            .filter(|&i| (0..t_len).any(|t| self.cell(i, t).is_some_and(|c| keep(i, t, c))))
            .collect();
        let kept_cols: Vec<usize> = (0..t_len)
            .filter(|&t| {
                kept_rows
                    .iter()
                    .any(|&i| self.cell(i, t).is_some_and(|c| keep(i, t, c)))
            })
            .collect();
        check_dims(kept_rows.len(), kept_cols.len())?;
        let mut cells = Vec::with_capacity(kept_rows.len() * kept_cols.len());
        for &i in &kept_rows {
            for &t in &kept_cols {
                cells.push(self.cell(i, t).filter(|c| keep(i, t, c)).copied());
            }
        }
        Ok(Panel {
            countries: kept_rows
                .iter()
                .map(|&i| self.countries[i].clone())
                .collect(),
            periods: kept_cols.iter().map(|&t| self.periods[t]).collect(),
            period_labels: kept_cols
                .iter()
                .map(|&t| self.period_labels[t].clone())
                .collect(),
            cells,
        })
    }
}

fn check_dims(n: usize, t: usize) -> Result<()> {
    if n < 2 || t < 2 {
        return Err(Error::Dimension(format!(
            "a panel needs at least 2 countries and 2 periods (got {n} x {t})"
        )));
    }
    Ok(())
}

/// Import value shares `S_it = V_it / sum_j V_jt` over countries present at `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareSeries {
    pub values: MaskedMatrix,
}

pub fn compute_value_shares(panel: &Panel) -> Result<ShareSeries> {
    let (n, t_len) = (panel.n_countries(), panel.n_periods());
    let mut totals = vec![0.0; t_len];
    for (t, total) in totals.iter_mut().enumerate() {
        *total = (0..n)
            .filter_map(|i| panel.cell(i, t))
            .map(|c| c.value)
            .sum();
        let present = (0..n).any(|i| panel.cell(i, t).is_some());
        if present && !(*total > 0.0) {
            return Err(Error::DegeneratePeriod(panel.period_label(t).to_string()));
        }
    }
    let values = MaskedMatrix::from_fn(n, t_len, |i, t| {
        panel.cell(i, t).map(|c| c.value / totals[t])
    });
    Ok(ShareSeries { values })
}

/// Drop countries observed in fewer than `min_obs` periods.
pub fn filter_coverage(panel: &Panel, min_obs: usize) -> Result<Panel> {
    if min_obs > panel.n_periods() {
        return Err(Error::Dimension(format!(
            "coverage threshold {min_obs} exceeds the {} available periods",
            panel.n_periods()
        )));
    }
    let counts: BTreeMap<usize, usize> = (0..panel.n_countries())
        .map(|i| {
            (
                i,
                (0..panel.n_periods())
                    .filter(|&t| panel.cell(i, t).is_some())
                    .count(),
            )
        })
        .collect();
    panel.restrict(|i, _, _| counts[&i] >= min_obs)
}
