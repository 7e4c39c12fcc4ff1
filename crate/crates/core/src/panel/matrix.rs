use serde::Serialize;

use crate::error::{Error, Result};

/// Country-by-period matrix with a presence mask. Absent cells carry no value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols || mask.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "masked matrix buffers must have {} cells (got {} values, {} mask entries)",
                rows * cols,
                values.len(),
                mask.len()
            )));
        }
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(Self {
            rows,
            cols,
            values,
            mask,
        })
    }

    /// Fully present matrix from row-major data.
    pub fn dense(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(rows, cols, values, vec![true; rows * cols])
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Self {
        let mut values = vec![0.0; rows * cols];
        let mut mask = vec![false; rows * cols];
        for i in 0..rows {
            for t in 0..cols {
                if let Some(v) = f(i, t) {
                    values[i * cols + t] = v;
                    mask[i * cols + t] = true;
                }
            }
        }
        Self {
            rows,
            cols,
            values,
            mask,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        let idx = i * self.cols + t;
        self.mask[idx].then(|| self.values[idx])
    }

    pub fn is_present(&self, i: usize, t: usize) -> bool {
        self.mask[i * self.cols + t]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn present_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_balanced(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Present cells as `(row, col)` in row-major order. Every vectorised view
    /// of a masked matrix uses this ordering.
    pub fn present_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|i| (0..self.cols).map(move |t| (i, t)))
            .filter(|&(i, t)| self.is_present(i, t))
            .collect()
    }

    /// Present values in row-major order.
    pub fn present_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { f(v) } else { 0.0 })
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            values,
            mask: self.mask.clone(),
        }
    }

    /// Cellwise combination of two matrices sharing one mask.
    pub fn zip_with(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        self.check_same_mask(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .zip(&self.mask)
            .map(|((&a, &b), &m)| if m { f(a, b) } else { 0.0 })
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values,
            mask: self.mask.clone(),
        })
    }

    pub fn check_same_mask(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols || self.mask != other.mask {
            return Err(Error::Dimension(
                "series are not aligned on the same mask".into(),
            ));
        }
        Ok(())
    }

    /// Keep only cells for which `keep` is true (and that were present).
    pub fn restrict(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.mask.len() {
            return Err(Error::Dimension(
                "restriction mask has the wrong size".into(),
            ));
        }
        let mask: Vec<bool> = self.mask.iter().zip(keep).map(|(&a, &b)| a && b).collect();
        Self::new(self.rows, self.cols, self.values.clone(), mask)
    }

    pub fn row_counts(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| (0..self.cols).filter(|&t| self.is_present(i, t)).count())
            .collect()
    }

    pub fn col_counts(&self) -> Vec<usize> {
        (0..self.cols)
            .map(|t| (0..self.rows).filter(|&i| self.is_present(i, t)).count())
            .collect()
    }

    /// Means over present cells; `None` for an empty row.
    pub fn row_means(&self) -> Vec<Option<f64>> {
        (0..self.rows)
            .map(|i| mean((0..self.cols).filter_map(|t| self.get(i, t))))
            .collect()
    }

    pub fn col_means(&self) -> Vec<Option<f64>> {
        (0..self.cols)
            .map(|t| mean((0..self.rows).filter_map(|i| self.get(i, t))))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.present_values()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}
