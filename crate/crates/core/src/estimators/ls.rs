use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Householder-QR least squares. `(X'X)^-1` is only ever formed as
/// `R^-1 R^-T`, never by inverting the cross-product matrix.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    r_inverse: DMatrix<f64>,
}

impl LeastSquares {
    pub fn solve(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<Self> {
        let (n, k) = x.shape();
        if n < k {
            return Err(Error::Dimension(format!(
                "{n} rows cannot identify {k} coefficients"
            )));
        }
        let qr = x.clone().qr();
        let r = qr.r();
        check_rank(&r, n, names)?;

        let mut qty = y.clone();
        qr.q_tr_mul(&mut qty);
        let rhs = qty.rows(0, k).into_owned();
        let coefficients = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| singular(names, k.saturating_sub(1)))?;
        let r_inverse = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| singular(names, k.saturating_sub(1)))?;
        let fitted = x * &coefficients;
        Ok(Self {
            coefficients,
            fitted,
            r_inverse,
        })
    }

    /// `(X'X)^-1`, symmetrised.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let m = &self.r_inverse * self.r_inverse.transpose();
        (&m + m.transpose()) * 0.5
    }
}

fn singular(names: &[String], j: usize) -> Error {
    Error::SingularDesign {
        column: names.get(j).cloned().unwrap_or_else(|| format!("x{j}")),
    }
}

/// Rank tolerance `eps * max(n, k) * s_max`. On failure the error names the
/// first column whose leading block loses rank.
fn check_rank(r: &DMatrix<f64>, n: usize, names: &[String]) -> Result<()> {
    let k = r.ncols();
    let sv = r.clone().singular_values();
    let s_max = sv.max();
    let tol = f64::EPSILON * n.max(k) as f64 * s_max;
    if s_max > 0.0 && sv.min() > tol {
        return Ok(());
    }
    for j in 0..k {
        let lead = r.view((0, 0), (j + 1, j + 1)).into_owned();
        if s_max == 0.0 || lead.singular_values().min() <= tol {
            return Err(singular(names, j));
        }
    }
    Err(singular(names, k - 1))
}

/// Orthogonal projection of the columns of `x` onto the column span of `w`.
/// `w` must have full column rank.
pub fn project_onto(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    w_names: &[String],
) -> Result<DMatrix<f64>> {
    let (n, m) = w.shape();
    if n < m {
        return Err(Error::Dimension(format!(
            "{n} rows cannot span {m} instruments"
        )));
    }
    let qr = w.clone().qr();
    check_rank(&qr.r(), n, w_names)?;
    let q = qr.q();
    Ok(&q * (q.transpose() * x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("c{j}")).collect()
    }

    #[test]
    fn collinear_column_is_named() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 2.0, 3.0, //
                1.0, 0.5, 1.5, //
                1.0, -1.0, 0.0, //
                1.0, 4.0, 5.0,
            ],
        );
        // Third column = first + second.
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        match LeastSquares::solve(&x, &y, &names(3)) {
            Err(Error::SingularDesign { column }) => assert_eq!(column, "c2"),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn zero_column_is_named() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        match LeastSquares::solve(&x, &y, &names(2)) {
            Err(Error::SingularDesign { column }) => assert_eq!(column, "c1"),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn projection_onto_own_span_is_identity() {
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        let p = project_onto(&w, &w, &names(2)).unwrap();
        assert!((p - &w).abs().max() < 1e-12);
    }
}
