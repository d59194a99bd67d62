//! Dense matrix helpers: norms, checked inversion, log-determinants.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Matrices whose condition estimate exceeds this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e13;

/// Max-entry defect tolerated for `M·G = I` before refinement.
pub const DEFECT_TOL: f64 = 1e-8;

/// Spectral norm of a symmetric matrix: the largest `|eigenvalue|`.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Largest singular value, for matrices that are not symmetric.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v))
}

/// Max absolute row sum (the Schur test bound).
pub fn schur_test_bound(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Max absolute column sum, `‖·‖_1`.
pub fn norm_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

fn identity_defect(m: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let mut p = m * g;
    for i in 0..p.nrows() {
        p[(i, i)] -= 1.0;
    }
    max_abs(&p)
}

/// A checked inverse together with its diagnostics.
#[derive(Clone, Debug)]
pub struct Inverse {
    pub matrix: DMatrix<f64>,
    /// `‖M‖_1 ‖M^{-1}‖_1`.
    pub condition: f64,
    /// `max |M·G − I|` after any refinement.
    pub defect: f64,
    pub refined: bool,
}

/// Invert by partial-pivot LU, refine once if the defect is above
/// [`DEFECT_TOL`], and reject ill-conditioned inputs.
pub fn checked_inverse(m: &DMatrix<f64>, symmetric: bool) -> Result<Inverse> {
    let n = m.nrows();
    if n == 0 || n != m.ncols() {
        return Err(Error::input("inverse needs a nonempty square matrix"));
    }
    let mut g = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::Singular { condition: f64::INFINITY })?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    if symmetric {
        g = (&g + g.transpose()) * 0.5;
    }
    let condition = norm_one(m) * norm_one(&g);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::Singular { condition });
    }
    let mut defect = identity_defect(m, &g);
    let mut refined = false;
    if defect > DEFECT_TOL {
        let mut r = -(m * &g);
        for i in 0..n {
            r[(i, i)] += 1.0;
        }
        g += &g * r;
        if symmetric {
            g = (&g + g.transpose()) * 0.5;
        }
        defect = identity_defect(m, &g);
        refined = true;
        if defect > DEFECT_TOL {
            return Err(Error::Singular { condition });
        }
    }
    Ok(Inverse {
        matrix: g,
        condition,
        defect,
        refined,
    })
}

/// `ln |det M|` and the sign of `det M`, via LU. `None` for an exactly
/// singular matrix.
pub fn log_abs_det(m: &DMatrix<f64>) -> Option<(f64, f64)> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut log = 0.0;
    let mut sign = 1.0;
    for i in 0..u.nrows() {
        let p = u[(i, i)];
        if p == 0.0 {
            return None;
        }
        log += p.abs().ln();
        if p < 0.0 {
            sign = -sign;
        }
    }
    // the permutation contributes its own sign
    if lu.p().determinant::<f64>() < 0.0 {
        sign = -sign;
    }
    Some((log, sign))
}

/// Submatrix on the given (sorted) row and column index lists.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Least-squares slope and intercept of `y` against `x`, with the RMS
/// residual. `None` with fewer than two distinct `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Some((slope, intercept, (rss / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn norm_examples() {
        assert!((operator_norm(&DMatrix::identity(4, 4)) - 1.0).abs() < 1e-14);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((operator_norm(&a) - 1.5).abs() < 1e-14);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        assert!((operator_norm(&b) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn schur_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(schur_test_bound(&a), 1.5);
        assert_eq!(schur_test_bound(&DMatrix::identity(3, 3)), 1.0);
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(schur_test_bound(&p), 1.0);
        assert!((operator_norm(&p) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_of_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, -1.0]);
        let inv = checked_inverse(&m, true).unwrap();
        let want = [0.8, 0.4, 0.4, -0.8];
        for (g, w) in inv.matrix.transpose().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(checked_inverse(&sing, true), Err(Error::Singular { .. })));
    }

    #[test]
    fn log_det_matches_product() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, -0.5]);
        let (l, s) = log_abs_det(&m).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-14);
        assert_eq!(s, m.determinant().signum());
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (s, i, r) = linear_fit(&xs, &ys).unwrap();
        assert!((s + 0.5).abs() < 1e-14 && (i - 2.0).abs() < 1e-14 && r < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    proptest! {
        #[test]
        fn schur_bound_dominates_norm(entries in proptest::collection::vec(-5.0f64..5.0, 36)) {
            let a = DMatrix::from_row_slice(6, 6, &entries);
            let s = (&a + a.transpose()) * 0.5;
            prop_assert!(operator_norm(&s) <= schur_test_bound(&s) * (1.0 + 1e-12));
        }
    }
}
