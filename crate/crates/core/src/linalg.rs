//! Dense solves with explicit failure reporting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Solve `a x = b` for symmetric positive-definite `a` by Cholesky.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a.cholesky().ok_or_else(|| Error::Numerical(format!("{what}: matrix is not positive definite")))?;
    finite(chol.solve(b), what)
}

/// Solve a general square system by LU with partial pivoting.
///
/// A pivot below `n * eps * max|pivot|` is treated as singular.
pub fn solve_general(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let n = a.nrows();
    let lu = a.lu();
    let pivots = lu.u().diagonal().map(f64::abs);
    let largest = pivots.max();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if !(largest > 0.0) || pivots.min() <= n as f64 * f64::EPSILON * largest {
        return Err(Error::Numerical(format!("{what}: system is singular")));
    }
    let x = lu.solve(b).ok_or_else(|| Error::Numerical(format!("{what}: system is singular")))?;
    finite(x, what)
}

fn finite(x: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Numerical(format!("{what}: non-finite solution")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_small() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 5.0]);
        let k = kron(&a, &b);
        assert_eq!(k, DMatrix::from_row_slice(2, 4, &[0.0, 5.0, 0.0, 10.0, 0.0, 15.0, 0.0, 20.0]));
    }

    #[test]
    fn singular_systems_are_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve_general(a.clone(), &b, "t"), Err(Error::Numerical(_))));
        assert!(matches!(solve_spd(a, &b, "t"), Err(Error::Numerical(_))));
    }
}
