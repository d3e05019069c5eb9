//! Dense kernels shared by the solvers: Cholesky factorization, triangular
//! substitution, pivoted Gaussian elimination and a power-iteration estimate
//! of the spectral radius.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative pivot threshold for [`cholesky_factor`].
pub const CHOLESKY_PIVOT_TOL: f64 = 1e-14;

/// Power iteration budget used by [`spectral_radius`].
pub const POWER_ITERATIONS: usize = 500;

/// Relative change between successive growth estimates at which power
/// iteration is considered converged.
pub const POWER_REL_TOL: f64 = 1e-10;

/// Seed of the start vector used by [`spectral_radius`]. Fixed so that
/// repeated runs report bit-identical radii.
pub const POWER_SEED: u64 = 0x5eed_c0de;

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Sup-norm of a vector.
pub fn vec_max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn ensure_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Left-looking Cholesky factorization `S = L L^T`.
///
/// Only the lower triangle of `S` is read. A pivot at or below
/// `CHOLESKY_PIVOT_TOL * ||S||_inf` is reported as `NotPositiveDefinite`.
pub fn cholesky_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(s)?;
    let n = s.nrows();
    let threshold = CHOLESKY_PIVOT_TOL * inf_norm(s);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) {
            return Err(Error::NotPositiveDefinite {
                column: j,
                pivot: d,
            });
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / pivot;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L` by forward substitution.
pub fn forward_substitute(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let mut v = x[(i, col)];
            for k in 0..i {
                v -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
    }
    x
}

/// Solves `L^T X = B` for lower-triangular `L` by back substitution.
pub fn back_substitute_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut v = x[(i, col)];
            for k in (i + 1)..n {
                // (L^T)_{ik} = L_{ki}
                v -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
    }
    x
}

/// Gaussian elimination with partial pivoting. Returns `None` when a pivot
/// vanishes (relative to the largest entry of `a`).
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return None;
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let (pivot_row, pivot_abs) =
            (col..n)
                .map(|r| (r, m[(r, col)].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot_abs <= 1e-14 * scale {
            return None;
        }
        if pivot_row != col {
            m.swap_rows(pivot_row, col);
            rhs.swap_rows(pivot_row, col);
        }
        let pivot = m[(col, col)];
        for r in (col + 1)..n {
            let factor = m[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                m[(r, c)] -= factor * m[(col, c)];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    let mut x = DVector::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..n {
            v -= m[(i, k)] * x[k];
        }
        x[i] = v / m[(i, i)];
    }
    Some(x)
}

/// Spectral radius of a square matrix.
///
/// Power iteration from a seeded random positive start vector, at most
/// [`POWER_ITERATIONS`] steps, stopping once the growth factor `||M v||`
/// changes by less than [`POWER_REL_TOL`] (relative) on three consecutive
/// steps. When the dominant eigenvalue is not unique in modulus (complex
/// pairs, defective blocks) the growth factor oscillates or creeps, and the
/// estimate falls back to the eigenvalue moduli of a real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    ensure_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if m.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::<f64>::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    v /= v.norm();

    let mut previous = f64::NAN;
    let mut settled = 0;
    for _ in 0..POWER_ITERATIONS {
        let w = m * &v;
        let growth = w.norm();
        if growth == 0.0 {
            return Ok(0.0);
        }
        if !growth.is_finite() {
            break;
        }
        if (growth - previous).abs() <= POWER_REL_TOL * growth {
            settled += 1;
            if settled >= 3 {
                return Ok(growth);
            }
        } else {
            settled = 0;
        }
        previous = growth;
        v = w / growth;
    }

    log::debug!("power iteration did not settle; using Schur eigenvalues");
    let rho = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max);
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_two_by_two() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = cholesky_factor(&s).unwrap();
        assert_relative_eq!(l[(0, 0)], 2.0, epsilon = 1e-15);
        assert_relative_eq!(l[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(l[(1, 1)], 2.0_f64.sqrt(), epsilon = 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        let back = &l * l.transpose();
        assert!(max_abs(&(back - &s)) < 1e-12 * inf_norm(&s));
    }

    #[test]
    fn cholesky_identity() {
        let s = DMatrix::<f64>::identity(4, 4);
        assert_eq!(cholesky_factor(&s).unwrap(), s);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_factor(&s),
            Err(Error::NotPositiveDefinite { column: 1, .. })
        ));
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(cholesky_factor(&z).is_err());
    }

    #[test]
    fn triangular_solves_invert_factor() {
        let s = DMatrix::from_row_slice(3, 3, &[6.0, 2.0, 1.0, 2.0, 5.0, 2.0, 1.0, 2.0, 4.0]);
        let l = cholesky_factor(&s).unwrap();
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0, 1.0, 0.5, 3.0]);
        let y = forward_substitute(&l, &b);
        assert!(max_abs(&(&l * &y - &b)) < 1e-13);
        let x = back_substitute_transpose(&l, &b);
        assert!(max_abs(&(l.transpose() * &x - &b)) < 1e-13);
    }

    #[test]
    fn gaussian_elimination_needs_pivoting() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![3.0, 2.0, 4.0]);
        let x = solve_linear(&a, &b).unwrap();
        assert!(vec_max_abs(&(&a * &x - &b)) < 1e-14);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(solve_linear(&singular, &DVector::from_vec(vec![1.0, 1.0])).is_none());
    }

    #[test]
    fn spectral_radius_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]);
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn spectral_radius_nilpotent() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(spectral_radius(&m).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_column_stochastic() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.6, 0.7, 0.4]);
        assert_relative_eq!(spectral_radius(&m).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn spectral_radius_complex_pair() {
        // eigenvalues 0.5 +- 0.6i, |.| = sqrt(0.61)
        let m = DMatrix::from_row_slice(2, 2, &[0.5, -0.9, 0.4, 0.5]);
        assert_relative_eq!(
            spectral_radius(&m).unwrap(),
            0.61_f64.sqrt(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn spectral_radius_defective_block() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 1.0, 0.0, 0.9]);
        assert_relative_eq!(spectral_radius(&m).unwrap(), 0.9, epsilon = 1e-6);
    }

    #[test]
    fn spectral_radius_non_square() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(spectral_radius(&m), Err(Error::NonSquare { .. })));
    }
}
