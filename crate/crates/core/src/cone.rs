//! Proper cones on which the value objects live: the nonnegative orthant and
//! the cone of positive semidefinite matrices. Both are self-dual, so the same
//! tag describes a cone and its dual.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, symmetrize, vec_max_abs};

/// Tolerance for cone membership and order comparisons.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

/// Tolerance on `|M - M^T|` accepted before a matrix is symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeTag {
    /// Nonnegative orthant of R^dim.
    Orthant(usize),
    /// Positive semidefinite dim x dim symmetric matrices (Loewner order).
    Psd(usize),
}

impl ConeTag {
    pub fn dim(&self) -> usize {
        match self {
            ConeTag::Orthant(d) | ConeTag::Psd(d) => *d,
        }
    }
}

impl fmt::Display for ConeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConeTag::Orthant(d) => write!(f, "orthant({d})"),
            ConeTag::Psd(d) => write!(f, "psd({d})"),
        }
    }
}

/// Element of a cone's ambient space: a vector for the orthant, a symmetric
/// matrix for the semidefinite cone.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueObject {
    Orthant(DVector<f64>),
    Psd(DMatrix<f64>),
}

impl ValueObject {
    pub fn orthant(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidProblem(
                "orthant dimension must be >= 1".into(),
            ));
        }
        Ok(ValueObject::Orthant(v))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::orthant(DVector::from_column_slice(v))
    }

    /// Wraps a symmetric matrix, symmetrizing away drift up to [`SYMMETRY_TOL`].
    pub fn psd(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NonSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidProblem("psd dimension must be >= 1".into()));
        }
        let asym = max_abs(&(&m - m.transpose()));
        if asym > SYMMETRY_TOL * max_abs(&m).max(1.0) {
            return Err(Error::InvalidProblem(format!(
                "matrix is not symmetric (asymmetry {asym:e})"
            )));
        }
        Ok(ValueObject::Psd(symmetrize(&m)))
    }

    pub fn zero(cone: ConeTag) -> Self {
        match cone {
            ConeTag::Orthant(d) => ValueObject::Orthant(DVector::zeros(d)),
            ConeTag::Psd(d) => ValueObject::Psd(DMatrix::zeros(d, d)),
        }
    }

    pub fn cone(&self) -> ConeTag {
        match self {
            ValueObject::Orthant(v) => ConeTag::Orthant(v.len()),
            ValueObject::Psd(m) => ConeTag::Psd(m.nrows()),
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            ValueObject::Orthant(v) => Some(v),
            ValueObject::Psd(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            ValueObject::Psd(m) => Some(m),
            ValueObject::Orthant(_) => None,
        }
    }

    /// Largest absolute entry.
    pub fn sup_norm(&self) -> f64 {
        match self {
            ValueObject::Orthant(v) => vec_max_abs(v),
            ValueObject::Psd(m) => max_abs(m),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ValueObject::Orthant(v) => v.iter().all(|x| x.is_finite()),
            ValueObject::Psd(m) => m.iter().all(|x| x.is_finite()),
        }
    }

    /// Smallest entry (orthant) or smallest eigenvalue (semidefinite cone).
    pub fn min_coordinate(&self) -> f64 {
        match self {
            ValueObject::Orthant(v) => v.min(),
            ValueObject::Psd(m) => SymmetricEigen::new(symmetrize(m)).eigenvalues.min(),
        }
    }

    /// How far the element lies outside the cone; zero for members.
    pub fn membership_violation(&self) -> f64 {
        (-self.min_coordinate()).max(0.0)
    }

    pub fn in_cone(&self) -> bool {
        self.min_coordinate() >= -MEMBERSHIP_TOL
    }

    pub fn is_interior(&self) -> bool {
        self.min_coordinate() > 0.0
    }

    /// Dot product (orthant) or Frobenius inner product (semidefinite cone).
    pub fn inner(&self, other: &ValueObject) -> Result<f64> {
        match (self, other) {
            (ValueObject::Orthant(a), ValueObject::Orthant(b)) if a.len() == b.len() => {
                Ok(a.dot(b))
            }
            (ValueObject::Psd(a), ValueObject::Psd(b)) if a.shape() == b.shape() => Ok(a.dot(b)),
            _ => Err(mismatch(self, other)),
        }
    }

    pub fn try_sub(&self, other: &ValueObject) -> Result<ValueObject> {
        match (self, other) {
            (ValueObject::Orthant(a), ValueObject::Orthant(b)) if a.len() == b.len() => {
                Ok(ValueObject::Orthant(a - b))
            }
            (ValueObject::Psd(a), ValueObject::Psd(b)) if a.shape() == b.shape() => {
                Ok(ValueObject::Psd(a - b))
            }
            _ => Err(mismatch(self, other)),
        }
    }

    pub fn try_add_assign(&mut self, other: &ValueObject) -> Result<()> {
        match (&mut *self, other) {
            (ValueObject::Orthant(a), ValueObject::Orthant(b)) if a.len() == b.len() => {
                *a += b;
                Ok(())
            }
            (ValueObject::Psd(a), ValueObject::Psd(b)) if a.shape() == b.shape() => {
                *a += b;
                Ok(())
            }
            _ => Err(mismatch(self, other)),
        }
    }

    pub fn try_sub_assign(&mut self, other: &ValueObject) -> Result<()> {
        match (&mut *self, other) {
            (ValueObject::Orthant(a), ValueObject::Orthant(b)) if a.len() == b.len() => {
                *a -= b;
                Ok(())
            }
            (ValueObject::Psd(a), ValueObject::Psd(b)) if a.shape() == b.shape() => {
                *a -= b;
                Ok(())
            }
            _ => Err(mismatch(self, other)),
        }
    }

    pub fn scaled(&self, a: f64) -> ValueObject {
        match self {
            ValueObject::Orthant(v) => ValueObject::Orthant(v * a),
            ValueObject::Psd(m) => ValueObject::Psd(m * a),
        }
    }
}

fn mismatch(a: &ValueObject, b: &ValueObject) -> Error {
    Error::ConeMismatch {
        left: a.cone().to_string(),
        right: b.cone().to_string(),
    }
}

fn ensure_same_cone(a: &ValueObject, b: &ValueObject) -> Result<()> {
    if a.cone() != b.cone() {
        return Err(mismatch(a, b));
    }
    Ok(())
}

/// Cone linear absolute norm `||x||_w = <w, x>` of a cone element `x` under a
/// weight `w` from the interior of the dual cone.
pub fn cone_norm(w: &ValueObject, x: &ValueObject) -> Result<f64> {
    ensure_same_cone(w, x)?;
    if !w.is_interior() {
        return Err(Error::NotInteriorWeight);
    }
    if !x.in_cone() {
        return Err(Error::NotInCone {
            violation: x.membership_violation(),
        });
    }
    w.inner(x)
}

/// Result of comparing two elements under the order induced by their cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeOrdering {
    Leq,
    Geq,
    Equal,
    Unordered,
}

/// Classifies `a` against `b`: `Leq` when `b - a` lies in the cone, `Geq`
/// when `a - b` does, `Equal` when both do (at [`MEMBERSHIP_TOL`]).
pub fn partial_order(a: &ValueObject, b: &ValueObject) -> Result<ConeOrdering> {
    ensure_same_cone(a, b)?;
    let up = b.try_sub(a)?.in_cone();
    let down = a.try_sub(b)?.in_cone();
    Ok(match (up, down) {
        (true, true) => ConeOrdering::Equal,
        (true, false) => ConeOrdering::Leq,
        (false, true) => ConeOrdering::Geq,
        (false, false) => ConeOrdering::Unordered,
    })
}

/// Returns a minimal element of `candidates`: one that no other candidate is
/// strictly below. Ties between minimal elements go to the lowest index.
pub fn min_of_ordered_set(candidates: &[ValueObject]) -> Result<(usize, &ValueObject)> {
    let first = candidates.first().ok_or(Error::EmptySet)?;
    for c in candidates {
        ensure_same_cone(first, c)?;
    }
    'outer: for (i, c) in candidates.iter().enumerate() {
        for (j, other) in candidates.iter().enumerate() {
            if i != j && partial_order(other, c)? == ConeOrdering::Leq {
                continue 'outer;
            }
        }
        return Ok((i, c));
    }
    // Unreachable for a finite partial order; keep the lowest index if
    // tolerance effects ever make the strict relation cyclic.
    Ok((0, first))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> ValueObject {
        ValueObject::from_slice(x).unwrap()
    }

    fn m(n: usize, x: &[f64]) -> ValueObject {
        ValueObject::psd(DMatrix::from_row_slice(n, n, x)).unwrap()
    }

    #[test]
    fn norm_orthant() {
        assert_eq!(cone_norm(&v(&[1.0, 1.0]), &v(&[2.0, 3.0])).unwrap(), 5.0);
        assert_eq!(cone_norm(&v(&[1.0, 2.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn norm_psd_is_trace() {
        let w = m(2, &[1.0, 0.0, 0.0, 1.0]);
        let x = m(2, &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(cone_norm(&w, &x).unwrap(), 3.0);
    }

    #[test]
    fn norm_errors() {
        assert!(matches!(
            cone_norm(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])),
            Err(Error::NotInteriorWeight)
        ));
        assert!(matches!(
            cone_norm(&v(&[1.0, 1.0]), &v(&[1.0, -1.0])),
            Err(Error::NotInCone { .. })
        ));
        assert!(matches!(
            cone_norm(&v(&[1.0]), &m(1, &[1.0])),
            Err(Error::ConeMismatch { .. })
        ));
        // indefinite weight
        assert!(matches!(
            cone_norm(&m(2, &[1.0, 2.0, 2.0, 1.0]), &m(2, &[1.0, 0.0, 0.0, 1.0])),
            Err(Error::NotInteriorWeight)
        ));
    }

    #[test]
    fn order_examples() {
        assert_eq!(
            partial_order(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])).unwrap(),
            ConeOrdering::Leq
        );
        assert_eq!(
            partial_order(&v(&[1.0, 2.0]), &v(&[2.0, 1.0])).unwrap(),
            ConeOrdering::Unordered
        );
        assert_eq!(
            partial_order(&m(2, &[1.0, 0.0, 0.0, 1.0]), &m(2, &[2.0, 0.0, 0.0, 2.0])).unwrap(),
            ConeOrdering::Leq
        );
        assert_eq!(
            partial_order(&v(&[3.0]), &v(&[1.0])).unwrap(),
            ConeOrdering::Geq
        );
        assert_eq!(
            partial_order(&v(&[1.0, 1.0]), &v(&[1.0, 1.0])).unwrap(),
            ConeOrdering::Equal
        );
    }

    #[test]
    fn loewner_order_is_not_entrywise() {
        // entrywise larger but the difference [[0,1],[1,0]] is indefinite
        let a = m(2, &[1.0, 0.0, 0.0, 1.0]);
        let b = m(2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(partial_order(&a, &b).unwrap(), ConeOrdering::Unordered);
    }

    #[test]
    fn min_examples() {
        let set = [v(&[1.0, 2.0]), v(&[2.0, 1.0]), v(&[0.0, 0.0])];
        let (i, x) = min_of_ordered_set(&set).unwrap();
        assert_eq!((i, x), (2, &v(&[0.0, 0.0])));

        let set = [v(&[1.0, 2.0]), v(&[2.0, 1.0])];
        assert_eq!(min_of_ordered_set(&set).unwrap().0, 0);

        let set = [v(&[3.0]), v(&[1.0]), v(&[2.0])];
        assert_eq!(min_of_ordered_set(&set).unwrap(), (1, &v(&[1.0])));

        assert!(matches!(min_of_ordered_set(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn psd_constructor_checks_symmetry() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(ValueObject::psd(bad).is_err());
        let drift = DMatrix::from_row_slice(2, 2, &[1.0, 0.5 + 1e-14, 0.5, 1.0]);
        let obj = ValueObject::psd(drift).unwrap();
        let m = obj.as_matrix().unwrap();
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }
}
