//! Dense linear algebra over jets: inversion and determinants of small
//! matrices whose entries are Taylor expansions.
//!
//! Matrices are stored row-major as flat `Vec<Jet>` slices; pivoting
//! decisions use only the value parts, so the elimination order (and
//! with it every coefficient) is deterministic.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::tol::METRIC_COND_LIMIT;

/// Value parts of a flat row-major jet matrix.
pub fn value_matrix(m: &[Jet], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| m[i * n + j].value())
}

/// Two-norm condition number of a value matrix via SVD.
pub fn condition(values: &DMatrix<f64>) -> f64 {
    let svd = values.clone().svd(false, false);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in svd.singular_values.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Invert a jet matrix by Gauss-Jordan elimination with partial pivoting
/// on the value parts. Returns the inverse and the condition number of
/// the value matrix; refuses to invert past the conditioning limit.
pub fn invert(m: &[Jet], n: usize, context: &'static str) -> Result<(Vec<Jet>, f64)> {
    debug_assert_eq!(m.len(), n * n);
    let cond = condition(&value_matrix(m, n));
    if !cond.is_finite() || cond > METRIC_COND_LIMIT {
        return Err(Error::SingularMetric {
            context,
            cond,
            limit: METRIC_COND_LIMIT,
        });
    }
    // Augmented system [A | I], reduced in place.
    let mut a: Vec<Jet> = m.to_vec();
    let first = &m[0];
    let one = first.scale(0.0).add_scalar(1.0);
    let zero = first.scale(0.0);
    let mut inv: Vec<Jet> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            inv.push(if i == j { one.clone() } else { zero.clone() });
        }
    }
    for col in 0..n {
        // Pivot row by largest value magnitude.
        let mut piv = col;
        let mut best = a[col * n + col].value().abs();
        for r in col + 1..n {
            let v = a[r * n + col].value().abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(Error::SingularMetric {
                context,
                cond: f64::INFINITY,
                limit: METRIC_COND_LIMIT,
            });
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
                inv.swap(col * n + j, piv * n + j);
            }
        }
        let pivot = a[col * n + col].clone();
        for j in 0..n {
            a[col * n + j] = a[col * n + j].try_div(&pivot)?;
            inv[col * n + j] = inv[col * n + j].try_div(&pivot)?;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            // Eliminate even when the value part is zero: higher-order
            // coefficients of the factor may still be nonzero.
            let factor = a[r * n + col].clone();
            for j in 0..n {
                let ta = factor.try_mul(&a[col * n + j])?;
                a[r * n + j] = a[r * n + j].try_sub(&ta)?;
                let ti = factor.try_mul(&inv[col * n + j])?;
                inv[r * n + j] = inv[r * n + j].try_sub(&ti)?;
            }
        }
    }
    Ok((inv, cond))
}

/// Determinant of a jet matrix by LU elimination with partial pivoting.
pub fn determinant(m: &[Jet], n: usize, context: &'static str) -> Result<Jet> {
    debug_assert_eq!(m.len(), n * n);
    let mut a: Vec<Jet> = m.to_vec();
    let mut sign = 1.0f64;
    let mut det = a[0].scale(0.0).add_scalar(1.0);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].value().abs();
        for r in col + 1..n {
            let v = a[r * n + col].value().abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return Err(Error::SingularMetric {
                context,
                cond: f64::INFINITY,
                limit: METRIC_COND_LIMIT,
            });
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            sign = -sign;
        }
        let pivot = a[col * n + col].clone();
        det = det.try_mul(&pivot)?;
        for r in col + 1..n {
            let factor = a[r * n + col].try_div(&pivot)?;
            for j in col..n {
                let t = factor.try_mul(&a[col * n + j])?;
                a[r * n + j] = a[r * n + j].try_sub(&t)?;
            }
        }
    }
    Ok(det.scale(sign))
}
