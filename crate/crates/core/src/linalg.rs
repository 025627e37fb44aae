//! Dense symmetric solves for normal equations.
//!
//! Systems are factored with Cholesky. The 1-norm condition number is
//! estimated with Hager's method; a system above `Real::MAX_CONDITION`
//! either errors or falls back to the minimum-norm pseudo-inverse
//! solution computed from a symmetric eigendecomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum OnSingular {
    Error,
    MinimumNorm,
}

#[derive(Debug, Clone)]
pub(crate) struct NormalSolution<T: Real> {
    pub solutions: Vec<DVector<T>>,
    pub condition: f64,
    #[allow(dead_code)]
    pub minimum_norm: bool,
}

fn norm1<T: Real>(m: &DMatrix<T>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.as_f64().abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Lower-bound estimate of `||A^{-1}||_1` from a Cholesky factor.
fn inverse_norm1_estimate<T: Real>(chol: &Cholesky<T, Dyn>) -> f64 {
    let n = chol.l_dirty().nrows();
    let mut x = DVector::from_element(n, T::of(1.0 / n as f64));
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = chol.solve(&x);
        estimate = y.iter().map(|v| v.as_f64().abs()).sum::<f64>();
        let sign = y.map(|v| if v >= T::zero() { T::one() } else { -T::one() });
        let z = chol.solve(&sign);
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.as_f64().abs()))
            .fold((0, f64::MIN), |best, cur| if cur.1 > best.1 { cur } else { best });
        if zmax <= z.dot(&x).as_f64() {
            break;
        }
        x.fill(T::zero());
        x[j] = T::one();
    }
    estimate
}

fn minimum_norm<T: Real>(gram: DMatrix<T>, rhs: &[DVector<T>]) -> Vec<DVector<T>> {
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().map(|v| v.as_f64()).fold(0.0, f64::max);
    let cutoff = top / T::MAX_CONDITION;
    let inv: DVector<T> = eig
        .eigenvalues
        .map(|v| if v.as_f64() > cutoff { T::one() / v } else { T::zero() });
    rhs.iter()
        .map(|b| {
            let coords = eig.eigenvectors.tr_mul(b).component_mul(&inv);
            &eig.eigenvectors * coords
        })
        .collect()
}

/// Solves `gram * x = b` for each right-hand side.
pub(crate) fn solve_normal<T: Real>(
    gram: DMatrix<T>,
    rhs: &[DVector<T>],
    on_singular: OnSingular,
    context: &str,
) -> Result<NormalSolution<T>> {
    let singular = |condition: f64| Error::Singular {
        context: context.to_string(),
        condition,
    };
    if gram.iter().all(|v| *v == T::zero()) {
        return Err(singular(f64::INFINITY));
    }
    let condition = match Cholesky::new(gram.clone()) {
        Some(chol) => {
            let cond = norm1(&gram) * inverse_norm1_estimate(&chol);
            if cond.is_finite() && cond <= T::MAX_CONDITION {
                let solutions = rhs.iter().map(|b| chol.solve(b)).collect();
                return Ok(NormalSolution {
                    solutions,
                    condition: cond,
                    minimum_norm: false,
                });
            }
            cond
        }
        None => f64::INFINITY,
    };
    match on_singular {
        OnSingular::Error => Err(singular(condition)),
        OnSingular::MinimumNorm => {
            log::debug!("{context}: condition {condition:.3e}, using minimum-norm solution");
            Ok(NormalSolution {
                solutions: minimum_norm(gram, rhs),
                condition,
                minimum_norm: true,
            })
        }
    }
}
