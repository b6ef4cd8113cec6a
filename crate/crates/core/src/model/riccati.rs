//! Discrete algebraic Riccati equation by fixed-point iteration.

use nalgebra::DMatrix;

use super::ModelError;

pub const RICCATI_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITERS: usize = 1_000_000;

/// Scalar DARE `p = q + a²p − (abp)²/(r + b²p)`, iterated from `p = q`.
pub fn riccati_terminal_weight(q: f64, r: f64, a: f64, b: f64) -> Result<f64, ModelError> {
    if !(r > 0.0) {
        return Err(ModelError::InvalidParameter(format!("r must be positive, got {r}")));
    }
    if !(q >= 0.0) {
        return Err(ModelError::InvalidParameter(format!("q must be nonnegative, got {q}")));
    }
    let map = |p: f64| q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
    let mut p = q;
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let next = map(p);
        if !next.is_finite() {
            break;
        }
        residual = (next - p).abs();
        p = next;
        if residual <= RICCATI_TOL {
            return Ok(p);
        }
    }
    Err(ModelError::RiccatiDivergence { iters: RICCATI_MAX_ITERS, residual })
}

/// Matrix DARE `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`, iterated from `P = Q`.
pub fn dare_fixed_point(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ModelError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.nrows() != b.ncols() || !r.is_square() {
        return Err(ModelError::Dimension("inconsistent A, B, Q, R shapes".into()));
    }
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITERS {
        let btp = b.transpose() * &p;
        let gain_lhs = r + &btp * b;
        let Some(chol) = gain_lhs.clone().cholesky() else {
            return Err(ModelError::InvalidParameter("R + BᵀPB is not positive definite".into()));
        };
        let k = chol.solve(&(&btp * a));
        let next = q + a.transpose() * &p * a - (a.transpose() * &p * b) * k;
        // symmetrize to keep roundoff from drifting
        let next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        residual = (&next - &p).amax();
        p = next;
        if residual <= RICCATI_TOL {
            return Ok(p);
        }
    }
    Err(ModelError::RiccatiDivergence { iters: RICCATI_MAX_ITERS, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_dynamics_gives_q() {
        assert_eq!(riccati_terminal_weight(5.0, 1.0, 0.0, 0.3).unwrap(), 5.0);
        assert_eq!(riccati_terminal_weight(5.0, 1.0, 0.0, 0.0).unwrap(), 5.0);
    }

    #[test]
    fn zero_cost_gives_zero() {
        assert_eq!(riccati_terminal_weight(0.0, 1.0, 0.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn golden_ratio_case() {
        // a = b = q = r = 1: p² − p − 1 = 0
        let p = riccati_terminal_weight(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(p, (1.0 + 5f64.sqrt()) / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn benchmark_linearization_residual() {
        // RK4 of ẋ = x + u with h = 0.2, from the truncated exponential series
        let h: f64 = 0.2;
        let a: f64 = (0..=4).map(|i| h.powi(i) / (1..=i).map(f64::from).product::<f64>()).sum();
        let b = a - 1.0;
        let p = riccati_terminal_weight(5.0, 1.0, a, b).unwrap();
        let residual = 5.0 + a * a * p - (a * b * p).powi(2) / (1.0 + b * b * p) - p;
        assert!(residual.abs() <= 1e-12);
        assert!(p >= 5.0);
    }

    #[test]
    fn not_stabilizable() {
        let err = riccati_terminal_weight(1.0, 1.0, 1.5, 0.0).unwrap_err();
        assert!(matches!(err, ModelError::RiccatiDivergence { .. }));
        assert!(riccati_terminal_weight(1.0, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn matrix_matches_scalar() {
        let (q, r, a, b) = (5.0, 1.0, 1.2214, 0.2214);
        let p = dare_fixed_point(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, b),
            &DMatrix::from_element(1, 1, q),
            &DMatrix::from_element(1, 1, r),
        )
        .unwrap();
        assert_relative_eq!(p[(0, 0)], riccati_terminal_weight(q, r, a, b).unwrap(), max_relative = 1e-11);
    }

    #[test]
    fn matrix_two_states_fixed_point() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.5);
        let p = dare_fixed_point(&a, &b, &q, &r).unwrap();
        let btp = b.transpose() * &p;
        let k = (&r + &btp * &b).try_inverse().unwrap() * (&btp * &a);
        let rhs = &q + a.transpose() * &p * &a - a.transpose() * &p * &b * k;
        assert!((rhs - &p).amax() < 1e-9);
    }
}
