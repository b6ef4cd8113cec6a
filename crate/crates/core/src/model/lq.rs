//! Linear-quadratic reference model. Certainty equivalence holds exactly
//! here, which makes it the control case for every suboptimality check.

use nalgebra::DMatrix;
use serde::Serialize;

use super::{dare_fixed_point, ModelError, NoiseSet, OcpModel};
use crate::autodiff::Scalar;

/// `x⁺ = Ax + Bu + σw`, stage cost `q‖x‖² + r‖u‖²`, terminal cost `xᵀPx`
/// with `P` the DARE solution.
#[derive(Clone, Debug, Serialize)]
pub struct LqModel {
    #[serde(skip)]
    a: DMatrix<f64>,
    #[serde(skip)]
    b: DMatrix<f64>,
    q: f64,
    r: f64,
    #[serde(skip)]
    p_terminal: DMatrix<f64>,
    horizon: usize,
    #[serde(skip)]
    noise: NoiseSet,
}

/// Builds the LQ model with additive noise on every state component
/// (all sign patterns, uniform weights).
pub fn make_lq_model(a: DMatrix<f64>, b: DMatrix<f64>, q: f64, r: f64, horizon: usize) -> Result<LqModel, ModelError> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || b.ncols() == 0 {
        return Err(ModelError::Dimension(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if !(r > 0.0) {
        return Err(ModelError::InvalidParameter(format!("r must be positive, got {r}")));
    }
    if !(q >= 0.0) {
        return Err(ModelError::InvalidParameter(format!("q must be nonnegative, got {q}")));
    }
    let m = b.ncols();
    let p_terminal = dare_fixed_point(&a, &b, &(DMatrix::identity(n, n) * q), &(DMatrix::identity(m, m) * r))?;
    Ok(LqModel { a, b, q, r, p_terminal, horizon, noise: NoiseSet::product_binary(n) })
}

impl LqModel {
    /// Scalar convenience constructor.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64, horizon: usize) -> Result<Self, ModelError> {
        make_lq_model(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), q, r, horizon)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn terminal_matrix(&self) -> &DMatrix<f64> {
        &self.p_terminal
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.q, self.r)
    }

    /// Finite-horizon Riccati recursion from the terminal matrix: returns
    /// `(P_0, K_0)` with optimal first control `u = −K_0 x`.
    pub fn riccati_recursion(&self, steps: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let q = DMatrix::identity(n, n) * self.q;
        let r = DMatrix::identity(m, m) * self.r;
        let mut p = self.p_terminal.clone();
        let mut k = DMatrix::zeros(m, n);
        for _ in 0..steps {
            let btp = self.b.transpose() * &p;
            k = (&r + &btp * &self.b).try_inverse().expect("R + BᵀPB invertible") * (&btp * &self.a);
            let closed = &self.a - &self.b * &k;
            p = &q + k.transpose() * &r * &k + closed.transpose() * &p * &closed;
        }
        (p, k)
    }
}

impl OcpModel for LqModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
    }
    fn noise_dim(&self) -> usize {
        self.a.nrows()
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn noise(&self) -> &NoiseSet {
        &self.noise
    }
    #[inline]
    fn dynamics<S: Scalar>(&self, x: &[S], u: &[S], w: &[f64], next: &mut [S]) {
        for (i, out) in next.iter_mut().enumerate() {
            let mut acc = S::cst(w[i]);
            for (j, &xj) in x.iter().enumerate() {
                acc += xj * self.a[(i, j)];
            }
            for (j, &uj) in u.iter().enumerate() {
                acc += uj * self.b[(i, j)];
            }
            *out = acc;
        }
    }
    #[inline]
    fn stage_cost<S: Scalar>(&self, x: &[S], u: &[S]) -> S {
        let mut acc = S::zero();
        for &xi in x {
            acc += xi * xi * self.q;
        }
        for &ui in u {
            acc += ui * ui * self.r;
        }
        acc
    }
    #[inline]
    fn terminal_cost<S: Scalar>(&self, x: &[S]) -> S {
        let mut acc = S::zero();
        for (i, &xi) in x.iter().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                acc += xi * xj * self.p_terminal[(i, j)];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_terminal_is_fixed_point() {
        let m = LqModel::scalar(1.0, 1.0, 1.0, 1.0, 3).unwrap();
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(m.terminal_matrix()[(0, 0)], golden, max_relative = 1e-12);
        let (p0, k0) = m.riccati_recursion(3);
        assert_relative_eq!(p0[(0, 0)], golden, max_relative = 1e-11);
        assert_relative_eq!(k0[(0, 0)], golden / (1.0 + golden), max_relative = 1e-11);
    }

    #[test]
    fn dynamics_and_costs() {
        let m = LqModel::scalar(0.5, 2.0, 3.0, 1.0, 4).unwrap();
        let mut next = [0.0];
        m.dynamics(&[1.0], &[0.25], &[0.1], &mut next);
        assert_relative_eq!(next[0], 0.5 + 0.5 + 0.1, epsilon = 1e-15);
        assert_eq!(m.stage_cost(&[2.0], &[1.0]), 13.0);
        assert_eq!(m.terminal_cost(&[0.0]), 0.0);
        assert_eq!(m.noise().len(), 2);
        m.noise().check_moments(1e-12).unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(LqModel::scalar(1.0, 1.0, 1.0, 0.0, 3).is_err());
        assert!(LqModel::scalar(2.0, 0.0, 1.0, 1.0, 3).is_err());
        assert!(make_lq_model(DMatrix::identity(2, 2), DMatrix::zeros(3, 1), 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn two_dimensional_model() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let m = make_lq_model(a, b, 1.0, 0.5, 5).unwrap();
        assert_eq!(m.state_dim(), 2);
        assert_eq!(m.control_dim(), 1);
        assert_eq!(m.noise().len(), 4);
    }
}
