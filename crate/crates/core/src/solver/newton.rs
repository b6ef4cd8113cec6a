//! Matrix-free Newton-CG with Armijo backtracking.
//!
//! The Hessian is only touched through Hessian-vector products inside a
//! (diagonally preconditioned) conjugate-gradient loop. When CG meets
//! nonpositive curvature a Levenberg shift `μD` is added and the inner solve
//! restarts.

use serde::{Deserialize, Serialize};

use super::{SolverError, SolverOptions};
use crate::autodiff::{self, ScalarField};

/// A smooth objective with first derivatives and Hessian-vector products.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, u: &[f64]) -> f64;

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>);

    fn hessian_vector(&self, u: &[f64], v: &[f64]) -> Vec<f64>;

    /// Positive diagonal used as CG preconditioner and damping metric.
    fn scaling(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Adapts any [`ScalarField`] through the generic AD drivers.
pub struct AdObjective<F>(pub F);

impl<F: ScalarField> Objective for AdObjective<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, u: &[f64]) -> f64 {
        self.0.eval(u)
    }

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>) {
        autodiff::value_and_gradient(&self.0, u).unwrap_or_else(|_| (f64::NAN, vec![f64::NAN; u.len()]))
    }

    fn hessian_vector(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        autodiff::hessian_vector(&self.0, u, v).unwrap_or_else(|_| vec![f64::NAN; u.len()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub cg_iters: usize,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Minimum {
    pub u: Vec<f64>,
    pub value: f64,
    /// Max norm of the gradient at `u`.
    pub grad_norm: f64,
    pub iters: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
}

const MAX_HALVINGS: usize = 60;
const MAX_DAMPING_RESTARTS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

enum CgOutcome {
    Step { p: Vec<f64>, iters: usize },
    NegativeCurvature { kappa: f64 },
}

/// Preconditioned CG on `(H + μD) p = −g`, stopping at `‖r‖ ≤ η‖g‖`.
fn inner_cg<O: Objective + ?Sized>(obj: &O, u: &[f64], g: &[f64], diag: &[f64], mu: f64, eta: f64) -> CgOutcome {
    let n = g.len();
    let g_norm = dot(g, g).sqrt();
    let target = eta * g_norm;
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iters = 2 * n + 20;
    for j in 0..max_iters {
        let mut ap = obj.hessian_vector(u, &p);
        for ((a, pi), di) in ap.iter_mut().zip(&p).zip(diag) {
            *a += mu * di * pi;
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            let pdp: f64 = p.iter().zip(diag).map(|(pi, di)| di * pi * pi).sum();
            let kappa = if pap.is_nan() { f64::NEG_INFINITY } else { pap / pdp };
            return CgOutcome::NegativeCurvature { kappa };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= target {
            return CgOutcome::Step { p: x, iters: j + 1 };
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome::Step { p: x, iters: max_iters }
}

/// Minimizes `obj` from `u0`. Non-convergence within `max_iters` is reported
/// through [`Minimum::converged`]; a failed line search is an error.
pub fn newton_minimize<O: Objective + ?Sized>(obj: &O, u0: Vec<f64>, opts: &SolverOptions) -> Result<Minimum, SolverError> {
    opts.validate()?;
    let n = obj.dim();
    if u0.len() != n {
        return Err(SolverError::Dimension { expected: n, got: u0.len() });
    }
    let diag = obj.scaling().unwrap_or_else(|| vec![1.0; n]);
    let mut u = u0;
    let (mut f, mut g) = obj.value_and_gradient(&u);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let mut trace = opts.record_trace.then(Vec::new);
    let mut mu = 0.0;
    let mut iters = 0;
    loop {
        let grad_norm = max_norm(&g);
        if grad_norm <= opts.grad_tol {
            return Ok(Minimum { u, value: f, grad_norm, iters, converged: true, trace });
        }
        if iters >= opts.max_iters {
            return Ok(Minimum { u, value: f, grad_norm, iters, converged: false, trace });
        }
        iters += 1;

        let eta = opts.cg_tol_factor.min(dot(&g, &g).sqrt().sqrt());
        let mut step = None;
        for _ in 0..MAX_DAMPING_RESTARTS {
            match inner_cg(obj, &u, &g, &diag, mu, eta) {
                CgOutcome::Step { p, iters } => {
                    step = Some((p, iters));
                    break;
                }
                CgOutcome::NegativeCurvature { kappa } => {
                    if !kappa.is_finite() {
                        break;
                    }
                    mu = (2.0 * (mu - kappa)).max(10.0 * mu).max(opts.damping_floor);
                }
            }
        }
        let (mut p, cg_iters) = step.unwrap_or_else(|| (g.iter().zip(&diag).map(|(gi, di)| -gi / di).collect(), 0));
        let used_damping = mu;
        if mu > 0.0 {
            mu /= 10.0;
            if mu < opts.damping_floor {
                mu = 0.0;
            }
        }

        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            p = g.iter().zip(&diag).map(|(gi, di)| -gi / di).collect();
            slope = dot(&g, &p);
        }

        let roundoff = 16.0 * f64::EPSILON * (1.0 + f.abs());
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = u.iter().zip(&p).map(|(ui, pi)| ui + alpha * pi).collect();
            let f_trial = obj.value(&trial);
            if f_trial.is_finite() {
                if f_trial <= f + opts.armijo_c1 * alpha * slope {
                    accepted = Some(trial);
                    break;
                }
                // Predicted decrease below the rounding level of f: the
                // sufficient-decrease test is meaningless, judge by the gradient.
                if (alpha * slope).abs() <= roundoff && f_trial <= f + roundoff {
                    let (_, g_trial) = obj.value_and_gradient(&trial);
                    if max_norm(&g_trial) < grad_norm {
                        accepted = Some(trial);
                        break;
                    }
                }
            }
            alpha *= opts.backtrack;
        }
        let Some(next) = accepted else {
            return Err(SolverError::LineSearch { iter: iters, value: f, grad_norm });
        };
        u = next;
        let (f_next, g_next) = obj.value_and_gradient(&u);
        f = f_next;
        g = g_next;
        if let Some(t) = trace.as_mut() {
            t.push(IterationRecord { iter: iters, value: f, grad_norm: max_norm(&g), step: alpha, cg_iters, damping: used_damping });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Scalar;
    use approx::assert_relative_eq;

    struct Quadratic;
    impl ScalarField for Quadratic {
        fn dim(&self) -> usize {
            3
        }
        fn eval<S: Scalar>(&self, u: &[S]) -> S {
            // ½uᵀHu − bᵀu with H = [[4,1,0],[1,3,1],[0,1,2]], b = [1,2,3]
            let hu0 = u[0] * 4.0 + u[1];
            let hu1 = u[0] + u[1] * 3.0 + u[2];
            let hu2 = u[1] + u[2] * 2.0;
            (u[0] * hu0 + u[1] * hu1 + u[2] * hu2) * 0.5 - u[0] - u[1] * 2.0 - u[2] * 3.0
        }
    }

    struct Rosenbrock;
    impl ScalarField for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn eval<S: Scalar>(&self, u: &[S]) -> S {
            (S::cst(1.0) - u[0]).square() + (u[1] - u[0] * u[0]).square() * 100.0
        }
    }

    #[test]
    fn quadratic_one_newton_step() {
        // exact inner solve: Newton on a quadratic lands on H⁻¹b in one step
        let opts = SolverOptions { cg_tol_factor: 1e-14, ..Default::default() };
        let m = newton_minimize(&AdObjective(Quadratic), vec![0.0; 3], &opts).unwrap();
        assert!(m.converged);
        assert_eq!(m.iters, 1);
        // Cramer's rule oracle
        let h = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(h);
        for col in 0..3 {
            let mut hc = h;
            for row in 0..3 {
                hc[row][col] = b[row];
            }
            assert_relative_eq!(m.u[col], det(hc) / d, epsilon = 1e-12);
        }
    }

    #[test]
    fn rosenbrock() {
        let opts = SolverOptions { record_trace: true, ..Default::default() };
        let m = newton_minimize(&AdObjective(Rosenbrock), vec![-1.2, 1.0], &opts).unwrap();
        assert!(m.converged, "{m:?}");
        assert!((m.u[0] - 1.0).abs() < 1e-8 && (m.u[1] - 1.0).abs() < 1e-8);
        let trace = m.trace.unwrap();
        // monotone descent up to the rounding level
        let mut prev = Rosenbrock.eval(&[-1.2, 1.0]);
        for rec in &trace {
            assert!(rec.value <= prev + 1e-14 * (1.0 + prev.abs()));
            prev = rec.value;
        }
    }

    #[test]
    fn negative_curvature_triggers_damping() {
        struct DoubleWell;
        impl ScalarField for DoubleWell {
            fn dim(&self) -> usize {
                2
            }
            fn eval<S: Scalar>(&self, u: &[S]) -> S {
                (u[0] * u[0] - 1.0).square() + u[1] * u[1]
            }
        }
        let opts = SolverOptions { record_trace: true, ..Default::default() };
        let m = newton_minimize(&AdObjective(DoubleWell), vec![0.1, 0.5], &opts).unwrap();
        assert!(m.converged);
        assert_relative_eq!(m.u[0].abs(), 1.0, epsilon = 1e-9);
        assert!(m.trace.unwrap().iter().any(|r| r.damping > 0.0));
    }

    #[test]
    fn reports_non_convergence() {
        let opts = SolverOptions { max_iters: 2, ..Default::default() };
        let m = newton_minimize(&AdObjective(Rosenbrock), vec![-1.2, 1.0], &opts).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iters, 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            newton_minimize(&AdObjective(Rosenbrock), vec![0.0], &SolverOptions::default()),
            Err(SolverError::Dimension { .. })
        ));
        let bad = SolverOptions { armijo_c1: 1.5, ..Default::default() };
        assert!(newton_minimize(&AdObjective(Rosenbrock), vec![0.0, 0.0], &bad).is_err());
    }
}
