use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::DpError;
use crate::autodiff::Scalar;

/// Uniform grid on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
    pub spacing: f64,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self, DpError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DpError::Grid(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if n_points < 2 {
            return Err(DpError::Grid(format!("need at least 2 points, got {n_points}")));
        }
        Ok(Grid1D { lo, hi, n_points, spacing: (hi - lo) / (n_points - 1) as f64 })
    }

    /// Same range, spacing halved.
    pub fn refined(&self) -> Self {
        Grid1D::new(self.lo, self.hi, 2 * self.n_points - 1).expect("refining a valid grid")
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.n_points {
            self.hi
        } else {
            self.lo + j as f64 * self.spacing
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Index `j` with `node(j) ≤ x < node(j+1)`, for `x` inside the grid;
    /// the last cell is closed on the right.
    fn cell(&self, x: f64) -> usize {
        let last = self.n_points - 2;
        let mut j = (((x - self.lo) / self.spacing).floor().max(0.0) as usize).min(last);
        // floor of a rounded quotient can be off by one next to a node
        if x < self.node(j) && j > 0 {
            j -= 1;
        } else if j < last && x >= self.node(j + 1) {
            j += 1;
        }
        j
    }
}

/// C¹ piecewise-cubic Hermite interpolant with fourth-order finite-difference
/// node slopes. Reproduces cubics exactly on every cell (five or more
/// points) and passes through the table values. Arguments outside the grid
/// are clamped to the nearest end, and counted.
#[derive(Debug)]
pub struct Interpolant {
    grid: Grid1D,
    values: Vec<f64>,
    slopes: Vec<f64>,
    clamped: AtomicUsize,
}

impl Interpolant {
    pub fn new(grid: &Grid1D, values: &[f64]) -> Result<Self, DpError> {
        if values.len() != grid.n_points {
            return Err(DpError::TableSize { expected: grid.n_points, got: values.len() });
        }
        Ok(Interpolant { grid: *grid, values: values.to_vec(), slopes: node_slopes(values, grid.spacing), clamped: AtomicUsize::new(0) })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of evaluations clamped so far.
    pub fn clamped(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn eval<S: Scalar>(&self, x: S) -> S {
        let g = &self.grid;
        let xv = x.value();
        // NaN falls through to the lower end as well
        if !(xv >= g.lo) || xv > g.hi {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            return S::cst(if xv > g.hi { self.values[g.n_points - 1] } else { self.values[0] });
        }
        let j = g.cell(xv);
        let h = g.spacing;
        // measure from the nearer node so both cell ends are hit exactly
        let (left, right) = (g.node(j), g.node(j + 1));
        let t = if xv - left <= right - xv { (x - left) / h } else { (x - right) / h + 1.0 };
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = t3 * 2.0 - t2 * 3.0 + 1.0;
        let h10 = t3 - t2 * 2.0 + t;
        let h01 = t2 * 3.0 - t3 * 2.0;
        let h11 = t3 - t2;
        h00 * self.values[j] + h10 * (h * self.slopes[j]) + h01 * self.values[j + 1] + h11 * (h * self.slopes[j + 1])
    }
}

/// Node derivatives: five-point stencils where the grid allows, lower order
/// on tiny grids.
fn node_slopes(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut m = vec![0.0; n];
    match n {
        0 | 1 => {}
        2 => {
            m[0] = (f[1] - f[0]) / h;
            m[1] = m[0];
        }
        3 | 4 => {
            m[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
            m[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
            for j in 1..n - 1 {
                m[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
            }
        }
        _ => {
            let d = 12.0 * h;
            m[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / d;
            m[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / d;
            for j in 2..n - 2 {
                m[j] = (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) / d;
            }
            m[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) / d;
            m[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) / d;
        }
    }
    m
}

/// One-off evaluation of the interpolant of `table` at `x`.
pub fn interpolate(table: &[f64], grid: &Grid1D, x: f64) -> Result<f64, DpError> {
    let it = Interpolant::new(grid, table)?;
    let v = it.eval(x);
    if it.clamped() > 0 {
        log::warn!("interpolation at {x} outside [{}, {}] clamped", grid.lo, grid.hi);
    }
    Ok(v)
}
