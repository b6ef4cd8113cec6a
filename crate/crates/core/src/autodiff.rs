//! Forward-mode automatic differentiation.
//!
//! Every model function in this crate is written once against the [`Scalar`]
//! trait and evaluated on plain `f64`, on first-order duals, or on nested
//! duals. [`Dual<T>`] carries one directional derivative and is itself a
//! [`Scalar`], so `Dual<Dual<f64>>` gives mixed second derivatives, which is
//! what [`hessian_vector`] uses. [`Dual2`] tracks first and second derivative
//! along a single direction and backs the one-dimensional Newton iterations of
//! the DP oracle.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("non-finite function value or derivative (sqrt of a negative number or division by zero)")]
    Domain,
    #[error("dimension mismatch: point has {point} entries, direction has {direction}")]
    Dimension { point: usize, direction: usize },
}

/// Arithmetic surface shared by `f64` and the dual number types.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Lifts a constant (all derivative parts zero).
    fn cst(c: f64) -> Self;

    /// The plain real part.
    fn value(&self) -> f64;

    fn sqrt(self) -> Self;

    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }

    fn square(self) -> Self {
        self * self
    }

    /// True when every component is finite.
    fn is_finite(&self) -> bool;
}

impl Scalar for f64 {
    #[inline]
    fn cst(c: f64) -> Self {
        c
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

/// A value paired with one directional derivative.
///
/// `Dual<f64>` is the first-order type; nesting gives higher orders.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

pub type Dual1 = Dual<f64>;

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    /// A variable seeded with derivative one.
    #[inline]
    pub fn var(re: T) -> Self {
        Dual { re, eps: T::cst(1.0) }
    }

    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }
}

impl Dual1 {
    /// Directional derivative part (alias of `eps` for readability).
    #[inline]
    pub fn deriv(&self) -> f64 {
        self.eps
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Add<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual::new(self.re + c, self.eps)
    }
}

impl<T: Scalar> Sub<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual::new(self.re - c, self.eps)
    }
}

impl<T: Scalar> Mul<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Dual::new(self.re * c, self.eps * c)
    }
}

impl<T: Scalar> Div<f64> for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Dual::new(self.re / c, self.eps / c)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn cst(c: f64) -> Self {
        Dual::constant(T::cst(c))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s * 2.0))
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::cst(1.0),
            1 => self,
            _ => Dual::new(self.re.powi(n), self.eps * self.re.powi(n - 1) * f64::from(n)),
        }
    }
    #[inline]
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

/// Value with first and second derivative along one direction.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Dual2 {
    #[inline]
    pub fn new(value: f64, d1: f64, d2: f64) -> Self {
        Dual2 { value, d1, d2 }
    }

    /// Seeds direction `dir` at `x`.
    #[inline]
    pub fn seed(x: f64, dir: f64) -> Self {
        Dual2 { value: x, d1: dir, d2: 0.0 }
    }

    /// Chain rule for a scalar function `g` given `g(v)`, `g'(v)`, `g''(v)`.
    #[inline]
    fn chain(self, g: f64, g1: f64, g2: f64) -> Self {
        Dual2 {
            value: g,
            d1: g1 * self.d1,
            d2: g1 * self.d2 + g2 * self.d1 * self.d1,
        }
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual2::new(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual2::new(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)
    }
}

impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual2::new(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )
    }
}

impl Div for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        // a = q·b differentiated twice
        let q = self.value / o.value;
        let q1 = (self.d1 - q * o.d1) / o.value;
        let q2 = (self.d2 - 2.0 * q1 * o.d1 - q * o.d2) / o.value;
        Dual2::new(q, q1, q2)
    }
}

impl Neg for Dual2 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual2::new(-self.value, -self.d1, -self.d2)
    }
}

impl Add<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Dual2::new(self.value + c, self.d1, self.d2)
    }
}

impl Sub<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, c: f64) -> Self {
        Dual2::new(self.value - c, self.d1, self.d2)
    }
}

impl Mul<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Dual2::new(self.value * c, self.d1 * c, self.d2 * c)
    }
}

impl Div<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, c: f64) -> Self {
        Dual2::new(self.value / c, self.d1 / c, self.d2 / c)
    }
}

impl AddAssign for Dual2 {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for Dual2 {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for Dual2 {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Scalar for Dual2 {
    #[inline]
    fn cst(c: f64) -> Self {
        Dual2::new(c, 0.0, 0.0)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.value
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * s * s))
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::cst(1.0),
            1 => self,
            _ => {
                let nf = f64::from(n);
                self.chain(
                    self.value.powi(n),
                    nf * self.value.powi(n - 1),
                    nf * (nf - 1.0) * self.value.powi(n - 2),
                )
            }
        }
    }
    #[inline]
    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

/// A scalar field that can be evaluated on any [`Scalar`].
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

/// Directional derivative of `f` at `x` along `dir` (one forward pass).
pub fn directional<F: ScalarField + ?Sized>(f: &F, x: &[f64], dir: &[f64]) -> Result<Dual1, AdError> {
    if x.len() != dir.len() {
        return Err(AdError::Dimension { point: x.len(), direction: dir.len() });
    }
    let seeded: Vec<Dual1> = x.iter().zip(dir).map(|(&xi, &di)| Dual::new(xi, di)).collect();
    let out = f.eval(&seeded);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(AdError::Domain)
    }
}

/// Value, first and second directional derivative along `dir`.
pub fn directional2<F: ScalarField + ?Sized>(f: &F, x: &[f64], dir: &[f64]) -> Result<Dual2, AdError> {
    if x.len() != dir.len() {
        return Err(AdError::Dimension { point: x.len(), direction: dir.len() });
    }
    let seeded: Vec<Dual2> = x.iter().zip(dir).map(|(&xi, &di)| Dual2::seed(xi, di)).collect();
    let out = f.eval(&seeded);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(AdError::Domain)
    }
}

/// Gradient by `n` forward passes, one per coordinate direction.
pub fn gradient<F: ScalarField + ?Sized>(f: &F, x: &[f64]) -> Result<Vec<f64>, AdError> {
    value_and_gradient(f, x).map(|(_, g)| g)
}

pub fn value_and_gradient<F: ScalarField + ?Sized>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>), AdError> {
    let n = x.len();
    let mut seeded: Vec<Dual1> = x.iter().map(|&xi| Dual::constant(xi)).collect();
    let mut grad = Vec::with_capacity(n);
    let mut value = f.eval(x);
    for i in 0..n {
        seeded[i].eps = 1.0;
        let out = f.eval(&seeded);
        seeded[i].eps = 0.0;
        if !out.is_finite() {
            return Err(AdError::Domain);
        }
        value = out.re;
        grad.push(out.eps);
    }
    if !value.is_finite() {
        return Err(AdError::Domain);
    }
    Ok((value, grad))
}

/// `∇²f(x)·v` by forward-over-forward seeding: the inner dual carries `v`,
/// the outer dual walks the coordinate directions. No Hessian is formed.
pub fn hessian_vector<F: ScalarField + ?Sized>(f: &F, x: &[f64], v: &[f64]) -> Result<Vec<f64>, AdError> {
    if x.len() != v.len() {
        return Err(AdError::Dimension { point: x.len(), direction: v.len() });
    }
    let n = x.len();
    let mut seeded: Vec<Dual<Dual1>> = x
        .iter()
        .zip(v)
        .map(|(&xi, &vi)| Dual::new(Dual::new(xi, vi), Dual::constant(0.0)))
        .collect();
    let mut hv = Vec::with_capacity(n);
    for i in 0..n {
        seeded[i].eps = Dual::constant(1.0);
        let out = f.eval(&seeded);
        seeded[i].eps = Dual::constant(0.0);
        if !out.is_finite() {
            return Err(AdError::Domain);
        }
        hv.push(out.eps.eps);
    }
    Ok(hv)
}
