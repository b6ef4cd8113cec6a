//! Compensated (Neumaier) summation.
//!
//! Works on any [`Scalar`]: the branch that decides which operand carries the
//! rounding error looks at value parts only, derivative parts follow along.

use crate::autodiff::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct CompensatedSum<S> {
    sum: S,
    comp: S,
}

impl<S: Scalar> Default for CompensatedSum<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> CompensatedSum<S> {
    pub fn new() -> Self {
        CompensatedSum { sum: S::zero(), comp: S::zero() }
    }

    #[inline]
    pub fn add(&mut self, x: S) {
        let t = self.sum + x;
        if self.sum.value().abs() >= x.value().abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> S {
        self.sum + self.comp
    }
}

/// Compensated sum of a sequence, in iteration order.
pub fn compensated_sum<S: Scalar, I: IntoIterator<Item = S>>(items: I) -> S {
    let mut acc = CompensatedSum::new();
    for x in items {
        acc.add(x);
    }
    acc.total()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(xs.iter().sum::<f64>(), 0.0);
        assert_eq!(compensated_sum(xs.iter().copied()), 2.0);
    }

    #[test]
    fn many_small_terms() {
        let n = 1_000_000;
        let s = compensated_sum(std::iter::repeat_n(0.1, n));
        assert!((s - 100_000.0).abs() < 1e-9);
    }
}
