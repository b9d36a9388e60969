//! Real parameter vectors for complex admittance matrices.
//!
//! With symmetry enforced, only the upper triangle is free: each unordered
//! pair `(h, k)`, `h <= k`, owns two consecutive real parameters (real and
//! imaginary part) shared by `Y_hk` and `Y_kh`. This is the duplication map
//! `vec(Y) = D x`. Without symmetry every entry has its own pair.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    n: usize,
    symmetric: bool,
}

impl ParamLayout {
    pub fn new(n: usize, symmetric: bool) -> Self {
        ParamLayout { n, symmetric }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Number of complex entries that are free.
    pub fn n_entries(&self) -> usize {
        if self.symmetric {
            self.n * (self.n + 1) / 2
        } else {
            self.n * self.n
        }
    }

    /// Number of real parameters.
    pub fn len(&self) -> usize {
        2 * self.n_entries()
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Index of the complex entry that `Y[(h, k)]` reads from.
    pub fn entry(&self, h: usize, k: usize) -> usize {
        if self.symmetric {
            let (lo, hi) = if h <= k { (h, k) } else { (k, h) };
            hi * (hi + 1) / 2 + lo
        } else {
            k * self.n + h
        }
    }

    /// Whether entry `e` sits off the diagonal.
    pub fn is_off_diagonal(&self, e: usize) -> bool {
        let (h, k) = self.position(e);
        h != k
    }

    /// A representative `(row, col)` of entry `e`.
    pub fn position(&self, e: usize) -> (usize, usize) {
        if self.symmetric {
            let mut hi = ((((8 * e + 1) as f64).sqrt() - 1.0) / 2.0) as usize;
            while hi * (hi + 1) / 2 > e {
                hi -= 1;
            }
            while (hi + 1) * (hi + 2) / 2 <= e {
                hi += 1;
            }
            (e - hi * (hi + 1) / 2, hi)
        } else {
            (e % self.n, e / self.n)
        }
    }

    pub fn to_matrix(&self, x: &DVector<f64>) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |h, k| {
            let e = self.entry(h, k);
            Complex64::new(x[2 * e], x[2 * e + 1])
        })
    }

    /// Adjoint of [`Self::to_matrix`]: sums the entries that share a parameter.
    pub fn fold(&self, m: &DMatrix<Complex64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for k in 0..self.n {
            for h in 0..self.n {
                let e = self.entry(h, k);
                x[2 * e] += m[(h, k)].re;
                x[2 * e + 1] += m[(h, k)].im;
            }
        }
        x
    }

    /// Projects a matrix onto the layout; symmetric layouts average `Y_hk` and `Y_kh`.
    pub fn from_matrix(&self, y: &DMatrix<Complex64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for k in 0..self.n {
            for h in 0..self.n {
                if self.symmetric && h > k {
                    continue;
                }
                let z = if self.symmetric && h != k {
                    (y[(h, k)] + y[(k, h)]) * 0.5
                } else {
                    y[(h, k)]
                };
                let e = self.entry(h, k);
                x[2 * e] = z.re;
                x[2 * e + 1] = z.im;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_indexing_is_a_bijection_on_the_upper_triangle() {
        let layout = ParamLayout::new(7, true);
        let mut seen = vec![false; layout.n_entries()];
        for k in 0..7 {
            for h in 0..=k {
                let e = layout.entry(h, k);
                assert!(!seen[e]);
                seen[e] = true;
                assert_eq!(layout.entry(k, h), e);
                assert_eq!(layout.position(e), (h, k));
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn round_trip_through_matrix() {
        for symmetric in [true, false] {
            let layout = ParamLayout::new(4, symmetric);
            let x = DVector::from_fn(layout.len(), |i, _| i as f64 * 0.5 - 3.0);
            let y = layout.to_matrix(&x);
            if symmetric {
                assert_eq!(y, y.transpose());
            }
            assert_eq!(layout.from_matrix(&y), x);
        }
    }

    #[test]
    fn fold_is_the_adjoint_of_to_matrix() {
        for symmetric in [true, false] {
            let layout = ParamLayout::new(3, symmetric);
            let x = DVector::from_fn(layout.len(), |i, _| (i as f64 * 0.9).cos());
            let m = DMatrix::from_fn(3, 3, |h, k| Complex64::new(h as f64 - 0.5 * k as f64, (h * k) as f64));
            let lhs: f64 = layout
                .to_matrix(&x)
                .iter()
                .zip(m.iter())
                .map(|(a, b)| a.re * b.re + a.im * b.im)
                .sum();
            assert!((lhs - layout.fold(&m).dot(&x)).abs() < 1e-12);
        }
    }
}
