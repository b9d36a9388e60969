//! Weighted normal equations of `I = V Y` in the real parameterisation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::layout::ParamLayout;
use crate::measurement::Cov2;

/// `H` and `b` such that `sum_{t,c} ||I_tc - (V Y)_tc||^2_{W_tc} = x'Hx - 2b'x + const`.
pub(crate) struct NormalEquations {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Upper Cholesky factor `L'` of a 2x2 weight, so that `e'We = |L'e|^2`.
fn weight_root(w: &Cov2) -> [f64; 3] {
    let l11 = w.xx.sqrt();
    let l21 = if l11 > 0.0 { w.xy / l11 } else { 0.0 };
    let l22 = (w.yy - l21 * l21).max(0.0).sqrt();
    [l11, l21, l22]
}

/// Whitened design (2N x 2n) and response (2N) for one current column.
fn whitened_column(
    v: &DMatrix<Complex64>,
    i_col: impl Iterator<Item = Complex64>,
    weights: Option<&DMatrix<Cov2>>,
    c: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n_t, n) = v.shape();
    let mut z = DMatrix::zeros(2 * n_t, 2 * n);
    let mut zr = DVector::zeros(2 * n_t);
    for (t, cur) in i_col.enumerate() {
        let [l11, l21, l22] = weights.map_or([1.0, 0.0, 1.0], |w| weight_root(&w[(t, c)]));
        for h in 0..n {
            let (a, d) = (v[(t, h)].re, v[(t, h)].im);
            // rows of the real embedding: [a, -d] and [d, a]
            z[(2 * t, 2 * h)] = l11 * a + l21 * d;
            z[(2 * t, 2 * h + 1)] = -l11 * d + l21 * a;
            z[(2 * t + 1, 2 * h)] = l22 * d;
            z[(2 * t + 1, 2 * h + 1)] = l22 * a;
        }
        zr[2 * t] = l11 * cur.re + l21 * cur.im;
        zr[2 * t + 1] = l22 * cur.im;
    }
    (z, zr)
}

/// Assembles the normal equations. `weights` are inverse covariances of the
/// current residuals; `None` means unit weights.
pub(crate) fn normal_equations(
    v: &DMatrix<Complex64>,
    i: &DMatrix<Complex64>,
    weights: Option<&DMatrix<Cov2>>,
    layout: ParamLayout,
) -> NormalEquations {
    let n = v.ncols();
    let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = match weights {
        Some(_) => (0..n)
            .into_par_iter()
            .map(|c| {
                let (z, zr) = whitened_column(v, i.column(c).iter().copied(), weights, c);
                (z.tr_mul(&z), z.tr_mul(&zr))
            })
            .collect(),
        None => {
            // unit weights: the design is shared by every column
            let zeros = std::iter::repeat_n(Complex64::new(0.0, 0.0), v.nrows());
            let (z, _) = whitened_column(v, zeros, None, 0);
            let gram = z.tr_mul(&z);
            (0..n)
                .into_par_iter()
                .map(|c| {
                    let mut zr = DVector::zeros(2 * v.nrows());
                    for (t, cur) in i.column(c).iter().enumerate() {
                        zr[2 * t] = cur.re;
                        zr[2 * t + 1] = cur.im;
                    }
                    (gram.clone(), z.tr_mul(&zr))
                })
                .collect()
        }
    };

    let mut h_mat = DMatrix::zeros(layout.len(), layout.len());
    let mut b = DVector::zeros(layout.len());
    for (c, (s, r)) in blocks.iter().enumerate() {
        for hr in 0..n {
            let er = layout.entry(hr, c);
            b[2 * er] += r[2 * hr];
            b[2 * er + 1] += r[2 * hr + 1];
            for hc in 0..n {
                let ec = layout.entry(hc, c);
                for a in 0..2 {
                    for d in 0..2 {
                        h_mat[(2 * er + a, 2 * ec + d)] += s[(2 * hr + a, 2 * hc + d)];
                    }
                }
            }
        }
    }
    NormalEquations { h: h_mat, b }
}
