//! Adaptive Lasso on the current regression `I = V Y`.
//!
//! Off-diagonal entries are penalised with weights `1 / (|Y_ols| + eps)`;
//! diagonal entries are left free. The penalty parameter is chosen on a
//! hold-out split and the selected model is refitted on all samples.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use super::layout::ParamLayout;
use super::normal::{normal_equations, NormalEquations};
use super::ols::ols_solve;
use super::regression_data;
use crate::error::{GridError, Result};
use crate::measurement::MeasurementSet;

/// Keeps adaptive weights finite when the pilot estimate is exactly zero.
pub const LASSO_WEIGHT_EPS: f64 = 1e-6;
/// Every fifth sample goes to the validation set.
const HOLDOUT_STRIDE: usize = 5;
/// Penalties whose validation error is within this fraction of the best are
/// considered equivalent; the smallest such penalty wins.
const SELECTION_TOLERANCE: f64 = 0.01;
const ADMM_MAX_ITERS: usize = 20_000;
const POLISH_EVERY: usize = 100;
const POLISH_STEPS: usize = 5;
/// Floor on `l_min / l_max` when choosing the ADMM penalty parameter.
const MIN_EIGEN_RATIO: f64 = 1e-12;
/// Relative tolerance on the optimality conditions.
const KKT_TOL: f64 = 1e-9;
const ADMM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub y_hat: DMatrix<Complex64>,
    pub lambda: f64,
    /// `(lambda, validation squared error)` for every grid point.
    pub validation: Vec<(f64, f64)>,
}

/// Per-parameter penalty weights; zero for diagonal entries.
fn penalty_weights(pilot: &DMatrix<Complex64>, layout: ParamLayout) -> DVector<f64> {
    let mut w = DVector::zeros(layout.len());
    for e in 0..layout.n_entries() {
        let (h, k) = layout.position(e);
        if h == k {
            continue;
        }
        // a shared symmetric entry enters the matrix twice
        let mult = if layout.is_symmetric() { 2.0 } else { 1.0 };
        let z = pilot[(h, k)];
        w[2 * e] = mult / (z.re.abs() + LASSO_WEIGHT_EPS);
        w[2 * e + 1] = mult / (z.im.abs() + LASSO_WEIGHT_EPS);
    }
    w
}

/// Smallest penalty at which every penalised parameter is zero at the
/// unpenalised optimum's gradient, times the decreasing grid.
pub fn default_lambda_grid(ms: &MeasurementSet) -> Result<Vec<f64>> {
    let (v, i) = regression_data(ms)?;
    let layout = ParamLayout::new(v.ncols(), true);
    let pilot = ols_solve(&v, &i, true)?;
    let w = penalty_weights(&pilot, layout);
    let ne = normal_equations(&v, &i, None, layout);
    let lambda_max = ne
        .b
        .iter()
        .zip(w.iter())
        .filter(|(_, &wj)| wj > 0.0)
        .map(|(bj, wj)| bj.abs() / wj)
        .fold(0.0, f64::max);
    Ok((1..=10).map(|k| lambda_max * 10f64.powf(-(k as f64) / 2.0)).collect())
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Minimiser of `x'Hx/2 - b'x + lambda * sum w_j |x_j|` for one normal
/// system and several penalties.
///
/// ADMM is used with the penalty parameter `sqrt(l_min l_max)` of the
/// eigenvalues of `H`, the optimal choice for the quadratic part; the
/// voltage regression is badly conditioned, so the usual `trace(H)/p`
/// converges far slower. ADMM identifies the support and signs well before
/// it converges tightly, so every `POLISH_EVERY` iterations the stationarity
/// equations are solved exactly on the current support and the result is
/// returned if it satisfies the optimality conditions.
struct PenalisedSolver<'a> {
    ne: &'a NormalEquations,
    w: &'a DVector<f64>,
    rho: f64,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> PenalisedSolver<'a> {
    fn new(ne: &'a NormalEquations, w: &'a DVector<f64>) -> Result<Self> {
        let eig = ne.h.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0) || !hi.is_finite() {
            return Err(GridError::Numerical("regression normal matrix vanished".into()));
        }
        let rho = (lo.max(hi * MIN_EIGEN_RATIO) * hi).sqrt();
        let mut shifted = ne.h.clone();
        for j in 0..shifted.nrows() {
            shifted[(j, j)] += rho;
        }
        let chol = shifted
            .cholesky()
            .ok_or_else(|| GridError::Numerical("ADMM system is not positive definite".into()))?;
        Ok(PenalisedSolver { ne, w, rho, chol })
    }

    fn solve(&self, lambda: f64, warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        let (ne, w, rho) = (self.ne, self.w, self.rho);
        let p = ne.b.len();
        if lambda == 0.0 {
            return ne
                .h
                .clone()
                .cholesky()
                .map(|c| c.solve(&ne.b))
                .ok_or_else(|| GridError::Numerical("regression normal matrix is singular".into()));
        }
        if let Some(x) = warm.and_then(|z| polish(ne, w, lambda, z)) {
            return Ok(x);
        }
        let mut z = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
        let mut u = DVector::zeros(p);
        for it in 1..=ADMM_MAX_ITERS {
            let x = self.chol.solve(&(&ne.b + (&z - &u) * rho));
            let z_old = z.clone();
            z = (&x + &u).zip_map(w, |a, wj| soft_threshold(a, lambda * wj / rho));
            u += &x - &z;
            let primal = (&x - &z).norm();
            let dual = rho * (&z - &z_old).norm();
            let scale = x.norm().max(z.norm()).max(1.0);
            if primal < ADMM_TOL * scale && dual < ADMM_TOL * rho * scale {
                return Ok(z);
            }
            if it % POLISH_EVERY == 0 {
                if let Some(x) = polish(ne, w, lambda, &z) {
                    return Ok(x);
                }
            }
        }
        Ok(z)
    }
}

/// Primal-dual active set steps from the support and signs of `z`: solve
/// the stationarity equations on the guessed support, re-guess from a
/// proximal step at the solution, and stop once the guess is optimal. This
/// converges in a few steps from a good guess but can cycle from a poor one,
/// hence the small step budget.
fn polish(
    ne: &NormalEquations,
    w: &DVector<f64>,
    lambda: f64,
    z: &DVector<f64>,
) -> Option<DVector<f64>> {
    let p = z.len();
    let mut guess: Vec<(usize, f64)> = (0..p)
        .filter(|&j| z[j] != 0.0 || w[j] == 0.0)
        .map(|j| (j, z[j].signum()))
        .collect();
    for _ in 0..POLISH_STEPS {
        let idx: Vec<usize> = guess.iter().map(|(j, _)| *j).collect();
        let h_aa = ne.h.select_rows(&idx).select_columns(&idx);
        let rhs = DVector::from_fn(idx.len(), |a, _| {
            let (j, s) = guess[a];
            ne.b[j] - lambda * w[j] * s
        });
        let sol = h_aa.cholesky()?.solve(&rhs);
        let mut x = DVector::zeros(p);
        for (a, &j) in idx.iter().enumerate() {
            x[j] = sol[a];
        }
        if is_optimal(ne, w, lambda, &x) {
            return Some(x);
        }
        let resid = &ne.b - &ne.h * &x;
        guess = (0..p)
            .filter_map(|j| {
                let hjj = ne.h[(j, j)];
                let u = x[j] + resid[j] / hjj;
                if w[j] == 0.0 {
                    Some((j, 0.0))
                } else if u.abs() > lambda * w[j] / hjj {
                    Some((j, u.signum()))
                } else {
                    None
                }
            })
            .collect();
    }
    None
}

/// Whether `x` satisfies the optimality conditions up to `KKT_TOL` relative
/// to the size of `b`.
fn is_optimal(ne: &NormalEquations, w: &DVector<f64>, lambda: f64, x: &DVector<f64>) -> bool {
    let resid = &ne.b - &ne.h * x;
    let scale = ne.b.amax().max(f64::MIN_POSITIVE);
    (0..x.len()).all(|j| {
        let bound = lambda * w[j];
        if x[j] == 0.0 {
            resid[j].abs() <= bound + KKT_TOL * scale
        } else {
            (resid[j] - bound * x[j].signum()).abs() <= KKT_TOL * scale
        }
    })
}

fn select_rows(m: &DMatrix<Complex64>, rows: &[usize]) -> DMatrix<Complex64> {
    m.select_rows(rows)
}

/// Adaptive Lasso with the penalty selected on held-out samples.
pub fn lasso_estimate(ms: &MeasurementSet, lambda_grid: &[f64]) -> Result<LassoFit> {
    if lambda_grid.is_empty() {
        return Err(GridError::Config("lambda grid is empty".into()));
    }
    if lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(GridError::Config("lambda values must be finite and non-negative".into()));
    }
    let (v, i) = regression_data(ms)?;
    let n = v.ncols();
    let layout = ParamLayout::new(n, true);
    let pilot = ols_solve(&v, &i, true)?;
    let w = penalty_weights(&pilot, layout);

    let (train, valid): (Vec<usize>, Vec<usize>) =
        (0..v.nrows()).partition(|t| t % HOLDOUT_STRIDE != HOLDOUT_STRIDE - 1);
    if train.len() < n || valid.is_empty() {
        return Err(GridError::RankDeficient {
            rank: train.len(),
            expected: n,
        });
    }
    let (v_tr, i_tr) = (select_rows(&v, &train), select_rows(&i, &train));
    let (v_va, i_va) = (select_rows(&v, &valid), select_rows(&i, &valid));
    let ne_tr = normal_equations(&v_tr, &i_tr, None, layout);

    let solver = PenalisedSolver::new(&ne_tr, &w)?;
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let mut validation = Vec::with_capacity(grid.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lambda in &grid {
        let x = solver.solve(lambda, warm.as_ref())?;
        let err = (&i_va - &v_va * layout.to_matrix(&x)).norm_squared();
        validation.push((lambda, err));
        warm = Some(x);
    }
    let best = validation.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let lambda = validation
        .iter()
        .filter(|(_, e)| *e <= best * (1.0 + SELECTION_TOLERANCE))
        .map(|(l, _)| *l)
        .fold(f64::INFINITY, f64::min);

    let ne = normal_equations(&v, &i, None, layout);
    let x = PenalisedSolver::new(&ne, &w)?.solve(lambda, warm.as_ref())?;
    Ok(LassoFit {
        y_hat: layout.to_matrix(&x),
        lambda,
        validation,
    })
}
