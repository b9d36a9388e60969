//! Maximum-likelihood estimation with errors in both voltages and currents.
//!
//! The objective
//!
//! ```text
//! F(Y, dV) = sum_t ||dV_t||^2_{Wv} + ||I_t - (V_t - dV_t) Y||^2_{Wi}
//! ```
//!
//! is minimised over `Y` and the voltage corrections `dV`. For fixed `Y`
//! every sample decouples into a small generalised least-squares problem
//! with the closed form
//!
//! ```text
//! r_t = I_t - V_t Y,   M_t = K Sv_t K' + Si_t,   dV_t = -Sv_t K' M_t^-1 r_t,
//! ```
//!
//! where `K` is the real form of `v -> v Y`. Eliminating `dV` this way leaves
//! the profile objective `f(Y) = sum_t r_t' M_t^-1 r_t`, which is minimised by
//! Gauss-Newton steps on the joint problem (variable projection). The normal
//! operator is applied matrix-free and inverted by preconditioned conjugate
//! gradients; a backtracking line search on `f` makes every step a descent
//! step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;

use super::layout::ParamLayout;
use super::ols::ols_solve;
use super::{inverse_all, regression_data, EstimationResult, EstimatorConfig, COV_REGULARIZATION};
use crate::error::{GridError, Result};
use crate::measurement::{Cov2, MeasurementSet, PhaseMode};

/// Initial trust radius relative to the starting point.
const INITIAL_RADIUS: f64 = 0.1;
/// Steps must achieve this fraction of the predicted decrease.
const ACCEPT_RATIO: f64 = 1e-4;
const CG_TOL: f64 = 1e-6;
const CG_MAX_ITERS: usize = 250;

/// Measurements and weights of one estimation problem.
#[derive(Debug, Clone)]
pub struct MleProblem {
    v: DMatrix<Complex64>,
    i: DMatrix<Complex64>,
    cov_v: DMatrix<Cov2>,
    cov_i: DMatrix<Cov2>,
    w_v: DMatrix<Cov2>,
    w_i: DMatrix<Cov2>,
    layout: ParamLayout,
}

/// The voltage corrections minimised out for one `Y`.
struct Projection {
    x: DVector<f64>,
    objective: f64,
    delta_v: DMatrix<Complex64>,
    /// `M_t^-1 r_t`, which is also `Wi dI_t`.
    mu: DMatrix<Complex64>,
    factors: Vec<Factor>,
}

fn to_real(z: &[Complex64]) -> DVector<f64> {
    DVector::from_fn(2 * z.len(), |k, _| if k % 2 == 0 { z[k / 2].re } else { z[k / 2].im })
}

fn to_complex(x: &DVector<f64>) -> impl Iterator<Item = Complex64> + '_ {
    (0..x.len() / 2).map(move |k| Complex64::new(x[2 * k], x[2 * k + 1]))
}

/// Real `2n x 2n` form of the row-vector map `v -> v Y`.
fn right_multiplier(y: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = y.nrows();
    let mut k_mat = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        for h in 0..n {
            let z = y[(h, k)];
            k_mat[(2 * k, 2 * h)] = z.re;
            k_mat[(2 * k, 2 * h + 1)] = -z.im;
            k_mat[(2 * k + 1, 2 * h)] = z.im;
            k_mat[(2 * k + 1, 2 * h + 1)] = z.re;
        }
    }
    k_mat
}

/// `K diag(S) K' + diag(T)` for per-bus 2x2 blocks `S` and `T`.
#[cfg(test)]
fn innovation_covariance(k_mat: &DMatrix<f64>, s: &[Cov2], t: &[Cov2]) -> DMatrix<f64> {
    let mut ks = k_mat.clone();
    for (h, c) in s.iter().enumerate() {
        for row in 0..ks.nrows() {
            let (a, b) = (k_mat[(row, 2 * h)], k_mat[(row, 2 * h + 1)]);
            ks[(row, 2 * h)] = a * c.xx + b * c.xy;
            ks[(row, 2 * h + 1)] = a * c.xy + b * c.yy;
        }
    }
    let mut m = &ks * k_mat.transpose();
    for (k, c) in t.iter().enumerate() {
        m[(2 * k, 2 * k)] += c.xx;
        m[(2 * k, 2 * k + 1)] += c.xy;
        m[(2 * k + 1, 2 * k)] += c.xy;
        m[(2 * k + 1, 2 * k + 1)] += c.yy;
    }
    m
}

/// Lower Cholesky factor `[l11, l21, l22]` of a positive definite 2x2 block.
fn cov_root(c: &Cov2) -> [f64; 3] {
    let l11 = c.xx.sqrt();
    let l21 = c.xy / l11;
    [l11, l21, (c.yy - l21 * l21).max(0.0).sqrt()]
}

/// Upper triangular `R` with `R'R = K diag(S) K' + diag(T)`, from a QR
/// factorisation of the stacked square roots. Forming the sum and factoring
/// it directly loses definiteness when `S` dwarfs `T`.
fn innovation_factor(k_mat: &DMatrix<f64>, s: &[Cov2], t: &[Cov2]) -> Result<Factor> {
    let m = k_mat.nrows();
    let mut stacked = DMatrix::zeros(2 * m, m);
    // rows 0..m: (K L_S)'
    for (h, c) in s.iter().enumerate() {
        let [l11, l21, l22] = cov_root(c);
        for row in 0..m {
            let (a, b) = (k_mat[(row, 2 * h)], k_mat[(row, 2 * h + 1)]);
            stacked[(2 * h, row)] = a * l11 + b * l21;
            stacked[(2 * h + 1, row)] = b * l22;
        }
    }
    for (k, c) in t.iter().enumerate() {
        let [l11, l21, l22] = cov_root(c);
        stacked[(m + 2 * k, 2 * k)] = l11;
        stacked[(m + 2 * k, 2 * k + 1)] = l21;
        stacked[(m + 2 * k + 1, 2 * k + 1)] = l22;
    }
    let r = stacked.qr().r();
    if r.diagonal().iter().any(|d| !(d.abs() > 0.0) || !d.is_finite()) {
        return Err(GridError::Numerical(
            "innovation covariance is not positive definite".into(),
        ));
    }
    Ok(Factor(r))
}

/// `R'R` factorisation of a symmetric positive definite matrix.
struct Factor(DMatrix<f64>);

impl Factor {
    fn inverse(&self) -> DMatrix<f64> {
        let dim = self.0.nrows();
        let r_inv = self
            .0
            .solve_upper_triangular(&DMatrix::identity(dim, dim))
            .expect("factor has a nonzero diagonal");
        &r_inv * r_inv.transpose()
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .0
            .tr_solve_upper_triangular(b)
            .expect("factor has a nonzero diagonal");
        self.0
            .solve_upper_triangular(&y)
            .expect("factor has a nonzero diagonal")
    }
}

impl MleProblem {
    pub fn new(ms: &MeasurementSet, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        ms.validate()?;
        if ms.mode != cfg.phase_mode {
            return Err(GridError::Config(format!(
                "estimator configured for {:?} but measurements are {:?}",
                cfg.phase_mode, ms.mode
            )));
        }
        let (v, i) = regression_data(ms)?;
        let mut cov_v = ms.cov_v.clone();
        if ms.mode == PhaseMode::Phaseless && cfg.sigma_delta_inflation != ms.sigma_delta_inflation {
            let s = (cfg.sigma_delta_inflation / ms.sigma_delta_inflation).powi(2);
            cov_v.iter_mut().for_each(|c| c.yy *= s);
        }
        let cov_i = ms
            .cov_i
            .clone()
            .ok_or_else(|| GridError::Config("current covariances are missing".into()))?;
        Self::from_parts(v, i, cov_v, cov_i, cfg.enforce_symmetry)
    }

    /// Builds a problem directly from phasors and covariances.
    pub fn from_parts(
        v: DMatrix<Complex64>,
        i: DMatrix<Complex64>,
        cov_v: DMatrix<Cov2>,
        cov_i: DMatrix<Cov2>,
        enforce_symmetry: bool,
    ) -> Result<Self> {
        let shape = v.shape();
        for s in [i.shape(), cov_v.shape(), cov_i.shape()] {
            if s != shape {
                return Err(GridError::dimension(format!("{shape:?}"), format!("{s:?}")));
            }
        }
        let w_v = inverse_all(&cov_v)?;
        let w_i = inverse_all(&cov_i)?;
        let reg = |c: &Cov2| c.regularized(COV_REGULARIZATION);
        Ok(MleProblem {
            layout: ParamLayout::new(shape.1, enforce_symmetry),
            cov_v: cov_v.map(|c| reg(&c)),
            cov_i: cov_i.map(|c| reg(&c)),
            v,
            i,
            w_v,
            w_i,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    /// Least-squares starting point, projected onto the layout.
    pub fn initial_guess(&self) -> Result<DVector<f64>> {
        let y = ols_solve(&self.v, &self.i, self.layout.is_symmetric())?;
        Ok(self.layout.from_matrix(&y))
    }

    /// Full objective `F(Y, dV)`.
    pub fn objective(&self, x: &DVector<f64>, delta_v: &DMatrix<Complex64>) -> f64 {
        let y = self.layout.to_matrix(x);
        let v_hat = &self.v - delta_v;
        let resid = &self.i - &v_hat * &y;
        let mut total = 0.0;
        for idx in 0..resid.len() {
            let (dv, r) = (delta_v[idx], resid[idx]);
            total += self.w_v[idx].quad(dv.re, dv.im) + self.w_i[idx].quad(r.re, r.im);
        }
        total
    }

    fn project(&self, x: &DVector<f64>) -> Result<Projection> {
        let (n_t, n) = self.v.shape();
        let y = self.layout.to_matrix(x);
        let k_mat = right_multiplier(&y);
        let resid = &self.i - &self.v * &y;
        type Row = (Vec<Complex64>, Vec<Complex64>, f64, Factor);
        let rows: Vec<Result<Row>> = (0..n_t)
            .into_par_iter()
            .map(|t| {
                let sv: Vec<Cov2> = self.cov_v.row(t).iter().copied().collect();
                let si: Vec<Cov2> = self.cov_i.row(t).iter().copied().collect();
                let chol = innovation_factor(&k_mat, &sv, &si).map_err(|_| {
                    GridError::Numerical(format!(
                        "innovation covariance of sample {t} is not positive definite"
                    ))
                })?;
                let r: Vec<Complex64> = resid.row(t).iter().copied().collect();
                let r = to_real(&r);
                let mu = chol.solve(&r);
                // dV_t = -Sv K' mu
                let kt_mu = k_mat.tr_mul(&mu);
                let dv = (0..n)
                    .map(|h| {
                        let c = &sv[h];
                        let (a, b) = (kt_mu[2 * h], kt_mu[2 * h + 1]);
                        -Complex64::new(c.xx * a + c.xy * b, c.xy * a + c.yy * b)
                    })
                    .collect();
                Ok((dv, to_complex(&mu).collect(), r.dot(&mu), chol))
            })
            .collect();
        let mut delta_v = DMatrix::zeros(n_t, n);
        let mut mu = DMatrix::zeros(n_t, n);
        let mut objective = 0.0;
        let mut factors = Vec::with_capacity(n_t);
        for (t, row) in rows.into_iter().enumerate() {
            let (dv, m, obj, chol) = row?;
            for h in 0..n {
                delta_v[(t, h)] = dv[h];
                mu[(t, h)] = m[h];
            }
            objective += obj;
            factors.push(chol);
        }
        Ok(Projection {
            x: x.clone(),
            objective,
            delta_v,
            mu,
            factors,
        })
    }

    /// `D' (V - dV)^H Wi dI`, minus half the gradient of the profile objective.
    fn descent_vector(&self, p: &Projection) -> DVector<f64> {
        let v_hat = &self.v - &p.delta_v;
        self.layout.fold(&v_hat.ad_mul(&p.mu))
    }

    /// Objective with the voltage corrections minimised out.
    pub fn profile_objective(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.project(x)?.objective)
    }

    /// Gradient of [`Self::profile_objective`]. The corrections are optimal,
    /// so only the explicit dependence on `Y` contributes.
    pub fn profile_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.descent_vector(&self.project(x)?) * -2.0)
    }

    /// Gauss-Newton direction at `p`, solving `J'PJ d = -g/2` by conjugate
    /// gradients preconditioned with [`DensePreconditioner`].
    fn gauss_newton_direction(&self, p: &Projection) -> Result<DVector<f64>> {
        let (n_t, n) = self.v.shape();
        let v_hat = &self.v - &p.delta_v;
        let rhs = self.descent_vector(p);

        let apply = |d: &DVector<f64>| -> DVector<f64> {
            let u = &v_hat * self.layout.to_matrix(d);
            let mut w = DMatrix::zeros(n_t, n);
            for (t, chol) in p.factors.iter().enumerate() {
                let row: Vec<Complex64> = u.row(t).iter().copied().collect();
                let s = chol.solve(&to_real(&row));
                for (h, z) in to_complex(&s).enumerate() {
                    w[(t, h)] = z;
                }
            }
            self.layout.fold(&v_hat.ad_mul(&w))
        };

        let mut mean_w = DMatrix::zeros(2 * n, 2 * n);
        for f in &p.factors {
            mean_w += f.inverse();
        }
        mean_w /= n_t as f64;
        let precondition = DensePreconditioner::new(&v_hat, &mean_w, self.layout)?;
        let precondition = |r: &DVector<f64>| precondition.apply(r);

        let mut d = DVector::zeros(rhs.len());
        let mut r = rhs.clone();
        let mut z = precondition(&r);
        let mut dir = z.clone();
        let mut rz = r.dot(&z);
        let target = CG_TOL * rhs.norm();
        for _ in 0..CG_MAX_ITERS {
            if r.norm() <= target {
                break;
            }
            let q = apply(&dir);
            let curvature = dir.dot(&q);
            if !(curvature > 0.0) {
                break;
            }
            let alpha = rz / curvature;
            d.axpy(alpha, &dir, 1.0);
            r.axpy(-alpha, &q, 1.0);
            z = precondition(&r);
            let rz_new = r.dot(&z);
            dir = &z + &dir * (rz_new / rz);
            rz = rz_new;
        }
        if d.iter().all(|v| *v == 0.0) {
            d = precondition(&rhs);
        }
        Ok(d)
    }

    /// Minimises the profile objective from `x0` with a trust region on
    /// the Gauss-Newton step. Full steps can jump from a poor start into a
    /// region where `f` decreases only as `Y` grows without bound; bounding
    /// the step keeps the iterates on the descent path.
    pub fn solve_from(&self, x0: DVector<f64>, max_iters: usize, rel_tol: f64) -> Result<EstimationResult> {
        let mut cur = self.project(&x0)?;
        let mut trace = vec![cur.objective];
        let mut converged = false;
        let mut iterations = 0;
        let mut radius = INITIAL_RADIUS * cur.x.norm().max(f64::MIN_POSITIVE);
        let mut dir: Option<DVector<f64>> = None;
        while iterations < max_iters {
            let d = match dir.take() {
                Some(d) => d,
                None => self.gauss_newton_direction(&cur)?,
            };
            let x_norm = cur.x.norm().max(f64::MIN_POSITIVE);
            if d.norm() / x_norm < rel_tol {
                converged = true;
                break;
            }
            if radius / x_norm < rel_tol {
                break;
            }
            // the model is exact along d up to second order: S d = rhs
            let gain = self.descent_vector(&cur).dot(&d);
            if !(gain > 0.0) {
                break;
            }
            let alpha = (radius / d.norm()).min(1.0);
            let predicted = (2.0 * alpha - alpha * alpha) * gain;
            let trial = self.project(&(&cur.x + &d * alpha))?;
            let actual = cur.objective - trial.objective;
            let ratio = if trial.objective.is_finite() { actual / predicted } else { -1.0 };
            let step = alpha * d.norm();
            if ratio < 0.25 {
                radius = 0.25 * step;
            } else if ratio > 0.75 && alpha < 1.0 {
                radius = 2.0 * radius;
            }
            if !(ratio > ACCEPT_RATIO) {
                dir = Some(d);
                continue;
            }
            iterations += 1;
            cur = trial;
            trace.push(cur.objective);
            // a relative decrease below rel_tol is far inside the statistical resolution of f
            if alpha == 1.0
                && (step / cur.x.norm().max(f64::MIN_POSITIVE) < rel_tol || actual < rel_tol * cur.objective)
            {
                converged = true;
                break;
            }
        }
        let y_hat = self.layout.to_matrix(&cur.x);
        let delta_i_hat = &self.i - (&self.v - &cur.delta_v) * &y_hat;
        Ok(EstimationResult {
            y_hat,
            delta_v_hat: cur.delta_v,
            delta_i_hat,
            neg_log_likelihood_trace: trace,
            converged,
            iterations,
        })
    }
}

/// Gauss-Newton operator with every `M_t^-1` replaced by their mean `W`,
/// assembled densely and factorised. Writing `W` as the widely linear map
/// `u -> u P + conj(u) Q`, the operator is
/// `dY -> D'(G dY P + H conj(dY) Q)` with `G = V^H V` and `H = V^H conj(V)`,
/// which needs only `n x n` products per column. Phaseless data makes `W`
/// far from complex linear, so the `Q` term matters.
struct DensePreconditioner(Cholesky<f64, Dyn>);

impl DensePreconditioner {
    fn new(v_hat: &DMatrix<Complex64>, w: &DMatrix<f64>, layout: ParamLayout) -> Result<Self> {
        let (p, q) = widely_linear(w);
        let g = v_hat.ad_mul(v_hat);
        let h = v_hat.ad_mul(&v_hat.map(|z| z.conj()));
        let dim = layout.len();
        let n = layout.n();
        let columns: Vec<DVector<f64>> = (0..dim)
            .into_par_iter()
            .map(|j| {
                // a unit parameter touches at most two entries, so G D P is a sum of outer products
                let d = layout.to_matrix(&DVector::from_fn(dim, |i, _| if i == j { 1.0 } else { 0.0 }));
                let mut out = DMatrix::zeros(n, n);
                for a in 0..n {
                    for b in 0..n {
                        let z = d[(a, b)];
                        if z != Complex64::new(0.0, 0.0) {
                            out += g.column(a) * (p.row(b) * z) + h.column(a) * (q.row(b) * z.conj());
                        }
                    }
                }
                layout.fold(&out)
            })
            .collect();
        let mut op = DMatrix::from_columns(&columns);
        op = (&op + op.transpose()) * 0.5;
        let scale = op.diagonal().amax();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GridError::Numerical("corrected voltage matrix vanished".into()));
        }
        // rounding can leave an ill-conditioned operator slightly indefinite
        let mut jitter = 0.0;
        loop {
            let mut shifted = op.clone();
            for k in 0..dim {
                shifted[(k, k)] += jitter;
            }
            if let Some(c) = shifted.cholesky() {
                return Ok(DensePreconditioner(c));
            }
            jitter = if jitter == 0.0 { scale * 1e-14 } else { jitter * 100.0 };
            if jitter > scale {
                return Err(GridError::Numerical("Gauss-Newton operator is not definite".into()));
            }
        }
    }

    fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        self.0.solve(r)
    }
}

/// `(P, Q)` with `W to_real(u) = to_real(u P + conj(u) Q)` for row vectors `u`.
fn widely_linear(w: &DMatrix<f64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = w.nrows() / 2;
    let mut p = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    for k in 0..n {
        for h in 0..n {
            let (a, b) = (w[(2 * k, 2 * h)], w[(2 * k, 2 * h + 1)]);
            let (c, d) = (w[(2 * k + 1, 2 * h)], w[(2 * k + 1, 2 * h + 1)]);
            p[(h, k)] = Complex64::new(0.5 * (a + d), 0.5 * (c - b));
            q[(h, k)] = Complex64::new(0.5 * (a - d), 0.5 * (c + b));
        }
    }
    (p, q)
}

/// Maximum-likelihood estimate of the admittance matrix.
pub fn mle_estimate(ms: &MeasurementSet, cfg: &EstimatorConfig) -> Result<EstimationResult> {
    let problem = MleProblem::new(ms, cfg)?;
    let x0 = problem.initial_guess()?;
    problem.solve_from(x0, cfg.max_iters, cfg.rel_tol)
}
