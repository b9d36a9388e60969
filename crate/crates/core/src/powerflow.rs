//! AC power flow and the three nodal power models.
//!
//! [`solve_powerflow`] produces exact steady states. The remaining functions
//! evaluate nodal powers for a given state: exactly, with the small-angle
//! linearisation around equal angles, and with the bilinear form implied by
//! the phase-less estimation constraint. [`constraint_difference`] is the
//! closed-form gap between the last two.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{GridError, Result};
use crate::network::AdmittanceMatrix;

pub const NR_TOLERANCE: f64 = 1e-10;
pub const NR_MAX_ITERATIONS: usize = 50;

/// Voltage magnitudes (pu) and angles (rad) at every bus.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageState {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl VoltageState {
    pub fn flat(n: usize) -> Self {
        VoltageState {
            v: vec![1.0; n],
            theta: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn phasors(&self) -> DVector<Complex64> {
        DVector::from_iterator(
            self.v.len(),
            self.v
                .iter()
                .zip(&self.theta)
                .map(|(&v, &t)| Complex64::from_polar(v, t)),
        )
    }
}

/// Nodal injections in per-unit; loads are negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injections {
    pub fn zeros(n: usize) -> Self {
        Injections {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

fn check_dims(y: &AdmittanceMatrix, n: usize) -> Result<()> {
    if y.dim() != n || y.b.nrows() != n || y.g.ncols() != n {
        return Err(GridError::dimension(
            format!("{n}x{n} admittance"),
            format!("{}x{}", y.g.nrows(), y.g.ncols()),
        ));
    }
    Ok(())
}

/// Newton-Raphson in polar coordinates from a flat start.
///
/// Every bus except `slack` is a PQ bus; the slack holds `slack_v` at angle 0.
pub fn solve_powerflow(
    y: &AdmittanceMatrix,
    inj: &Injections,
    slack: usize,
    slack_v: f64,
) -> Result<VoltageState> {
    let n = inj.len();
    check_dims(y, n)?;
    if inj.q.len() != n || slack >= n {
        return Err(GridError::dimension(n, inj.q.len()));
    }
    let ybus = y.to_complex();
    let pq: Vec<usize> = (0..n).filter(|&h| h != slack).collect();
    let m = pq.len();

    let mut state = VoltageState::flat(n);
    state.v[slack] = slack_v;
    let mut residual = f64::INFINITY;

    for iteration in 0..=NR_MAX_ITERATIONS {
        let v = state.phasors();
        let current = &ybus * &v;
        let mut mismatch = DVector::zeros(2 * m);
        for (row, &h) in pq.iter().enumerate() {
            let s = v[h] * current[h].conj();
            mismatch[row] = s.re - inj.p[h];
            mismatch[m + row] = s.im - inj.q[h];
        }
        residual = mismatch.amax();
        if !residual.is_finite() {
            break;
        }
        if residual < NR_TOLERANCE {
            return Ok(state);
        }
        if iteration == NR_MAX_ITERATIONS {
            break;
        }

        // dS/dtheta = j diag(V) conj(diag(I) - Y diag(V))
        // dS/d|V|   = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let unit: DVector<Complex64> = v.map(|z| z / z.norm());
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &h) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let diag = if h == k { current[h] } else { Complex64::new(0.0, 0.0) };
                let ds_dth = Complex64::i() * v[h] * (diag - ybus[(h, k)] * v[k]).conj();
                let mut ds_dv = v[h] * (ybus[(h, k)] * unit[k]).conj();
                if h == k {
                    ds_dv += current[h].conj() * unit[h];
                }
                jac[(r, c)] = ds_dth.re;
                jac[(r, m + c)] = ds_dv.re;
                jac[(m + r, c)] = ds_dth.im;
                jac[(m + r, m + c)] = ds_dv.im;
            }
        }
        let step = jac.lu().solve(&(-mismatch)).ok_or_else(|| {
            GridError::Numerical("singular power flow Jacobian".into())
        })?;
        for (r, &h) in pq.iter().enumerate() {
            state.theta[h] += step[r];
            state.v[h] += step[m + r];
        }
    }
    Err(GridError::Divergence {
        iterations: NR_MAX_ITERATIONS,
        residual,
    })
}

/// `p + jq = diag(V) conj(Y V)`.
pub fn exact_powers(y: &AdmittanceMatrix, state: &VoltageState) -> Result<Injections> {
    let n = state.len();
    check_dims(y, n)?;
    let v = state.phasors();
    let current = y.to_complex() * &v;
    let (p, q) = (0..n)
        .map(|h| {
            let s = v[h] * current[h].conj();
            (s.re, s.im)
        })
        .unzip();
    Ok(Injections { p, q })
}

/// `(v_h * sum_k v_k G_hk, -v_h * sum_k v_k B_hk)`, shared by both linear models.
fn magnitude_terms(y: &AdmittanceMatrix, s: &VoltageState, h: usize) -> (f64, f64) {
    let n = s.len();
    let (mut gp, mut bp) = (0.0, 0.0);
    for k in 0..n {
        gp += s.v[k] * y.g[(h, k)];
        bp += s.v[k] * y.b[(h, k)];
    }
    (s.v[h] * gp, -s.v[h] * bp)
}

/// Small-angle linearisation of the power flow around equal angles.
pub fn linearized_powers(y: &AdmittanceMatrix, state: &VoltageState) -> Result<Injections> {
    let n = state.len();
    check_dims(y, n)?;
    let mut out = Injections::zeros(n);
    for h in 0..n {
        let (p0, q0) = magnitude_terms(y, state, h);
        let (mut pa, mut qa) = (0.0, 0.0);
        for k in (0..n).filter(|&k| k != h) {
            let dth = state.theta[h] - state.theta[k];
            pa += state.v[k] * y.b[(h, k)] * dth;
            qa += state.v[k] * y.g[(h, k)] * dth;
        }
        out.p[h] = p0 + state.v[h] * pa;
        out.q[h] = q0 + state.v[h] * qa;
    }
    Ok(out)
}

/// Powers implied by the phase-less estimation constraint, where the
/// angle enters through `v_h theta_h - v_k theta_k`.
pub fn adapted_constraint_powers(
    y: &AdmittanceMatrix,
    state: &VoltageState,
) -> Result<Injections> {
    let n = state.len();
    check_dims(y, n)?;
    let mut out = Injections::zeros(n);
    for h in 0..n {
        let (p0, q0) = magnitude_terms(y, state, h);
        let (mut pa, mut qa) = (0.0, 0.0);
        for k in (0..n).filter(|&k| k != h) {
            let d = state.v[h] * state.theta[h] - state.v[k] * state.theta[k];
            pa += y.b[(h, k)] * d;
            qa += y.g[(h, k)] * d;
        }
        out.p[h] = p0 + state.v[h] * pa;
        out.q[h] = q0 + state.v[h] * qa;
    }
    Ok(out)
}

/// Magnitudes `|v_h theta_h sum_{k != h} B_hk (v_h - v_k)|` and the same with `G`.
pub fn constraint_difference(
    y: &AdmittanceMatrix,
    state: &VoltageState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = state.len();
    check_dims(y, n)?;
    let mut dp = vec![0.0; n];
    let mut dq = vec![0.0; n];
    for h in 0..n {
        let (mut sb, mut sg) = (0.0, 0.0);
        for k in (0..n).filter(|&k| k != h) {
            let dv = state.v[h] - state.v[k];
            sb += y.b[(h, k)] * dv;
            sg += y.g[(h, k)] * dv;
        }
        let scale = state.v[h] * state.theta[h];
        dp[h] = (scale * sb).abs();
        dq[h] = (scale * sg).abs();
    }
    Ok((dp, dq))
}
