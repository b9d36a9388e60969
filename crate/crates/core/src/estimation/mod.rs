//! Admittance matrix estimators.
//!
//! * [`ols_estimate`]: ordinary least squares of currents on voltages,
//!   treating voltages as exact. Used to initialise the other estimators.
//! * [`mle_estimate`]: maximum likelihood under Gaussian noise on both
//!   voltages and currents, i.e. weighted total least squares. Works with
//!   measured phasors or, for smart meters, with voltage magnitudes standing
//!   in for the phasors.
//! * [`lasso_estimate`]: adaptive-Lasso baseline.

mod layout;
mod lasso;
mod mle;
mod normal;
mod ols;

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::measurement::{Cov2, MeasurementSet, PhaseMode, DEFAULT_SIGMA_DELTA_INFLATION};

pub use lasso::{default_lambda_grid, lasso_estimate, LassoFit, LASSO_WEIGHT_EPS};
pub use layout::ParamLayout;
pub use mle::{mle_estimate, MleProblem};
pub use ols::ols_estimate;

/// Added to covariance diagonals before inversion.
pub const COV_REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub max_iters: usize,
    /// Stop when `||dY||_F / ||Y||_F` falls below this.
    pub rel_tol: f64,
    pub enforce_symmetry: bool,
    pub phase_mode: PhaseMode,
    pub sigma_delta_inflation: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            max_iters: 100,
            rel_tol: 1e-8,
            enforce_symmetry: true,
            phase_mode: PhaseMode::WithPhase,
            sigma_delta_inflation: DEFAULT_SIGMA_DELTA_INFLATION,
        }
    }
}

impl EstimatorConfig {
    pub fn for_mode(phase_mode: PhaseMode) -> Self {
        EstimatorConfig {
            phase_mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(GridError::Config("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(GridError::Config("rel_tol must be positive".into()));
        }
        if !(self.sigma_delta_inflation >= 1.0) {
            return Err(GridError::Config(
                "sigma_delta_inflation must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub y_hat: DMatrix<Complex64>,
    pub delta_v_hat: DMatrix<Complex64>,
    pub delta_i_hat: DMatrix<Complex64>,
    /// Objective after initialisation and after every iteration.
    pub neg_log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) fn regularized_inverse(c: &Cov2) -> Result<Cov2> {
    c.regularized(COV_REGULARIZATION).inverse().ok_or_else(|| {
        GridError::Numerical(format!("covariance {c:?} is singular after regularisation"))
    })
}

pub(crate) fn inverse_all(covs: &DMatrix<Cov2>) -> Result<DMatrix<Cov2>> {
    let inv: Result<Vec<Cov2>> = covs.iter().map(regularized_inverse).collect();
    Ok(DMatrix::from_vec(covs.nrows(), covs.ncols(), inv?))
}

/// Sum of squared Mahalanobis norms of the voltage and current corrections.
pub fn neg_log_likelihood(
    delta_v: &DMatrix<Complex64>,
    delta_i: &DMatrix<Complex64>,
    cov_v: &DMatrix<Cov2>,
    cov_i: &DMatrix<Cov2>,
) -> Result<f64> {
    let shape = delta_v.shape();
    for s in [delta_i.shape(), cov_v.shape(), cov_i.shape()] {
        if s != shape {
            return Err(GridError::dimension(format!("{shape:?}"), format!("{s:?}")));
        }
    }
    let mut total = 0.0;
    for (idx, (dv, di)) in delta_v.iter().zip(delta_i.iter()).enumerate() {
        let wv = regularized_inverse(&cov_v[idx])?;
        let wi = regularized_inverse(&cov_i[idx])?;
        total += wv.quad(dv.re, dv.im) + wi.quad(di.re, di.im);
    }
    Ok(total)
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRecord {
    h: usize,
    k: usize,
    g_pu: f64,
    b_pu: f64,
}

/// Writes `h,k,g_pu,b_pu` for every `h <= k` (1-based bus ids). Only the
/// upper triangle is stored, so a non-symmetric matrix loses its lower half.
pub fn write_matrix_csv(path: impl AsRef<Path>, y: &DMatrix<Complex64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for h in 0..y.nrows() {
        for k in h..y.ncols() {
            let z = y[(h, k)];
            w.serialize(MatrixRecord { h: h + 1, k: k + 1, g_pu: z.re, b_pu: z.im })
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| GridError::io(path, e))
}

/// Reads a matrix written by [`write_matrix_csv`]; missing entries are zero.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<Complex64>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut records = Vec::new();
    for (i, row) in r.deserialize::<MatrixRecord>().enumerate() {
        let rec = row.map_err(|e| GridError::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if rec.h == 0 || rec.k < rec.h {
            return Err(GridError::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("expected 1 <= h <= k, got h={} k={}", rec.h, rec.k),
            });
        }
        records.push(rec);
    }
    let n = records.iter().map(|r| r.k).max().unwrap_or(0);
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for rec in records {
        let z = Complex64::new(rec.g_pu, rec.b_pu);
        y[(rec.h - 1, rec.k - 1)] = z;
        y[(rec.k - 1, rec.h - 1)] = z;
    }
    Ok(y)
}

fn csv_error(path: &Path, e: csv::Error) -> GridError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GridError::io(path, io),
        other => GridError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Current phasors of a centred set, or an error naming what is missing.
pub(crate) fn regression_data(
    ms: &MeasurementSet,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    if !ms.centered {
        return Err(GridError::Config(
            "estimators expect centred measurements".into(),
        ));
    }
    let i = ms.current().ok_or_else(|| {
        GridError::Config("currents have not been derived from the powers".into())
    })?;
    let n = ms.n_buses();
    if ms.n_samples() < n {
        return Err(GridError::RankDeficient {
            rank: ms.n_samples(),
            expected: n,
        });
    }
    Ok((ms.voltage(), i))
}
