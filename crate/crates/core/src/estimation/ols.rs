use nalgebra::DMatrix;
use num_complex::Complex64;

use super::layout::ParamLayout;
use super::normal::normal_equations;
use super::regression_data;
use crate::error::{GridError, Result};
use crate::measurement::MeasurementSet;

/// Least-squares solution of `I = V Y`. Rank deficiency of `V` below
/// `s_max * max(N, n) * eps` is reported rather than silently regularised.
/// With `enforce_symmetry` the residual is minimised over symmetric `Y`
/// (upper-triangle parameters), otherwise through the SVD of `V`.
pub(crate) fn ols_solve(
    v: &DMatrix<Complex64>,
    i: &DMatrix<Complex64>,
    enforce_symmetry: bool,
) -> Result<DMatrix<Complex64>> {
    let (n_t, n) = v.shape();
    let svd = v.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = s_max * n_t.max(n) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < n || !s_max.is_finite() {
        return Err(GridError::RankDeficient { rank, expected: n });
    }
    if enforce_symmetry {
        let layout = ParamLayout::new(n, true);
        let ne = normal_equations(v, i, None, layout);
        let x = ne
            .h
            .cholesky()
            .map(|c| c.solve(&ne.b))
            .ok_or_else(|| GridError::Numerical("regression normal matrix is singular".into()))?;
        return Ok(layout.to_matrix(&x));
    }
    svd.solve(i, tol)
        .map_err(|e| GridError::Numerical(e.to_string()))
}

/// Ordinary least squares: voltages are taken as exact.
pub fn ols_estimate(ms: &MeasurementSet, enforce_symmetry: bool) -> Result<DMatrix<Complex64>> {
    let (v, i) = regression_data(ms)?;
    ols_solve(&v, &i, enforce_symmetry)
}
