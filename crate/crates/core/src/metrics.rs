//! Error metrics and diagnostics.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{GridError, Result};

pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 1e-3;

fn same_shape<T>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(GridError::dimension(
            format!("{:?}", b.shape()),
            format!("{:?}", a.shape()),
        ));
    }
    Ok(())
}

/// `||x_exact - x||_F / ||x_exact||_F`.
pub fn rrmse<T>(x: &DMatrix<T>, x_exact: &DMatrix<T>) -> Result<f64>
where
    T: ComplexField<RealField = f64>,
{
    same_shape(x, x_exact)?;
    let denom = x_exact.norm();
    if !(denom > 0.0) {
        return Err(GridError::UndefinedMetric(
            "reference matrix has zero Frobenius norm".into(),
        ));
    }
    Ok((x_exact - x).norm() / denom)
}

/// Mean absolute deviation over all entries.
pub fn mad<T>(x: &DMatrix<T>, x_exact: &DMatrix<T>) -> Result<f64>
where
    T: ComplexField<RealField = f64>,
{
    same_shape(x, x_exact)?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = x
        .iter()
        .zip(x_exact.iter())
        .map(|(a, b)| (a.clone() - b.clone()).modulus())
        .sum();
    Ok(total / x.len() as f64)
}

/// `A = D Y D*` with `D = diag(exp(j alpha))`: what a phase-blind
/// regression actually identifies when bus voltages sit at angles `alpha`.
pub fn rotated_admittance(y: &DMatrix<Complex64>, alpha: &[f64]) -> Result<DMatrix<Complex64>> {
    if y.nrows() != alpha.len() || y.ncols() != alpha.len() {
        return Err(GridError::dimension(
            format!("{}x{}", alpha.len(), alpha.len()),
            format!("{}x{}", y.nrows(), y.ncols()),
        ));
    }
    let d: Vec<Complex64> = alpha.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
    Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |h, k| {
        d[h] * y[(h, k)] * d[k].conj()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SparsityReport {
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Compares off-diagonal support: an estimated entry counts as present when
/// its modulus exceeds `threshold`, a true entry when it is nonzero.
pub fn sparsity_report(
    y_hat: &DMatrix<Complex64>,
    y_true: &DMatrix<Complex64>,
    threshold: f64,
) -> Result<SparsityReport> {
    same_shape(y_hat, y_true)?;
    if !(threshold > 0.0) {
        return Err(GridError::Config("sparsity threshold must be positive".into()));
    }
    let n = y_hat.nrows();
    let mut report = SparsityReport {
        false_positives: 0,
        false_negatives: 0,
    };
    for h in 0..n {
        for k in (0..n).filter(|&k| k != h) {
            let present = y_hat[(h, k)].norm() > threshold;
            let truly = y_true[(h, k)] != Complex64::new(0.0, 0.0);
            match (present, truly) {
                (true, false) => report.false_positives += 1,
                (false, true) => report.false_negatives += 1,
                _ => {}
            }
        }
    }
    Ok(report)
}

/// One experiment's metrics. Serialized as one CSV row with the column order
/// of [`MetricReport::CSV_HEADER`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub experiment: String,
    pub noise_level: f64,
    pub method: String,
    pub rrmse_y: f64,
    pub rrmse_p_lin: f64,
    pub rrmse_q_lin: f64,
    pub rrmse_p_adapted: f64,
    pub rrmse_q_adapted: f64,
    pub mad_p_mw: f64,
    pub mad_q_mvar: f64,
    pub rrmse_i_re: f64,
    pub rrmse_i_im: f64,
    pub sparsity_false_positives: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "experiment,noise_level,method,rrmse_y,rrmse_p_lin,rrmse_q_lin,rrmse_p_adapted,rrmse_q_adapted,mad_p_mw,mad_q_mvar,rrmse_i_re,rrmse_i_im,sparsity_false_positives";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.noise_level,
            self.method,
            self.rrmse_y,
            self.rrmse_p_lin,
            self.rrmse_q_lin,
            self.rrmse_p_adapted,
            self.rrmse_q_adapted,
            self.mad_p_mw,
            self.mad_q_mvar,
            self.rrmse_i_re,
            self.rrmse_i_im,
            self.sparsity_false_positives
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rrmse_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(rrmse(&eye, &eye).unwrap(), 0.0);
        let half = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((rrmse(&half, &eye).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(rrmse(&DMatrix::zeros(2, 2), &eye).unwrap(), 1.0);
        assert!(matches!(
            rrmse(&eye, &DMatrix::zeros(2, 2)),
            Err(GridError::UndefinedMetric(_))
        ));
        assert!(rrmse(&eye, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn mad_examples() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert_eq!(mad(&a, &a).unwrap(), 0.0);
        assert_eq!(mad(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn rotation_examples() {
        let y = DMatrix::from_fn(3, 3, |h, k| Complex64::new(h as f64 - k as f64, (h * k) as f64 + 1.0));
        assert_eq!(rotated_admittance(&y, &[0.0; 3]).unwrap(), y);
        let a = rotated_admittance(&y, &[0.4; 3]).unwrap();
        assert!((a - &y).camax() < 1e-14);
    }

    #[test]
    fn dense_estimate_against_radial_truth() {
        let n = 33;
        let mut truth = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for h in 0..n - 1 {
            truth[(h, h + 1)] = Complex64::new(-1.0, 1.0);
            truth[(h + 1, h)] = Complex64::new(-1.0, 1.0);
        }
        let dense = DMatrix::from_element(n, n, Complex64::new(0.5, 0.5));
        let r = sparsity_report(&dense, &truth, 1e-3).unwrap();
        assert_eq!(r.false_positives, 33 * 32 - 64);
        assert_eq!(r.false_negatives, 0);
        assert_eq!(
            sparsity_report(&truth, &truth, 1e-3).unwrap(),
            SparsityReport { false_positives: 0, false_negatives: 0 }
        );
    }
}
