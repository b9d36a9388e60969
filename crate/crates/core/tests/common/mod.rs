//! Helpers shared by the integration tests: small instances and oracles that
//! do not go through the estimator's own code paths.
#![allow(dead_code)]

use std::path::Path;

use gridid_core::experiment::{measure, simulate_truth_for, ExperimentConfig, GroundTruth};
use gridid_core::measurement::{center, derive_currents, Cov2, MeasurementSet, PhaseMode};
use gridid_core::network::{Branch, Bus, NetworkModel};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn config(json: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(json, Path::new(env!("CARGO_MANIFEST_DIR"))).unwrap()
}

/// Default experiment on the shipped 33-bus feeder.
pub fn ieee33_config(n_samples: usize, seed: u64) -> ExperimentConfig {
    config(&format!(
        r#"{{"network_path": "data/ieee33.json", "n_samples": {n_samples},
            "noise_levels": [0.001], "seed": {seed}}}"#
    ))
}

/// Substation plus one load behind a 0.5 + 1.0j ohm line.
pub fn two_node_network() -> NetworkModel {
    NetworkModel {
        base_power_mva: 10.0,
        base_voltage_kv: 12.66,
        buses: vec![Bus::slack(1), Bus::pq(2, 0.8, 0.4)],
        branches: vec![Branch::new(1, 2, 0.5, 1.0)],
    }
}

pub fn two_node_truth(n_samples: usize, seed: u64) -> (GroundTruth, ExperimentConfig) {
    let cfg = config(&format!(
        r#"{{"network_path": "unused.json", "n_samples": {n_samples},
            "noise_levels": [0.01], "seed": {seed}, "sigma_slack_rel": 0.02}}"#
    ));
    (simulate_truth_for(two_node_network(), &cfg).unwrap(), cfg)
}

/// Centered readings with derived currents, as the estimators consume them.
pub fn prepared(truth: &GroundTruth, level: f64, mode: PhaseMode, cfg: &ExperimentConfig) -> MeasurementSet {
    center(&derive_currents(&measure(&truth.states, level, mode, cfg).unwrap()).unwrap())
}

/// Covariance block with the estimator's documented diagonal regularisation.
fn cov_matrix(c: &Cov2) -> DMatrix<f64> {
    let eps = gridid_core::estimation::COV_REGULARIZATION;
    DMatrix::from_row_slice(2, 2, &[c.xx + eps, c.xy, c.xy, c.yy + eps])
}

/// Real 2n x 2n matrix of `dv -> dv * Y` acting on row vectors, with the
/// interleaved (re, im) ordering per bus.
fn right_multiplication(y: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = y.nrows();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        for h in 0..n {
            // (dv Y)_k = sum_h dv_h Y_hk
            let z = y[(h, k)];
            a[(2 * k, 2 * h)] = z.re;
            a[(2 * k, 2 * h + 1)] = -z.im;
            a[(2 * k + 1, 2 * h)] = z.im;
            a[(2 * k + 1, 2 * h + 1)] = z.re;
        }
    }
    a
}

/// Eq. (10) with the voltage and current corrections minimised out for a
/// fixed `Y`: per sample, `r' (Ci + A Cv A')^{-1} r` with the residual
/// `r = I - V Y`, evaluated with dense real algebra.
pub fn oracle_profile_objective(ms: &MeasurementSet, y: &DMatrix<Complex64>) -> f64 {
    let v = ms.voltage();
    let i = ms.current().unwrap();
    let cov_i = ms.cov_i.as_ref().unwrap();
    let (n_t, n) = v.shape();
    let a = right_multiplication(y);
    let resid = &i - &v * y;
    let mut total = 0.0;
    for t in 0..n_t {
        let mut cv = DMatrix::zeros(2 * n, 2 * n);
        let mut ci = DMatrix::zeros(2 * n, 2 * n);
        let mut r = DVector::zeros(2 * n);
        for h in 0..n {
            cv.view_mut((2 * h, 2 * h), (2, 2)).copy_from(&cov_matrix(&ms.cov_v[(t, h)]));
            ci.view_mut((2 * h, 2 * h), (2, 2)).copy_from(&cov_matrix(&cov_i[(t, h)]));
            r[2 * h] = resid[(t, h)].re;
            r[2 * h + 1] = resid[(t, h)].im;
        }
        let m = ci + &a * cv * a.transpose();
        let chol = m.cholesky().expect("innovation covariance is positive definite");
        total += r.dot(&chol.solve(&r));
    }
    total
}

/// The three distinct entries `Y11, Y12, Y22` of a symmetric 2 x 2 matrix as
/// six real coordinates.
pub fn pack2(y: &DMatrix<Complex64>) -> [f64; 6] {
    [y[(0, 0)].re, y[(0, 0)].im, y[(0, 1)].re, y[(0, 1)].im, y[(1, 1)].re, y[(1, 1)].im]
}

pub fn unpack2(p: &[f64; 6]) -> DMatrix<Complex64> {
    let y11 = Complex64::new(p[0], p[1]);
    let y12 = Complex64::new(p[2], p[3]);
    let y22 = Complex64::new(p[4], p[5]);
    DMatrix::from_row_slice(2, 2, &[y11, y12, y12, y22])
}

/// Exhaustive grid search over the three complex parameters: a 3^6 grid
/// around the incumbent, re-centred on the best point and halved whenever
/// the centre wins, until the half-width falls below `tol`.
pub fn brute_force_minimum(
    f: impl Fn(&DMatrix<Complex64>) -> f64,
    start: [f64; 6],
    half_width: f64,
    tol: f64,
) -> ([f64; 6], f64) {
    const STEPS: [f64; 3] = [-1.0, 0.0, 1.0];
    let mut best = start;
    let mut best_f = f(&unpack2(&best));
    let mut w = half_width;
    while w > tol {
        let centre = best;
        for idx in 0..STEPS.len().pow(6) {
            let mut p = centre;
            let mut rest = idx;
            for c in p.iter_mut() {
                *c += w * STEPS[rest % 3];
                rest /= 3;
            }
            let val = f(&unpack2(&p));
            if val < best_f {
                best_f = val;
                best = p;
            }
        }
        if best == centre {
            w *= 0.5;
        }
    }
    (best, best_f)
}
