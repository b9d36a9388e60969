//! Synthetic measurement campaigns.
//!
//! Ground truth comes from randomised load profiles solved with the exact
//! power flow. Meters perturb voltage magnitude, angle (PMUs only) and
//! powers with independent Gaussian noise that is constant in polar
//! coordinates; the corresponding cartesian covariances are carried along
//! with every reading so the estimator can weight it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::network::{build_admittance, NetworkModel};
use crate::powerflow::{exact_powers, solve_powerflow, Injections, VoltageState};
use crate::rng::{stream, Purpose};

/// Multiplier applied to the nominal angle deviation when phases are not measured.
pub const DEFAULT_SIGMA_DELTA_INFLATION: f64 = 100.0;

/// Relative noise levels of a meter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_v_rel: f64,
    /// Angle standard deviation in radians.
    pub sigma_theta: f64,
    pub sigma_p_rel: f64,
    pub sigma_q_rel: f64,
}

impl NoiseSpec {
    pub const ZERO: NoiseSpec = NoiseSpec {
        sigma_v_rel: 0.0,
        sigma_theta: 0.0,
        sigma_p_rel: 0.0,
        sigma_q_rel: 0.0,
    };

    /// A noise level `x` puts `x` on P and Q and `x / 100` on the voltage
    /// magnitude. A PMU angle channel gets the same `x / 100` in radians,
    /// i.e. the phasor error is isotropic.
    pub fn from_level(level: f64) -> Self {
        NoiseSpec {
            sigma_v_rel: level / 100.0,
            sigma_theta: level / 100.0,
            sigma_p_rel: level,
            sigma_q_rel: level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_v_rel,
            self.sigma_theta,
            self.sigma_p_rel,
            self.sigma_q_rel,
        ];
        if all.iter().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(GridError::Config(format!(
                "noise standard deviations must be finite and non-negative: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    WithPhase,
    Phaseless,
}

/// Symmetric 2x2 covariance of the (real, imaginary) parts of a phasor error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cov2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Cov2 {
    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Cov2 { xx, yy, xy }
    }

    pub fn identity() -> Self {
        Cov2::new(1.0, 1.0, 0.0)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_psd(&self) -> bool {
        let tol = 1e-12 * (self.xx.abs() + self.yy.abs());
        self.xx >= 0.0 && self.yy >= 0.0 && self.det() >= -tol * tol.max(f64::MIN_POSITIVE)
    }

    /// Adds `eps` to both diagonal entries.
    pub fn regularized(&self, eps: f64) -> Self {
        Cov2::new(self.xx + eps, self.yy + eps, self.xy)
    }

    pub fn inverse(&self) -> Option<Cov2> {
        let det = self.det();
        if !(det > 0.0) || !det.is_finite() {
            return None;
        }
        Some(Cov2::new(self.yy / det, self.xx / det, -self.xy / det))
    }

    /// `[x, y] C [x, y]^T`.
    pub fn quad(&self, x: f64, y: f64) -> f64 {
        self.xx * x * x + 2.0 * self.xy * x * y + self.yy * y * y
    }

    pub fn scaled(&self, s: f64) -> Self {
        Cov2::new(self.xx * s, self.yy * s, self.xy * s)
    }

    /// Rank-one update with the vector `[x, y]`.
    fn add_outer(&mut self, x: f64, y: f64) {
        self.xx += x * x;
        self.yy += y * y;
        self.xy += x * y;
    }
}

/// Ground-truth operating points.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueStates {
    pub states: Vec<VoltageState>,
    pub injections: Vec<Injections>,
}

impl TrueStates {
    pub fn n_samples(&self) -> usize {
        self.states.len()
    }

    pub fn n_buses(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn voltage_phasors(&self) -> DMatrix<num_complex::Complex64> {
        let (n_t, n) = (self.n_samples(), self.n_buses());
        DMatrix::from_fn(n_t, n, |t, h| {
            num_complex::Complex64::from_polar(self.states[t].v[h], self.states[t].theta[h])
        })
    }

    fn matrix(&self, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_samples(), self.n_buses(), f)
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        self.matrix(|t, h| self.states[t].v[h])
    }

    pub fn theta_matrix(&self) -> DMatrix<f64> {
        self.matrix(|t, h| self.states[t].theta[h])
    }

    pub fn p_matrix(&self) -> DMatrix<f64> {
        self.matrix(|t, h| self.injections[t].p[h])
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        self.matrix(|t, h| self.injections[t].q[h])
    }
}

/// Noisy readings for `N` samples (rows) by `n` buses (columns), with the
/// cartesian phasors the estimator regresses on and their covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub v_mag: DMatrix<f64>,
    pub theta: Option<DMatrix<f64>>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Voltage phasor; the imaginary part is zero without phase measurements.
    pub v_re: DMatrix<f64>,
    pub v_im: DMatrix<f64>,
    pub i_re: Option<DMatrix<f64>>,
    pub i_im: Option<DMatrix<f64>>,
    pub cov_v: DMatrix<Cov2>,
    pub cov_i: Option<DMatrix<Cov2>>,
    pub noise: NoiseSpec,
    pub mode: PhaseMode,
    /// Inflation factor baked into the imaginary voltage variance (phase-less only).
    pub sigma_delta_inflation: f64,
    pub centered: bool,
}

impl MeasurementSet {
    /// Builds a set from raw readings, filling the voltage covariances.
    pub fn assemble(
        v_mag: DMatrix<f64>,
        theta: Option<DMatrix<f64>>,
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        noise: NoiseSpec,
        sigma_delta_inflation: f64,
    ) -> Result<Self> {
        noise.validate()?;
        let shape = v_mag.shape();
        for (name, m) in [("p", &p), ("q", &q)]
            .into_iter()
            .chain(theta.as_ref().map(|t| ("theta", t)))
        {
            if m.shape() != shape {
                return Err(GridError::dimension(
                    format!("{name} of shape {shape:?}"),
                    format!("{:?}", m.shape()),
                ));
            }
        }
        let mode = if theta.is_some() {
            PhaseMode::WithPhase
        } else {
            PhaseMode::Phaseless
        };
        let (rows, cols) = shape;
        let mut v_re = DMatrix::zeros(rows, cols);
        let mut v_im = DMatrix::zeros(rows, cols);
        let mut cov_v = DMatrix::from_element(rows, cols, Cov2::default());
        for t in 0..rows {
            for h in 0..cols {
                let v = v_mag[(t, h)];
                let var_eps = (noise.sigma_v_rel * v).powi(2);
                cov_v[(t, h)] = match &theta {
                    Some(th) => {
                        let a = th[(t, h)];
                        v_re[(t, h)] = v * a.cos();
                        v_im[(t, h)] = v * a.sin();
                        polar_covariance_to_cartesian(v, a, var_eps, noise.sigma_theta.powi(2))
                    }
                    None => {
                        v_re[(t, h)] = v;
                        phaseless_voltage_covariance(
                            v,
                            var_eps,
                            (sigma_delta_inflation * noise.sigma_theta).powi(2),
                        )
                    }
                };
            }
        }
        Ok(MeasurementSet {
            v_mag,
            theta,
            p,
            q,
            v_re,
            v_im,
            i_re: None,
            i_im: None,
            cov_v,
            cov_i: None,
            noise,
            mode,
            sigma_delta_inflation,
            centered: false,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.v_mag.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.v_mag.ncols()
    }

    pub fn voltage(&self) -> DMatrix<num_complex::Complex64> {
        self.v_re.zip_map(&self.v_im, num_complex::Complex64::new)
    }

    /// Current phasors; `None` until [`derive_currents`] has run.
    pub fn current(&self) -> Option<DMatrix<num_complex::Complex64>> {
        match (&self.i_re, &self.i_im) {
            (Some(re), Some(im)) => Some(re.zip_map(im, num_complex::Complex64::new)),
            _ => None,
        }
    }

    /// Checks shapes and covariance positivity.
    pub fn validate(&self) -> Result<()> {
        let shape = self.v_mag.shape();
        let mut shapes = vec![self.p.shape(), self.q.shape(), self.v_re.shape(), self.v_im.shape()];
        shapes.push(self.cov_v.shape());
        shapes.extend(self.theta.iter().map(|m| m.shape()));
        shapes.extend(self.i_re.iter().map(|m| m.shape()));
        shapes.extend(self.i_im.iter().map(|m| m.shape()));
        shapes.extend(self.cov_i.iter().map(|m| m.shape()));
        if let Some(bad) = shapes.into_iter().find(|s| *s != shape) {
            return Err(GridError::dimension(format!("{shape:?}"), format!("{bad:?}")));
        }
        let all_psd = self
            .cov_v
            .iter()
            .chain(self.cov_i.iter().flat_map(|c| c.iter()))
            .all(Cov2::is_psd);
        if !all_psd {
            return Err(GridError::Numerical("covariance is not positive semi-definite".into()));
        }
        Ok(())
    }
}

/// Draws `n_samples` load profiles, each node independently Gaussian around
/// its nominal injection with relative standard deviation `sigma_load_rel`.
pub fn generate_load_profiles(
    network: &NetworkModel,
    n_samples: usize,
    sigma_load_rel: f64,
    seed: u64,
) -> Vec<Injections> {
    let (p0, q0) = network.nominal_injections_pu();
    let n = p0.len();
    let mut out = vec![Injections::zeros(n); n_samples];
    for h in 0..n {
        let mut rp = stream(seed, Purpose::LoadP, h);
        let mut rq = stream(seed, Purpose::LoadQ, h);
        for sample in out.iter_mut() {
            let zp: f64 = rp.sample(StandardNormal);
            let zq: f64 = rq.sample(StandardNormal);
            sample.p[h] = p0[h] * (1.0 + sigma_load_rel * zp);
            sample.q[h] = q0[h] * (1.0 + sigma_load_rel * zq);
        }
    }
    out
}

/// Substation voltage magnitudes around 1 pu.
pub fn generate_slack_voltages(n_samples: usize, sigma_rel: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::SlackVoltage, 0);
    (0..n_samples)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            1.0 + sigma_rel * z
        })
        .collect()
}

/// Solves every profile with the exact power flow. The stored injections are
/// recomputed from the solved state so the slack bus carries its balancing power.
pub fn synthesize_dataset(
    network: &NetworkModel,
    profiles: &[Injections],
    slack_v: &[f64],
) -> Result<TrueStates> {
    if profiles.is_empty() {
        return Err(GridError::Config("at least one load profile is required".into()));
    }
    if slack_v.len() != profiles.len() {
        return Err(GridError::dimension(profiles.len(), slack_v.len()));
    }
    let y = build_admittance(network)?;
    let slack = network.slack_index();
    let mut states = Vec::with_capacity(profiles.len());
    let mut injections = Vec::with_capacity(profiles.len());
    for (sample, (inj, &vs)) in profiles.iter().zip(slack_v).enumerate() {
        let state = solve_powerflow(&y, inj, slack, vs).map_err(|e| GridError::SampleDivergence {
            sample,
            source: Box::new(e),
        })?;
        injections.push(exact_powers(&y, &state)?);
        states.push(state);
    }
    Ok(TrueStates { states, injections })
}

/// First-order cartesian covariance of a phasor measured with magnitude
/// variance `var_eps` and angle variance `var_delta`.
pub fn polar_covariance_to_cartesian(v: f64, theta: f64, var_eps: f64, var_delta: f64) -> Cov2 {
    let (s, c) = theta.sin_cos();
    let vd = var_delta * v * v;
    Cov2::new(
        var_eps * c * c + vd * s * s,
        var_eps * s * s + vd * c * c,
        s * c * (var_eps - vd),
    )
}

/// The zero-angle case used when the phase is not measured: a diagonal matrix.
pub fn phaseless_voltage_covariance(v: f64, var_eps: f64, var_delta: f64) -> Cov2 {
    Cov2::new(var_eps, var_delta * v * v, 0.0)
}

/// Perturbs the truth as a meter would. All draws are independent across
/// buses and samples.
pub fn apply_noise(
    truth: &TrueStates,
    spec: &NoiseSpec,
    mode: PhaseMode,
    seed: u64,
) -> Result<MeasurementSet> {
    apply_noise_with_inflation(truth, spec, mode, seed, DEFAULT_SIGMA_DELTA_INFLATION)
}

pub fn apply_noise_with_inflation(
    truth: &TrueStates,
    spec: &NoiseSpec,
    mode: PhaseMode,
    seed: u64,
    sigma_delta_inflation: f64,
) -> Result<MeasurementSet> {
    spec.validate()?;
    let (n_t, n) = (truth.n_samples(), truth.n_buses());
    let mut v_mag = truth.v_matrix();
    let mut theta = truth.theta_matrix();
    let mut p = truth.p_matrix();
    let mut q = truth.q_matrix();
    for h in 0..n {
        let mut rv = stream(seed, Purpose::NoiseMagnitude, h);
        let mut ra = stream(seed, Purpose::NoiseAngle, h);
        let mut rp = stream(seed, Purpose::NoiseP, h);
        let mut rq = stream(seed, Purpose::NoiseQ, h);
        for t in 0..n_t {
            let zv: f64 = rv.sample(StandardNormal);
            let za: f64 = ra.sample(StandardNormal);
            let zp: f64 = rp.sample(StandardNormal);
            let zq: f64 = rq.sample(StandardNormal);
            v_mag[(t, h)] *= 1.0 + spec.sigma_v_rel * zv;
            theta[(t, h)] += spec.sigma_theta * za;
            p[(t, h)] *= 1.0 + spec.sigma_p_rel * zp;
            q[(t, h)] *= 1.0 + spec.sigma_q_rel * zq;
        }
    }
    let theta = match mode {
        PhaseMode::WithPhase => Some(theta),
        PhaseMode::Phaseless => None,
    };
    MeasurementSet::assemble(v_mag, theta, p, q, *spec, sigma_delta_inflation)
}

/// Currents from powers and voltages, `I = conj(S / V)`, with first-order
/// covariances propagated from the power, magnitude and angle noise.
pub fn derive_currents(ms: &MeasurementSet) -> Result<MeasurementSet> {
    if ms.centered {
        return Err(GridError::Config(
            "currents must be derived before centering".into(),
        ));
    }
    let (n_t, n) = (ms.n_samples(), ms.n_buses());
    let mut i_re = DMatrix::zeros(n_t, n);
    let mut i_im = DMatrix::zeros(n_t, n);
    let mut cov_i = DMatrix::from_element(n_t, n, Cov2::default());
    let sigma_theta = match ms.mode {
        PhaseMode::WithPhase => ms.noise.sigma_theta,
        PhaseMode::Phaseless => 0.0,
    };
    for t in 0..n_t {
        for h in 0..n {
            let v = ms.v_mag[(t, h)];
            if v == 0.0 || !v.is_finite() {
                return Err(GridError::SingularDivision { sample: t, bus: h + 1 });
            }
            let angle = ms.theta.as_ref().map_or(0.0, |th| th[(t, h)]);
            let (s, c) = angle.sin_cos();
            let (p, q) = (ms.p[(t, h)], ms.q[(t, h)]);
            // (p - jq) e^{j angle} / v
            let re = (p * c + q * s) / v;
            let im = (p * s - q * c) / v;
            i_re[(t, h)] = re;
            i_im[(t, h)] = im;

            let sp = ms.noise.sigma_p_rel * p.abs() / v;
            let sq = ms.noise.sigma_q_rel * q.abs() / v;
            let sv = ms.noise.sigma_v_rel;
            let mut cov = Cov2::default();
            cov.add_outer(sp * c, sp * s);
            cov.add_outer(sq * s, -sq * c);
            cov.add_outer(-sv * re, -sv * im);
            cov.add_outer(-sigma_theta * im, sigma_theta * re);
            cov_i[(t, h)] = cov;
        }
    }
    Ok(MeasurementSet {
        i_re: Some(i_re),
        i_im: Some(i_im),
        cov_i: Some(cov_i),
        ..ms.clone()
    })
}

fn center_columns(m: &mut DMatrix<f64>) {
    let rows = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / rows;
        col.add_scalar_mut(-mean);
    }
}

/// Subtracts the time average from every column. Covariances are unchanged.
pub fn center(ms: &MeasurementSet) -> MeasurementSet {
    let mut out = ms.clone();
    for m in [&mut out.v_mag, &mut out.p, &mut out.q, &mut out.v_re, &mut out.v_im] {
        center_columns(m);
    }
    for m in [&mut out.theta, &mut out.i_re, &mut out.i_im]
        .into_iter()
        .flatten()
    {
        center_columns(m);
    }
    out.centered = true;
    out
}

/// One row of the dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub t: usize,
    pub bus: usize,
    pub v_mag_pu: f64,
    pub theta_rad: Option<f64>,
    pub p_pu: f64,
    pub q_pu: f64,
}

/// Writes `t,bus,v_mag_pu,theta_rad,p_pu,q_pu`, one row per sample and bus.
pub fn write_dataset_csv(
    path: impl AsRef<Path>,
    v_mag: &DMatrix<f64>,
    theta: Option<&DMatrix<f64>>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| GridError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| GridError::io(path, e);
    writeln!(w, "t,bus,v_mag_pu,theta_rad,p_pu,q_pu").map_err(io)?;
    for t in 0..v_mag.nrows() {
        for h in 0..v_mag.ncols() {
            let th = theta.map(|m| m[(t, h)].to_string()).unwrap_or_default();
            writeln!(
                w,
                "{t},{},{},{th},{},{}",
                h + 1,
                v_mag[(t, h)],
                p[(t, h)],
                q[(t, h)]
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_true_states_csv(path: impl AsRef<Path>, truth: &TrueStates) -> Result<()> {
    write_dataset_csv(
        path,
        &truth.v_matrix(),
        Some(&truth.theta_matrix()),
        &truth.p_matrix(),
        &truth.q_matrix(),
    )
}

pub fn write_measurements_csv(path: impl AsRef<Path>, ms: &MeasurementSet) -> Result<()> {
    write_dataset_csv(path, &ms.v_mag, ms.theta.as_ref(), &ms.p, &ms.q)
}

/// Raw readings parsed from a dataset CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    pub v_mag: DMatrix<f64>,
    pub theta: Option<DMatrix<f64>>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<DatasetTable> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| GridError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => GridError::io(path, io),
        other => parse_err(1, format!("{other:?}")),
    })?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<MeasurementRecord>().enumerate() {
        records.push(row.map_err(|e| parse_err(i + 2, e.to_string()))?);
    }
    if records.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let n_t = records.iter().map(|r| r.t).max().unwrap_or(0) + 1;
    let n = records.iter().map(|r| r.bus).max().unwrap_or(0);
    if records.len() != n_t * n {
        return Err(parse_err(
            records.len() + 1,
            format!("expected {} rows for {n_t} samples x {n} buses", n_t * n),
        ));
    }
    let has_theta = records[0].theta_rad.is_some();
    let mut table = DatasetTable {
        v_mag: DMatrix::from_element(n_t, n, f64::NAN),
        theta: has_theta.then(|| DMatrix::zeros(n_t, n)),
        p: DMatrix::zeros(n_t, n),
        q: DMatrix::zeros(n_t, n),
    };
    for (i, r) in records.iter().enumerate() {
        let line = i + 2;
        if r.bus == 0 {
            return Err(parse_err(line, "bus ids start at 1".into()));
        }
        let (t, h) = (r.t, r.bus - 1);
        if !table.v_mag[(t, h)].is_nan() {
            return Err(parse_err(line, format!("duplicate row for t={t}, bus={}", r.bus)));
        }
        table.v_mag[(t, h)] = r.v_mag_pu;
        table.p[(t, h)] = r.p_pu;
        table.q[(t, h)] = r.q_pu;
        match (&mut table.theta, r.theta_rad) {
            (Some(th), Some(a)) => th[(t, h)] = a,
            (None, None) => {}
            _ => return Err(parse_err(line, "theta_rad must be present on all rows or none".into())),
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ieee33;
    use std::f64::consts::FRAC_PI_2;

    fn small_truth(n_samples: usize) -> TrueStates {
        let net = ieee33();
        let profiles = generate_load_profiles(&net, n_samples, 0.2, 11);
        let slack = generate_slack_voltages(n_samples, 0.005, 11);
        synthesize_dataset(&net, &profiles, &slack).unwrap()
    }

    #[test]
    fn zero_load_variation_repeats_nominal() {
        let net = ieee33();
        let profiles = generate_load_profiles(&net, 5, 0.0, 3);
        let (p0, q0) = net.nominal_injections_pu();
        for inj in &profiles {
            assert_eq!(inj.p, p0);
            assert_eq!(inj.q, q0);
        }
        assert_eq!(profiles, generate_load_profiles(&net, 5, 0.0, 4));
    }

    #[test]
    fn load_profiles_are_seed_deterministic() {
        let net = ieee33();
        assert_eq!(
            generate_load_profiles(&net, 20, 0.2, 9),
            generate_load_profiles(&net, 20, 0.2, 9)
        );
        assert_ne!(
            generate_load_profiles(&net, 20, 0.2, 9),
            generate_load_profiles(&net, 20, 0.2, 10)
        );
    }

    #[test]
    fn load_profile_spread() {
        let net = ieee33();
        let n_t = 1440;
        let profiles = generate_load_profiles(&net, n_t, 0.2, 5);
        let (p0, _) = net.nominal_injections_pu();
        for h in 1..33 {
            let xs: Vec<f64> = profiles.iter().map(|s| s.p[h]).collect();
            let mean = xs.iter().sum::<f64>() / n_t as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_t - 1) as f64).sqrt();
            // std of a sample std at N = 1440 is ~1.9%, so 10% is > 5 sigma
            let target = 0.2 * p0[h].abs();
            assert!((sd - target).abs() < 0.1 * target, "bus {h}: {sd} vs {target}");
        }
    }

    #[test]
    fn covariance_closed_forms() {
        let (v, ve, vd) = (1.02, 4e-6, 9e-6);
        let c0 = polar_covariance_to_cartesian(v, 0.0, ve, vd);
        assert_eq!(c0, Cov2::new(ve, vd * v * v, 0.0));
        assert_eq!(c0, phaseless_voltage_covariance(v, ve, vd));

        let c90 = polar_covariance_to_cartesian(v, FRAC_PI_2, ve, vd);
        assert!((c90.xx - vd * v * v).abs() < 1e-20);
        assert!((c90.yy - ve).abs() < 1e-20);
        assert!(c90.xy.abs() < 1e-20);

        for angle in [0.1, 0.7, -2.0, 3.0] {
            let c = polar_covariance_to_cartesian(v, angle, vd * v * v, vd);
            assert!(c.xy.abs() < 1e-20);
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let truth = small_truth(4);
        let ms = apply_noise(&truth, &NoiseSpec::ZERO, PhaseMode::WithPhase, 1).unwrap();
        assert_eq!(ms.v_mag, truth.v_matrix());
        assert_eq!(ms.theta.as_ref().unwrap(), &truth.theta_matrix());
        assert_eq!(ms.p, truth.p_matrix());
        assert_eq!(ms.q, truth.q_matrix());
        ms.validate().unwrap();
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let truth = small_truth(4);
        let spec = NoiseSpec::from_level(0.01);
        let a = apply_noise(&truth, &spec, PhaseMode::WithPhase, 21).unwrap();
        let b = apply_noise(&truth, &spec, PhaseMode::WithPhase, 21).unwrap();
        assert_eq!(a, b);
        let c = apply_noise(&truth, &spec, PhaseMode::WithPhase, 22).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn phaseless_set_has_real_voltage() {
        let truth = small_truth(3);
        let ms = apply_noise(&truth, &NoiseSpec::from_level(1e-3), PhaseMode::Phaseless, 2).unwrap();
        assert!(ms.theta.is_none());
        assert_eq!(ms.v_re, ms.v_mag);
        assert!(ms.v_im.iter().all(|&x| x == 0.0));
        // imaginary variance uses the inflated angle deviation
        let c = ms.cov_v[(0, 4)];
        let v = ms.v_mag[(0, 4)];
        let expected = (100.0 * 1e-5 * v).powi(2);
        assert!((c.yy - expected).abs() < 1e-12 * expected);
        assert_eq!(c.xy, 0.0);
    }

    #[test]
    fn current_simple_cases() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        let ms = MeasurementSet::assemble(
            one.clone(),
            Some(zero.clone()),
            one.clone(),
            zero.clone(),
            NoiseSpec::ZERO,
            100.0,
        )
        .unwrap();
        let ms = derive_currents(&ms).unwrap();
        assert_eq!(ms.i_re.as_ref().unwrap()[(0, 0)], 1.0);
        assert_eq!(ms.i_im.as_ref().unwrap()[(0, 0)], 0.0);

        let ms = MeasurementSet::assemble(one.clone(), Some(zero.clone()), zero, one, NoiseSpec::ZERO, 100.0)
            .unwrap();
        let ms = derive_currents(&ms).unwrap();
        assert_eq!(ms.i_re.as_ref().unwrap()[(0, 0)], 0.0);
        assert_eq!(ms.i_im.as_ref().unwrap()[(0, 0)], -1.0);
    }

    #[test]
    fn current_rejects_zero_voltage() {
        let ms = MeasurementSet::assemble(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            None,
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            NoiseSpec::ZERO,
            100.0,
        )
        .unwrap();
        assert!(matches!(
            derive_currents(&ms),
            Err(GridError::SingularDivision { sample: 1, bus: 2 })
        ));
    }

    #[test]
    fn phaseless_current_covariance_matches_delta_method() {
        let (v, p, q) = (0.98, -0.02, -0.01);
        let noise = NoiseSpec::from_level(0.01);
        let ms = MeasurementSet::assemble(
            DMatrix::from_element(1, 1, v),
            None,
            DMatrix::from_element(1, 1, p),
            DMatrix::from_element(1, 1, q),
            noise,
            100.0,
        )
        .unwrap();
        let c = derive_currents(&ms).unwrap().cov_i.unwrap()[(0, 0)];
        let (sp, sq, se) = (0.01 * p.abs(), 0.01 * q.abs(), 1e-4);
        assert!((c.xx - ((sp / v).powi(2) + (p * se / v).powi(2))).abs() < 1e-20);
        assert!((c.yy - ((sq / v).powi(2) + (q * se / v).powi(2))).abs() < 1e-20);
        // I_re = p/v and I_im = -q/v move in opposite directions with v
        assert!((c.xy + p * q * se * se / (v * v)).abs() < 1e-20);
    }

    #[test]
    fn centering() {
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 3.0, 5.0]);
        let ms = MeasurementSet::assemble(
            v.clone(),
            Some(DMatrix::zeros(2, 2)),
            v.clone(),
            v,
            NoiseSpec::ZERO,
            100.0,
        )
        .unwrap();
        let c = center(&ms);
        assert!(c.centered);
        assert_eq!(c.v_mag, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]));
        assert_eq!(c.cov_v, ms.cov_v);
        let twice = center(&c);
        assert!((twice.v_mag.clone() - c.v_mag.clone()).amax() < 1e-15);
        assert!(derive_currents(&c).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let truth = small_truth(3);
        let ms = apply_noise(&truth, &NoiseSpec::from_level(1e-2), PhaseMode::Phaseless, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_measurements_csv(&path, &ms).unwrap();
        let table = read_dataset_csv(&path).unwrap();
        assert_eq!(table.v_mag, ms.v_mag);
        assert_eq!(table.p, ms.p);
        assert_eq!(table.q, ms.q);
        assert!(table.theta.is_none());
    }
}
