//! Experiment pipeline behind the `gridid` tool: dataset generation,
//! estimation on stored datasets, noise sweeps and the approximation tables.
//!
//! Randomness is keyed by the master seed only. Ground truth uses it
//! directly; the meter noise at level `x` uses `child_seed(seed, x.to_bits())`
//! so every method sees the same noisy readings at a given level, and a
//! level's data does not depend on which other levels are requested.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::estimation::{
    default_lambda_grid, lasso_estimate, mle_estimate, write_matrix_csv, EstimatorConfig,
};
use crate::measurement::{
    apply_noise_with_inflation, center, derive_currents, generate_load_profiles,
    generate_slack_voltages, read_dataset_csv, synthesize_dataset, write_measurements_csv,
    write_true_states_csv, MeasurementSet, NoiseSpec, PhaseMode, TrueStates,
    DEFAULT_SIGMA_DELTA_INFLATION,
};
use crate::metrics::{mad, rrmse, sparsity_report, MetricReport, DEFAULT_SPARSITY_THRESHOLD};
use crate::network::{build_admittance, load_network, save_network, AdmittanceMatrix, NetworkModel};
use crate::powerflow::{adapted_constraint_powers, linearized_powers, Injections, VoltageState};
use crate::rng::child_seed;

pub const DEFAULT_N_SAMPLES: usize = 1440;
pub const DEFAULT_SIGMA_LOAD_REL: f64 = 0.2;
/// Relative standard deviation of the substation voltage magnitude.
pub const DEFAULT_SIGMA_SLACK_REL: f64 = 0.005;
/// Noise level at which the approximation tables are evaluated.
pub const TABLE_NOISE_LEVEL: f64 = 0.001;
pub const MAX_NOISE_LEVEL: f64 = 0.1;
/// Environment variable capping the number of concurrently running cells.
pub const THREADS_ENV: &str = "GRIDID_THREADS";
/// How `rrmse_y` is computed, recorded in every manifest.
pub const RRMSE_Y_CONVENTION: &str = "complex Frobenius norm of Y_hat - Y over the full n x n matrix";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MleWithPhase,
    MlePhaseless,
    LassoWithPhase,
    LassoPhaseless,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::MleWithPhase,
        Method::MlePhaseless,
        Method::LassoWithPhase,
        Method::LassoPhaseless,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::MleWithPhase => "mle_with_phase",
            Method::MlePhaseless => "mle_phaseless",
            Method::LassoWithPhase => "lasso_with_phase",
            Method::LassoPhaseless => "lasso_phaseless",
        }
    }

    pub fn phase_mode(&self) -> PhaseMode {
        match self {
            Method::MleWithPhase | Method::LassoWithPhase => PhaseMode::WithPhase,
            Method::MlePhaseless | Method::LassoPhaseless => PhaseMode::Phaseless,
        }
    }

    pub fn is_mle(&self) -> bool {
        matches!(self, Method::MleWithPhase | Method::MlePhaseless)
    }
}

/// Estimator settings shared by all cells of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub enforce_symmetry: bool,
    pub sigma_delta_inflation: f64,
    /// Lasso penalties; `None` selects the default data-driven grid.
    pub lambda_grid: Option<Vec<f64>>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        let d = EstimatorConfig::default();
        EstimatorSettings {
            max_iters: d.max_iters,
            rel_tol: d.rel_tol,
            enforce_symmetry: d.enforce_symmetry,
            sigma_delta_inflation: DEFAULT_SIGMA_DELTA_INFLATION,
            lambda_grid: None,
        }
    }
}

fn default_n_samples() -> usize {
    DEFAULT_N_SAMPLES
}
fn default_sigma_load() -> f64 {
    DEFAULT_SIGMA_LOAD_REL
}
fn default_sigma_slack() -> f64 {
    DEFAULT_SIGMA_SLACK_REL
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One experiment. Relative paths are resolved against the directory of
/// the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network_path: PathBuf,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_sigma_load")]
    pub sigma_load_rel: f64,
    #[serde(default = "default_sigma_slack")]
    pub sigma_slack_rel: f64,
    pub noise_levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub estimator: EstimatorSettings,
}

impl ExperimentConfig {
    /// Reads and validates a JSON configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).map_err(|e| match e {
            GridError::Parse { line, message, .. } => GridError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    /// Parses a configuration, resolving relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| GridError::Parse {
            path: PathBuf::from("<config>"),
            line: e.line(),
            message: e.to_string(),
        })?;
        for p in [&mut cfg.network_path, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(GridError::Config("n_samples must be at least 1".into()));
        }
        if !(self.sigma_load_rel >= 0.0 && self.sigma_load_rel.is_finite()) {
            return Err(GridError::Config("sigma_load_rel must be finite and non-negative".into()));
        }
        if !(self.sigma_slack_rel >= 0.0 && self.sigma_slack_rel.is_finite()) {
            return Err(GridError::Config("sigma_slack_rel must be finite and non-negative".into()));
        }
        if let Some(bad) = self
            .noise_levels
            .iter()
            .find(|l| !(**l >= 0.0 && **l <= MAX_NOISE_LEVEL))
        {
            return Err(GridError::Config(format!(
                "noise level {bad} outside [0, {MAX_NOISE_LEVEL}]"
            )));
        }
        if self.methods.is_empty() {
            return Err(GridError::Config("at least one method is required".into()));
        }
        if let Some(grid) = &self.estimator.lambda_grid {
            if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(GridError::Config(
                    "lambda_grid must be a non-empty list of finite non-negative values".into(),
                ));
            }
        }
        self.estimator_config(PhaseMode::WithPhase).validate()
    }

    pub fn estimator_config(&self, phase_mode: PhaseMode) -> EstimatorConfig {
        EstimatorConfig {
            max_iters: self.estimator.max_iters,
            rel_tol: self.estimator.rel_tol,
            enforce_symmetry: self.estimator.enforce_symmetry,
            phase_mode,
            sigma_delta_inflation: self.estimator.sigma_delta_inflation,
        }
    }
}

/// Grid, true admittance matrix and simulated operating points.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub network: NetworkModel,
    pub y: AdmittanceMatrix,
    pub states: TrueStates,
}

impl GroundTruth {
    pub fn y_complex(&self) -> DMatrix<Complex64> {
        self.y.to_complex()
    }
}

/// Seed of the meter noise at `level`.
pub fn noise_seed(master: u64, level: f64) -> u64 {
    child_seed(master, level.to_bits())
}

/// Loads the network and simulates `n_samples` operating points.
pub fn simulate_truth(cfg: &ExperimentConfig) -> Result<GroundTruth> {
    let network = load_network(&cfg.network_path)?;
    simulate_truth_for(network, cfg)
}

pub fn simulate_truth_for(network: NetworkModel, cfg: &ExperimentConfig) -> Result<GroundTruth> {
    let y = build_admittance(&network)?;
    let profiles = generate_load_profiles(&network, cfg.n_samples, cfg.sigma_load_rel, cfg.seed);
    let slack = generate_slack_voltages(cfg.n_samples, cfg.sigma_slack_rel, cfg.seed);
    let states = synthesize_dataset(&network, &profiles, &slack)?;
    Ok(GroundTruth { network, y, states })
}

/// Raw (uncentred, no currents) readings at `level` as seen by `mode` meters.
pub fn measure(
    truth: &TrueStates,
    level: f64,
    mode: PhaseMode,
    cfg: &ExperimentConfig,
) -> Result<MeasurementSet> {
    apply_noise_with_inflation(
        truth,
        &NoiseSpec::from_level(level),
        mode,
        noise_seed(cfg.seed, level),
        cfg.estimator.sigma_delta_inflation,
    )
}

/// What one estimator run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub y_hat: DMatrix<Complex64>,
    /// Objective after initialisation and every iteration (MLE only).
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Selected penalty and `(lambda, validation error)` path (Lasso only).
    pub lambda: Option<f64>,
    pub validation: Vec<(f64, f64)>,
}

/// Runs `method` on raw readings whose phase mode matches the method.
pub fn run_method(
    method: Method,
    raw: &MeasurementSet,
    cfg: &ExperimentConfig,
) -> Result<MethodOutcome> {
    if raw.mode != method.phase_mode() {
        return Err(GridError::Config(format!(
            "{} needs {:?} measurements, got {:?}",
            method.name(),
            method.phase_mode(),
            raw.mode
        )));
    }
    let ms = center(&derive_currents(raw)?);
    if method.is_mle() {
        let res = mle_estimate(&ms, &cfg.estimator_config(method.phase_mode()))?;
        Ok(MethodOutcome {
            y_hat: res.y_hat,
            trace: res.neg_log_likelihood_trace,
            converged: res.converged,
            iterations: res.iterations,
            lambda: None,
            validation: Vec::new(),
        })
    } else {
        let grid = match &cfg.estimator.lambda_grid {
            Some(g) => g.clone(),
            None => default_lambda_grid(&ms)?,
        };
        let fit = lasso_estimate(&ms, &grid)?;
        Ok(MethodOutcome {
            y_hat: fit.y_hat,
            trace: Vec::new(),
            converged: true,
            iterations: 0,
            lambda: Some(fit.lambda),
            validation: fit.validation,
        })
    }
}

/// Errors of the power and current approximations against the exact values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproximationErrors {
    pub rrmse_p_lin: f64,
    pub rrmse_q_lin: f64,
    pub rrmse_p_adapted: f64,
    pub rrmse_q_adapted: f64,
    /// Adapted-constraint active power, MW.
    pub mad_p_mw: f64,
    /// Adapted-constraint reactive power, MVAr.
    pub mad_q_mvar: f64,
    pub rrmse_i_re: f64,
    pub rrmse_i_im: f64,
}

fn injection_matrices(rows: &[Injections]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = rows.first().map_or(0, |r| r.len());
    (
        DMatrix::from_fn(rows.len(), n, |t, h| rows[t].p[h]),
        DMatrix::from_fn(rows.len(), n, |t, h| rows[t].q[h]),
    )
}

/// Both power models are evaluated with the true `Y` at the measured
/// (noisy, with-phase) states and compared with the exact powers of the
/// true states. The current approximation is the phase-less current
/// `conj(S) / |V|` from noisy magnitude-only readings, compared with the
/// exact current `conj(S / V)`. Matrices stack all samples and buses.
pub fn approximation_errors(
    truth: &GroundTruth,
    with_phase: &MeasurementSet,
    phaseless: &MeasurementSet,
) -> Result<ApproximationErrors> {
    let theta = with_phase.theta.as_ref().ok_or_else(|| {
        GridError::Config("power models need with-phase measurements".into())
    })?;
    let (n_t, n) = (with_phase.n_samples(), with_phase.n_buses());
    let mut lin = Vec::with_capacity(n_t);
    let mut adapted = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let state = VoltageState {
            v: with_phase.v_mag.row(t).iter().copied().collect(),
            theta: theta.row(t).iter().copied().collect(),
        };
        lin.push(linearized_powers(&truth.y, &state)?);
        adapted.push(adapted_constraint_powers(&truth.y, &state)?);
    }
    let (p_exact, q_exact) = injection_matrices(&truth.states.injections);
    let (p_lin, q_lin) = injection_matrices(&lin);
    let (p_ad, q_ad) = injection_matrices(&adapted);
    let base = truth.network.base_power_mva;

    let i_exact = exact_currents(&truth.states);
    let approx = derive_currents(phaseless)?;
    let i_approx = approx.current().expect("derive_currents fills the currents");
    let re = |m: &DMatrix<Complex64>| m.map(|z| z.re);
    let im = |m: &DMatrix<Complex64>| m.map(|z| z.im);
    if i_exact.shape() != (n_t, n) {
        return Err(GridError::dimension(format!("{:?}", (n_t, n)), format!("{:?}", i_exact.shape())));
    }
    Ok(ApproximationErrors {
        rrmse_p_lin: rrmse(&p_lin, &p_exact)?,
        rrmse_q_lin: rrmse(&q_lin, &q_exact)?,
        rrmse_p_adapted: rrmse(&p_ad, &p_exact)?,
        rrmse_q_adapted: rrmse(&q_ad, &q_exact)?,
        mad_p_mw: mad(&p_ad, &p_exact)? * base,
        mad_q_mvar: mad(&q_ad, &q_exact)? * base,
        rrmse_i_re: rrmse(&re(&i_approx), &re(&i_exact))?,
        rrmse_i_im: rrmse(&im(&i_approx), &im(&i_exact))?,
    })
}

/// `conj(S / V)` at every true state.
pub fn exact_currents(states: &TrueStates) -> DMatrix<Complex64> {
    let v = states.voltage_phasors();
    DMatrix::from_fn(states.n_samples(), states.n_buses(), |t, h| {
        let s = Complex64::new(states.injections[t].p[h], states.injections[t].q[h]);
        (s / v[(t, h)]).conj()
    })
}

/// Approximation errors at `level` for the experiment's ground truth.
pub fn approximation_errors_at(
    truth: &GroundTruth,
    level: f64,
    cfg: &ExperimentConfig,
) -> Result<ApproximationErrors> {
    let wp = measure(&truth.states, level, PhaseMode::WithPhase, cfg)?;
    let pl = measure(&truth.states, level, PhaseMode::Phaseless, cfg)?;
    approximation_errors(truth, &wp, &pl)
}

pub fn metric_report(
    experiment: &str,
    level: f64,
    method: Method,
    y_hat: &DMatrix<Complex64>,
    y_true: &DMatrix<Complex64>,
    approx: &ApproximationErrors,
) -> Result<MetricReport> {
    Ok(MetricReport {
        experiment: experiment.to_string(),
        noise_level: level,
        method: method.name().to_string(),
        rrmse_y: rrmse(y_hat, y_true)?,
        rrmse_p_lin: approx.rrmse_p_lin,
        rrmse_q_lin: approx.rrmse_q_lin,
        rrmse_p_adapted: approx.rrmse_p_adapted,
        rrmse_q_adapted: approx.rrmse_q_adapted,
        mad_p_mw: approx.mad_p_mw,
        mad_q_mvar: approx.mad_q_mvar,
        rrmse_i_re: approx.rrmse_i_re,
        rrmse_i_im: approx.rrmse_i_im,
        sparsity_false_positives: sparsity_report(y_hat, y_true, DEFAULT_SPARSITY_THRESHOLD)?
            .false_positives,
    })
}

/// An output file and the randomness it was drawn with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub method: Option<Method>,
}

/// Everything needed to regenerate a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub rrmse_y: String,
    pub config: ExperimentConfig,
    pub files: Vec<ManifestEntry>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const NETWORK_FILE: &str = "network.json";
pub const TRUE_STATES_FILE: &str = "true_states.csv";

impl Manifest {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rrmse_y: RRMSE_Y_CONVENTION.to_string(),
            config: cfg.clone(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, file: &str, level: Option<f64>, seed: Option<u64>, method: Option<Method>) {
        self.files.push(ManifestEntry {
            file: file.to_string(),
            noise_level: level,
            noise_seed: seed,
            method,
        });
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| GridError::Numerical(format!("manifest serialisation: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| GridError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GridError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GridError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| GridError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| GridError::io(path, e))
}

pub fn measurement_file_name(level: f64) -> String {
    format!("measurements_{level}.csv")
}

fn cell_file(prefix: &str, method: Method, level: f64) -> String {
    format!("{prefix}_{}_{level}.csv", method.name())
}

/// Writes the network, the true states and one measurement file per noise
/// level (with phase; magnitude-only meters read the same file and ignore
/// the angle column), plus `manifest.json`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    let truth = simulate_truth(cfg)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut manifest = Manifest::new("generate", cfg);
    save_network(&truth.network, dir.join(NETWORK_FILE))?;
    manifest.add(NETWORK_FILE, None, None, None);
    write_true_states_csv(dir.join(TRUE_STATES_FILE), &truth.states)?;
    manifest.add(TRUE_STATES_FILE, None, None, None);
    for &level in &cfg.noise_levels {
        let ms = measure(&truth.states, level, PhaseMode::WithPhase, cfg)?;
        let name = measurement_file_name(level);
        write_measurements_csv(dir.join(&name), &ms)?;
        manifest.add(&name, Some(level), Some(noise_seed(cfg.seed, level)), None);
    }
    manifest.write(dir.join(DATASET_MANIFEST))?;
    Ok(manifest)
}

/// Reads a stored measurement file as `mode` meters would see it.
pub fn load_measurements(
    path: impl AsRef<Path>,
    level: f64,
    mode: PhaseMode,
    cfg: &ExperimentConfig,
) -> Result<MeasurementSet> {
    let table = read_dataset_csv(path)?;
    let theta = match mode {
        PhaseMode::WithPhase => Some(table.theta.ok_or_else(|| {
            GridError::Config("with-phase methods need the theta_rad column".into())
        })?),
        PhaseMode::Phaseless => None,
    };
    MeasurementSet::assemble(
        table.v_mag,
        theta,
        table.p,
        table.q,
        NoiseSpec::from_level(level),
        cfg.estimator.sigma_delta_inflation,
    )
}

/// Runs every configured method on every measurement file of the dataset
/// in `dataset_dir` (as written by [`cmd_generate`]). Writes per cell the
/// estimated matrix, the convergence trace (MLE) or penalty path (Lasso),
/// and one `metrics.csv` row; outputs go to `cfg.output_dir`.
pub fn cmd_estimate(cfg: &ExperimentConfig, dataset_dir: &Path) -> Result<Vec<MetricReport>> {
    let dataset = Manifest::read(dataset_dir.join(DATASET_MANIFEST))?;
    let network = load_network(dataset_dir.join(NETWORK_FILE))?;
    let y_true = build_admittance(&network)?.to_complex();
    // tables are evaluated against the regenerated truth recorded by the manifest
    let truth = simulate_truth_for(network, &dataset.config)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut manifest = Manifest::new("estimate", cfg);
    let mut reports = Vec::new();
    for entry in dataset.files.iter().filter(|e| e.noise_level.is_some()) {
        let level = entry.noise_level.unwrap_or_default();
        let path = dataset_dir.join(&entry.file);
        let with_phase = load_measurements(&path, level, PhaseMode::WithPhase, cfg)?;
        let phaseless = load_measurements(&path, level, PhaseMode::Phaseless, cfg)?;
        let approx = approximation_errors(&truth, &with_phase, &phaseless)?;
        for &method in &cfg.methods {
            let raw = match method.phase_mode() {
                PhaseMode::WithPhase => &with_phase,
                PhaseMode::Phaseless => &phaseless,
            };
            let out = run_method(method, raw, cfg)?;
            let name = cell_file("estimate", method, level);
            write_matrix_csv(dir.join(&name), &out.y_hat)?;
            manifest.add(&name, Some(level), entry.noise_seed, Some(method));
            let (name, body) = if method.is_mle() {
                let mut body = String::from("iteration,objective\n");
                for (i, f) in out.trace.iter().enumerate() {
                    body += &format!("{i},{f}\n");
                }
                (cell_file("trace", method, level), body)
            } else {
                let mut body = String::from("lambda,validation_error\n");
                for (l, e) in &out.validation {
                    body += &format!("{l},{e}\n");
                }
                (cell_file("lambda_path", method, level), body)
            };
            write_text(&dir.join(&name), &body)?;
            manifest.add(&name, Some(level), entry.noise_seed, Some(method));
            reports.push(metric_report("estimate", level, method, &out.y_hat, &y_true, &approx)?);
        }
    }
    write_metrics(&dir.join("metrics.csv"), &reports)?;
    manifest.add("metrics.csv", None, None, None);
    manifest.write(dir.join("estimate_manifest.json"))?;
    Ok(reports)
}

fn write_metrics(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut body = format!("{}\n", MetricReport::CSV_HEADER);
    for r in reports {
        body += &r.to_csv_row();
        body.push('\n');
    }
    write_text(path, &body)
}

/// Number of concurrently running cells: `GRIDID_THREADS` if set, otherwise
/// the machine's parallelism.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(GridError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// One cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub noise_level: f64,
    pub method: Method,
    pub outcome: std::result::Result<(MethodOutcome, MetricReport), String>,
    pub seconds: f64,
}

/// Outcome of [`cmd_sweep`], cells in (level, method) order.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn rrmse(&self, level: f64, method: Method) -> Option<f64> {
        self.cell(level, method)
            .and_then(|c| c.outcome.as_ref().ok())
            .map(|(_, r)| r.rrmse_y)
    }

    pub fn cell(&self, level: f64, method: Method) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.noise_level == level && c.method == method)
    }
}

/// Every (noise level, method) cell on one simulated truth. Cells run
/// concurrently (at most `GRIDID_THREADS`); a failing cell is recorded and
/// the sweep continues. Writes `sweep.csv` (`noise_level,method,rrmse_y`,
/// empty `rrmse_y` on failure), `sweep_metrics.csv`, `sweep_failures.csv`
/// and `sweep_manifest.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    if cfg.noise_levels.is_empty() {
        return Err(GridError::Config("a sweep needs at least one noise level".into()));
    }
    let truth = simulate_truth(cfg)?;
    let y_true = truth.y_complex();
    let grid: Vec<(f64, Method)> = cfg
        .noise_levels
        .iter()
        .flat_map(|&l| cfg.methods.iter().map(move |&m| (l, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?)
        .build()
        .map_err(|e| GridError::Config(format!("thread pool: {e}")))?;
    let cells: Vec<SweepCell> = pool.install(|| {
        grid.par_iter()
            .map(|&(level, method)| {
                let start = std::time::Instant::now();
                let outcome = (|| {
                    let raw = measure(&truth.states, level, method.phase_mode(), cfg)?;
                    let out = run_method(method, &raw, cfg)?;
                    let approx = approximation_errors_at(&truth, level, cfg)?;
                    let report = metric_report("sweep", level, method, &out.y_hat, &y_true, &approx)?;
                    Ok::<_, GridError>((out, report))
                })()
                .map_err(|e| e.to_string());
                SweepCell {
                    noise_level: level,
                    method,
                    outcome,
                    seconds: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    });

    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let mut manifest = Manifest::new("sweep", cfg);
    let mut table = String::from("noise_level,method,rrmse_y\n");
    let mut failures = String::from("noise_level,method,error\n");
    let mut reports = Vec::new();
    for c in &cells {
        match &c.outcome {
            Ok((_, r)) => {
                table += &format!("{},{},{}\n", c.noise_level, c.method.name(), r.rrmse_y);
                reports.push(r.clone());
            }
            Err(msg) => {
                table += &format!("{},{},\n", c.noise_level, c.method.name());
                failures += &format!("{},{},\"{}\"\n", c.noise_level, c.method.name(), msg.replace('"', "'"));
            }
        }
    }
    write_text(&dir.join("sweep.csv"), &table)?;
    for &level in &cfg.noise_levels {
        manifest.add("sweep.csv", Some(level), Some(noise_seed(cfg.seed, level)), None);
    }
    write_metrics(&dir.join("sweep_metrics.csv"), &reports)?;
    manifest.add("sweep_metrics.csv", None, None, None);
    write_text(&dir.join("sweep_failures.csv"), &failures)?;
    manifest.add("sweep_failures.csv", None, None, None);
    manifest.write(dir.join("sweep_manifest.json"))?;
    Ok(SweepResult { cells })
}

/// The power-model table (RRMSE in percent, MAD of the adapted model in
/// MW / MVAr) and the current-approximation table, both at
/// [`TABLE_NOISE_LEVEL`]. Writes `table1.csv`, `table2.csv` and
/// `compare_manifest.json`.
pub fn cmd_compare_approx(cfg: &ExperimentConfig) -> Result<ApproximationErrors> {
    let truth = simulate_truth(cfg)?;
    let e = approximation_errors_at(&truth, TABLE_NOISE_LEVEL, cfg)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let table1 = format!(
        "quantity,rrmse_power_flow_pct,rrmse_adapted_pct,mad_adapted\n\
         active_power,{},{},{}\n\
         reactive_power,{},{},{}\n",
        100.0 * e.rrmse_p_lin,
        100.0 * e.rrmse_p_adapted,
        e.mad_p_mw,
        100.0 * e.rrmse_q_lin,
        100.0 * e.rrmse_q_adapted,
        e.mad_q_mvar
    );
    let table2 = format!(
        "quantity,rrmse_pct\ncurrent_real,{}\ncurrent_imag,{}\n",
        100.0 * e.rrmse_i_re,
        100.0 * e.rrmse_i_im
    );
    write_text(&dir.join("table1.csv"), &table1)?;
    write_text(&dir.join("table2.csv"), &table2)?;
    let mut manifest = Manifest::new("compare-approx", cfg);
    let seed = Some(noise_seed(cfg.seed, TABLE_NOISE_LEVEL));
    manifest.add("table1.csv", Some(TABLE_NOISE_LEVEL), seed, None);
    manifest.add("table2.csv", Some(TABLE_NOISE_LEVEL), seed, None);
    manifest.write(dir.join("compare_manifest.json"))?;
    Ok(e)
}
