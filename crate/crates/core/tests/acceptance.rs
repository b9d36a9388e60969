//! Acceptance report: one PASS/FAIL line per criterion, tolerances fixed.
//! Runs the full 4 x 4 sweep on the shipped 33-bus configuration.

mod common;

use std::path::Path;
use std::time::Instant;

use gridid_core::estimation::{mle_estimate, EstimatorConfig, MleProblem};
use gridid_core::experiment::{
    approximation_errors_at, cmd_sweep, simulate_truth, ExperimentConfig, Method,
};
use gridid_core::measurement::{generate_load_profiles, polar_covariance_to_cartesian, PhaseMode};
use gridid_core::metrics::rrmse;
use gridid_core::network::{build_admittance, ieee33};
use gridid_core::powerflow::{
    adapted_constraint_powers, constraint_difference, exact_powers, linearized_powers, VoltageState,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const LEVELS: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

struct Report {
    passed: usize,
    total: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        self.total += 1;
        self.passed += ok as usize;
        println!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn shipped_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/ieee33.json");
    ExperimentConfig::load(path).unwrap()
}

fn criterion_1(rep: &mut Report, cfg: &ExperimentConfig) {
    let truth = simulate_truth(cfg).unwrap();
    let start = Instant::now();
    let ms = common::prepared(&truth, 0.0, PhaseMode::WithPhase, cfg);
    let est = mle_estimate(&ms, &cfg.estimator_config(PhaseMode::WithPhase)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = rrmse(&est.y_hat, &truth.y_complex()).unwrap();
    rep.line(
        "1",
        err < 1e-6 && secs < 30.0,
        format!("noiseless with-phase MLE, N = {}: RRMSE {err:.3e} (< 1e-6) in {secs:.1} s (< 30 s)", cfg.n_samples),
    );
}

fn criteria_2_3(rep: &mut Report, cfg: &ExperimentConfig) {
    let truth = simulate_truth(cfg).unwrap();
    let e = approximation_errors_at(&truth, 1e-3, cfg).unwrap();
    let pct = |x: f64| 100.0 * x;
    let within = |x: f64, lo: f64, hi: f64| (lo..=hi).contains(&pct(x));
    let ok2 = within(e.rrmse_p_lin, 0.5, 3.0)
        && within(e.rrmse_q_lin, 4.0, 15.0)
        && within(e.rrmse_p_adapted, 0.5, 3.0)
        && within(e.rrmse_q_adapted, 3.0, 12.0)
        && e.rrmse_q_adapted <= e.rrmse_q_lin;
    rep.line(
        "2",
        ok2,
        format!(
            "Table I at 0.1%: linearised P {:.2}% [0.5, 3], Q {:.2}% [4, 15]; adapted P {:.2}% [0.5, 3], Q {:.2}% [3, 12]; adapted Q <= linearised Q: {}",
            pct(e.rrmse_p_lin),
            pct(e.rrmse_q_lin),
            pct(e.rrmse_p_adapted),
            pct(e.rrmse_q_adapted),
            e.rrmse_q_adapted <= e.rrmse_q_lin
        ),
    );
    let ok3 = pct(e.rrmse_i_re) < 1.0 && within(e.rrmse_i_im, 3.0, 12.0);
    rep.line(
        "3",
        ok3,
        format!(
            "Table II: current real part {:.2}% (< 1), imaginary part {:.2}% [3, 12]",
            pct(e.rrmse_i_re),
            pct(e.rrmse_i_im)
        ),
    );
}

fn criterion_6a() -> (bool, String) {
    let y = build_admittance(&ieee33()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = VoltageState {
            v: (0..33).map(|_| rng.random_range(0.9..1.1)).collect(),
            theta: (0..33).map(|_| rng.random_range(-0.1..0.1)).collect(),
        };
        let lin = linearized_powers(&y, &s).unwrap();
        let ad = adapted_constraint_powers(&y, &s).unwrap();
        let (dp, dq) = constraint_difference(&y, &s).unwrap();
        for h in 0..33 {
            worst = worst
                .max((dp[h] - (lin.p[h] - ad.p[h]).abs()).abs())
                .max((dq[h] - (lin.q[h] - ad.q[h]).abs()).abs());
        }
    }
    (worst <= 1e-12, format!("Eq. (16) identity on 1000 random states: max deviation {worst:.2e} (<= 1e-12)"))
}

fn criterion_6b() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let (v, theta, s_eps, s_delta) = (1.02, 0.6, 8e-3, 5e-3);
    let n = 100_000;
    let eps = Normal::new(0.0, s_eps).unwrap();
    let delta = Normal::new(0.0, s_delta).unwrap();
    let (c0, d0) = (v * f64::cos(theta), v * f64::sin(theta));
    let draws: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let vm = v + eps.sample(&mut rng);
            let th = theta + delta.sample(&mut rng);
            (vm * th.cos() - c0, vm * th.sin() - d0)
        })
        .collect();
    let mean = |f: &dyn Fn(&(f64, f64)) -> f64| draws.iter().map(f).sum::<f64>() / n as f64;
    let (mc, md) = (mean(&|d| d.0), mean(&|d| d.1));
    let xx = mean(&|d| (d.0 - mc).powi(2));
    let yy = mean(&|d| (d.1 - md).powi(2));
    let xy = mean(&|d| (d.0 - mc) * (d.1 - md));
    let c = polar_covariance_to_cartesian(v, theta, s_eps * s_eps, s_delta * s_delta);
    let worst = [(xx, c.xx), (yy, c.yy), (xy, c.xy)]
        .iter()
        .map(|(e, m)| ((e - m) / m).abs())
        .fold(0.0, f64::max);
    (worst < 0.05, format!("Monte-Carlo covariance (1e5 draws): worst relative deviation {:.2}% (< 5%)", 100.0 * worst))
}

fn criterion_6c() -> (bool, String) {
    let (truth, cfg) = common::two_node_truth(50, 63);
    let mut worst: f64 = 0.0;
    for mode in [PhaseMode::WithPhase, PhaseMode::Phaseless] {
        let ms = common::prepared(&truth, 0.01, mode, &cfg);
        let problem = MleProblem::new(&ms, &EstimatorConfig::for_mode(mode)).unwrap();
        let x = problem.initial_guess().unwrap().map(|c| c * 1.05);
        let g = problem.profile_gradient(&x).unwrap();
        let fd = DVector::from_fn(x.len(), |j, _| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            (problem.profile_objective(&xp).unwrap() - problem.profile_objective(&xm).unwrap()) / 2e-6
        });
        worst = worst.max((&g - &fd).norm() / g.norm());
    }
    (worst < 1e-4, format!("2-node gradient vs central differences: relative error {worst:.2e} (< 1e-4)"))
}

fn criterion_6e(cfg: &ExperimentConfig) -> (bool, String) {
    let truth = simulate_truth(cfg).unwrap();
    let profiles = generate_load_profiles(&truth.network, cfg.n_samples, cfg.sigma_load_rel, cfg.seed);
    let slack = truth.network.slack_index();
    let mut worst: f64 = 0.0;
    for (state, target) in truth.states.states.iter().zip(&profiles) {
        let got = exact_powers(&truth.y, state).unwrap();
        for h in (0..got.len()).filter(|&h| h != slack) {
            worst = worst.max((got.p[h] - target.p[h]).abs()).max((got.q[h] - target.q[h]).abs());
        }
    }
    (
        worst < 1e-10,
        format!("Newton-Raphson power balance on all {} samples: max residual {worst:.2e} pu (< 1e-10)", profiles.len()),
    )
}

fn criterion_6f() -> (bool, String) {
    let (truth, cfg) = common::two_node_truth(50, 23);
    let ms = common::prepared(&truth, 0.01, PhaseMode::WithPhase, &cfg);
    let mut ecfg = EstimatorConfig::for_mode(PhaseMode::WithPhase);
    ecfg.rel_tol = 1e-12;
    let est = mle_estimate(&ms, &ecfg).unwrap();
    let f_mle = common::oracle_profile_objective(&ms, &est.y_hat);
    let start = gridid_core::estimation::ols_estimate(&ms, true).unwrap();
    let scale = start.camax();
    let (p, f_grid) = common::brute_force_minimum(
        |y| common::oracle_profile_objective(&ms, y),
        common::pack2(&start),
        0.5 * scale,
        1e-9 * scale,
    );
    let rel = (&est.y_hat - common::unpack2(&p)).norm() / common::unpack2(&p).norm();
    let ok = f_mle <= f_grid * (1.0 + 1e-9) && f_mle - f_grid <= 12.592;
    (
        ok,
        format!("2-node, 3 complex parameters: MLE objective {f_mle:.6} vs grid optimum {f_grid:.6} (within the 95% region), |dY|/|Y| = {rel:.1e}"),
    )
}

fn main() {
    let mut rep = Report { passed: 0, total: 0 };
    let cfg = shipped_config();

    criterion_1(&mut rep, &cfg);
    criteria_2_3(&mut rep, &cfg);

    let tmp = tempfile::tempdir().unwrap();
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.noise_levels = LEVELS.to_vec();
    sweep_cfg.methods = Method::ALL.to_vec();
    sweep_cfg.output_dir = tmp.path().to_path_buf();
    let start = Instant::now();
    let sweep = cmd_sweep(&sweep_cfg).unwrap();
    let sweep_secs = start.elapsed().as_secs_f64();
    for c in &sweep.cells {
        match &c.outcome {
            Ok((_, r)) => println!(
                "  sweep {:<17} level {:<7} rrmse_y {:.4} false positives {:>4} ({:.1} s)",
                c.method.name(),
                c.noise_level,
                r.rrmse_y,
                r.sparsity_false_positives,
                c.seconds
            ),
            Err(e) => println!("  sweep {:<17} level {:<7} failed: {e}", c.method.name(), c.noise_level),
        }
    }

    let gap = |l: f64| -> Option<f64> {
        Some(100.0 * (sweep.rrmse(l, Method::MlePhaseless)? - sweep.rrmse(l, Method::MleWithPhase)?))
    };
    let gaps: Vec<Option<f64>> = LEVELS.iter().map(|&l| gap(l)).collect();
    let gap_ok = gaps[..2].iter().all(|g| g.is_some_and(|g| (15.0..=45.0).contains(&g)));
    let order_ok = gaps.iter().all(|g| g.is_some_and(|g| g > 0.0));
    let fmt = |g: &Option<f64>| g.map_or("n/a".to_string(), |g| format!("{g:.1}"));
    rep.line(
        "4",
        gap_ok && order_ok,
        format!(
            "phaseless - with-phase MLE gap (pp) at 1e-4, 1e-3, 1e-2, 1e-1: {}, {}, {}, {} (first two in [15, 45]; all > 0)",
            fmt(&gaps[0]),
            fmt(&gaps[1]),
            fmt(&gaps[2]),
            fmt(&gaps[3])
        ),
    );

    let fp = |m: Method| {
        sweep
            .cell(1e-2, m)
            .and_then(|c| c.outcome.as_ref().ok())
            .map(|(_, r)| r.sparsity_false_positives)
    };
    let (fp_wp, fp_pl) = (fp(Method::MleWithPhase), fp(Method::MlePhaseless));
    rep.line(
        "5",
        matches!((fp_wp, fp_pl), (Some(a), Some(b)) if b > a),
        format!("false positives (> 1e-3 pu) at 1%: phaseless {fp_pl:?} vs with-phase {fp_wp:?} (phaseless strictly greater)"),
    );

    let mut worst_rise = f64::NEG_INFINITY;
    let mut runs = 0;
    for c in &sweep.cells {
        if let Ok((out, _)) = &c.outcome {
            if c.method.is_mle() {
                runs += 1;
                for w in out.trace.windows(2) {
                    worst_rise = worst_rise.max(w[1] - w[0]);
                }
            }
        }
    }
    let descent = (
        runs == 8 && worst_rise <= 1e-9,
        format!("objective descent on all {runs} MLE sweep runs: largest step change {worst_rise:.3e} (<= 1e-9)"),
    );
    let checks = [
        ("6a", criterion_6a()),
        ("6b", criterion_6b()),
        ("6c", criterion_6c()),
        ("6d", descent),
        ("6e", criterion_6e(&cfg)),
        ("6f", criterion_6f()),
    ];
    for (id, (ok, detail)) in &checks {
        println!("  {id} {}: {detail}", if *ok { "ok" } else { "failed" });
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1 .0).map(|c| c.0).collect();
    rep.line(
        "6",
        failed.is_empty(),
        if failed.is_empty() {
            "property suites 6a-6f all hold".to_string()
        } else {
            format!("property suites failing: {}", failed.join(", "))
        },
    );

    let failures = sweep.cells.iter().filter(|c| c.outcome.is_err()).count();
    rep.line(
        "7",
        sweep_secs < 600.0 && failures == 0,
        format!(
            "full sweep ({} cells, N = {}): {sweep_secs:.0} s (< 600 s), {failures} failed cells",
            sweep.cells.len(),
            sweep_cfg.n_samples
        ),
    );
    println!("acceptance: {}/{} criteria passed", rep.passed, rep.total);
}
