//! Acceptance checks. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use saddlescape::commands::{default_normal, ensemble_parallel, monte_carlo_parallel, nonconvergence_parallel};
use saddlescape::{cli, parallel, parse_config, setup, ExperimentConfig};
use saddlescape_core::center_stable::{lyapunov_solve, pathwise_inequality_probe, simulate_abstract, ExperimentSettings};
use saddlescape_core::conditions::{
    apt_gap, classify_critical_point, estimate_angle_beta, estimate_sharpness, estimate_verdier_constant,
    estimate_weak_convexity_rho, ClassifierOptions, CriticalPointClass, Verdict,
};
use saddlescape_core::dynamics::{
    decompose, drift_probe, probe_grid, rate_diagnostic, robbins_monro_residuals, weighted_tail_diagnostic,
    ClampedDrift, DriftSettings, DynamicsError,
};
use saddlescape_core::functions::{
    builtin, double_abs, neg_abs, quad_abs, saddle_abs, separable, BuiltinParams, SelectionRule, CATALOG,
};
use saddlescape_core::geometry::{riem_gradient, riem_hessian};
use saddlescape_core::rng::{substream, uniform_in_box};
use saddlescape_core::sgd::{run_sgd, NoiseModel, SgdConfig, StepSchedule};
use saddlescape_core::{Matrix, Vector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_row_slice(xs)
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ExperimentConfig {
    let text = fs::read_to_string(config_dir().join(name)).expect("sample config exists");
    parse_config(&text).expect("sample config parses")
}

fn timed<T>(slowest: &mut Duration, run: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let value = run();
    *slowest = (*slowest).max(start.elapsed());
    value
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

// At (0.5, 0) only the pieces z >= 0 and z <= 0 are active. Their gradients
// are (-2y, 1) and (-2y, -1) = (-1, ±1), and the segment between them has
// its shortest point at (-1, 0). At the origin the generators are (0, ±1),
// so the minimum-norm element is 0.
fn clarke_oracle() -> Outcome {
    let f = saddle_abs();
    let start = Instant::now();
    let set = f.clarke_generators(&v(&[0.5, 0.0]));
    let mn = f.min_norm_subgradient(&v(&[0.5, 0.0]));
    let mn0 = f.min_norm_subgradient(&v(&[0.0, 0.0]));
    let elapsed = start.elapsed();
    let mut gens: Vec<(f64, f64)> = set.generators.iter().map(|g| (g[0], g[1])).collect();
    gens.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pass = gens == [(-1.0, -1.0), (-1.0, 1.0)]
        && mn == v(&[-1.0, 0.0])
        && mn0.iter().all(|x| *x == 0.0)
        && elapsed < Duration::from_millis(1);
    outcome(pass, format!("generators {gens:?}, min_norm {:?}, at 0 {:?}, {:.3} ms", mn.as_slice(), mn0.as_slice(), ms(elapsed)))
}

// On R × {0} the restriction is y ↦ -y², so the gradient at y = 0.5 is
// (-2·0.5, 0) and the Hessian is the constant -2.
fn riemannian_calculus() -> Outcome {
    let f = saddle_abs();
    let m = f.manifold().unwrap().clone();
    let rep = f.representative().unwrap();
    let start = Instant::now();
    let g = riem_gradient(rep, &m, &v(&[0.5, 0.0])).unwrap();
    let h = riem_hessian(rep, &m, &v(&[0.0, 0.0])).unwrap();
    let elapsed = start.elapsed();
    let pass = (g - v(&[-1.0, 0.0])).norm() <= 1e-8
        && h.shape() == (1, 1)
        && (h[(0, 0)] + 2.0).abs() <= 1e-4
        && elapsed < Duration::from_millis(10);
    outcome(pass, format!("hessian {:.8}, {:.3} ms", h[(0, 0)], ms(elapsed)))
}

// Off the line, saddle_abs has the single gradient (-2y, sgn z) and the unit
// normal is (0, sgn z), so every angle ratio is exactly 1. For neg_abs the
// gradient is (-2y, -sgn z) and every ratio is -1. The tangential part of a
// gradient at x = y + ρu differs from the one at y by 2ρ|u₁|, so Verdier
// ratios are 2|u₁| and their supremum is 2. The minimal subgradient norm is
// sqrt(1 + 4y²), which is between 1 and sqrt(1.04) in the ball of radius 0.1.
fn condition_certifiers() -> Outcome {
    let (r, n) = (0.1, 10_000);
    let f = saddle_abs();
    let m = f.manifold().unwrap().clone();
    let x = v(&[0.0, 0.0]);
    let mut slowest = Duration::ZERO;
    let beta = timed(&mut slowest, || estimate_angle_beta(&f, &m, &x, r, n, 0).unwrap().estimate);
    let g = neg_abs();
    let neg = timed(&mut slowest, || estimate_angle_beta(&g, g.manifold().unwrap(), &x, r, n, 0).unwrap());
    let neg_beta = neg.estimate;
    let verdier = timed(&mut slowest, || estimate_verdier_constant(&f, &m, &x, r, n, 0).unwrap().estimate);
    let sharp = timed(&mut slowest, || estimate_sharpness(&f, &m, &x, r, n, 0).unwrap().estimate);
    let pass = (0.999..=1.0).contains(&beta)
        && neg_beta <= -0.999
        && neg.verdict == Verdict::Fails
        && (1.9..=2.0).contains(&verdier)
        && (0.999..=1.05).contains(&sharp)
        && slowest < Duration::from_secs(1);
    outcome(
        pass,
        format!("beta {beta}, neg beta {neg_beta}, verdier {verdier}, sharpness {sharp}, slowest {:.1} ms", ms(slowest)),
    )
}

fn catalog_function(name: &str) -> saddlescape_core::functions::PiecewiseSmoothFunction {
    let params = BuiltinParams { a: vec![-1.0], b: vec![1.0, 0.5] };
    builtin(name, &params).unwrap()
}

// saddle_abs + ρ|x|² has y-part (ρ - 1)y², convex exactly when ρ >= 1. The
// kink -|y| in double_abs is concave, so no quadratic makes it convex.
fn weak_convexity_chain() -> Outcome {
    let start = Instant::now();
    let grid = [0.5, 1.0, 2.0];
    let wc = |f: &saddlescape_core::functions::PiecewiseSmoothFunction| {
        let x = f.critical_point().unwrap();
        let lo = x.map(|c| c - 0.1);
        let hi = x.map(|c| c + 0.1);
        estimate_weak_convexity_rho(f, &lo, &hi, &grid, 2000, 0).unwrap()
    };
    let saddle = wc(&saddle_abs());
    let double = wc(&double_abs());
    let mut chain = Vec::new();
    let mut chain_ok = true;
    for name in CATALOG {
        let f = catalog_function(name);
        if wc(&f).verdict != Verdict::Holds {
            continue;
        }
        let angle = estimate_angle_beta(&f, f.manifold().unwrap(), f.critical_point().unwrap(), 0.1, 2000, 0).unwrap();
        chain_ok &= angle.verdict == Verdict::Holds;
        chain.push(format!("{name}:{}", angle.verdict.as_str()));
    }
    let elapsed = start.elapsed();
    let pass = saddle.estimate == 1.0
        && double.verdict == Verdict::Fails
        && double.estimate == f64::INFINITY
        && chain_ok
        && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!("rho {}, double_abs {}, angle [{}], {:.2} s", saddle.estimate, double.verdict.as_str(), chain.join(" "), elapsed.as_secs_f64()),
    )
}

fn classifier() -> Outcome {
    let opts = ClassifierOptions { n_samples: 2000, seed: 11 };
    let classify = |f: saddlescape_core::functions::PiecewiseSmoothFunction| {
        classify_critical_point(&f, f.manifold().unwrap(), &v(&[0.0, 0.0]), 0.1, 1e-6, opts).unwrap()
    };
    let got = [classify(saddle_abs()), classify(double_abs()), classify(quad_abs())];
    let again = [classify(saddle_abs()), classify(double_abs()), classify(quad_abs())];
    let want =
        [CriticalPointClass::ActiveStrictSaddle, CriticalPointClass::SharplyRepulsive, CriticalPointClass::LocalMinCandidate];
    outcome(got == want && again == got, format!("{:?}", got.map(|c| c.as_str())))
}

// Restricted noise moves only z, so y stays at exactly 0 and the z-dynamics
// are pulled back to 0 by the |z| term.
fn escape_contrast(pool: &rayon::ThreadPool) -> Outcome {
    let start = Instant::now();
    let omni = setup::sgd_config(&load("saddle_abs.cfg")).unwrap();
    let restricted = setup::sgd_config(&load("saddle_abs_restricted.cfg")).unwrap();
    let a = monte_carlo_parallel(&omni, 200, pool).unwrap();
    let b = monte_carlo_parallel(&restricted, 200, pool).unwrap();
    let elapsed = start.elapsed();
    let diff = a.fraction_escaped - b.fraction_escaped;
    let pass = diff >= 0.9 && b.fraction_at_saddle == 1.0 && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "escaped {} vs {}, restricted at_saddle {}, {:.1} s",
            a.fraction_escaped,
            b.fraction_escaped,
            b.fraction_at_saddle,
            elapsed.as_secs_f64()
        ),
    )
}

fn drift_inequality() -> Outcome {
    let start = Instant::now();
    let f = saddle_abs();
    let m = f.manifold().unwrap().clone();
    let x_star = v(&[0.0, 0.0]);
    let sigma = 0.5;
    let c = 10.0 * (sigma * sigma + 1.0);
    let offsets: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
    let normal = default_normal(&m, &x_star).unwrap();
    let probes = probe_grid(&x_star, &normal, &offsets, &[1e-2, 1e-3]);
    let settings = DriftSettings {
        noise: NoiseModel::SphereUniform { sigma },
        rule: SelectionRule::MinNorm,
        beta: 1.0,
        user_c: c,
        n_mc: 10_000,
        seed: 0,
    };
    let report = drift_probe(&f, &m, &probes, &settings).unwrap();
    let elapsed = start.elapsed();
    let pass = report.probes.len() == 20
        && report.violations == 0
        && report.fitted_c <= c
        && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!("{} probes, {} violations, fitted C {:.4} <= {c}, {:.2} s", report.probes.len(), report.violations, report.fitted_c, elapsed.as_secs_f64()),
    )
}

fn rate_and_tail(pool: &rayon::ThreadPool) -> (Outcome, Outcome) {
    let sgd = setup::sgd_config(&load("rates.cfg")).unwrap();
    let ens = ensemble_parallel(&sgd, 100, pool).unwrap();
    let rate = rate_diagnostic(&ens, 0.7, 0.2, &[1_000, 100_000]).unwrap();
    let rejected = matches!(rate_diagnostic(&ens, 0.7, 0.5, &[1_000]), Err(DynamicsError::InvalidExponent { .. }));
    let ratio = rate.values[1] / rate.values[0];
    let rate_out = outcome(
        ratio <= 0.2 && rejected,
        format!("n=1e3 {:.3e}, n=1e5 {:.3e}, ratio {ratio:.3e}, a=0.5 rejected {rejected}", rate.values[0], rate.values[1]),
    );

    let grid = [1_000, 10_000, 50_000];
    let tail = weighted_tail_diagnostic(&sgd.schedule, sgd.horizon, |n| ens.mean_norm(n), &grid).unwrap();
    // With |z| held at 1 the series is n^{0.2}(N^{0.3} - n^{0.3}) up to
    // constants, which increases on the grid once N is far beyond 5·10⁴.
    let control = weighted_tail_diagnostic(&sgd.schedule, 10_000_000, |_| 1.0, &grid).unwrap();
    let tail_out = outcome(
        tail.decreasing && control.increasing,
        format!("tail [{}], constant control [{}]", sci(&tail.values), sci(&control.values)),
    );
    (rate_out, tail_out)
}

fn residuals() -> Outcome {
    let mut worst_rebuild: f64 = 0.0;
    let mut pass = true;
    let mut notes = Vec::new();
    let functions = [saddle_abs(), separable(&[-1.0, 0.5], &[1.0]).unwrap(), separable(&[-0.5], &[2.0, 1.0]).unwrap()];
    for (k, f) in functions.iter().enumerate() {
        let d = f.dim();
        let mut x0 = Vector::from_element(d, 0.05);
        x0[0] = 0.1;
        let schedule = StepSchedule::new(0.05, 0.7).unwrap();
        let cfg = SgdConfig::for_function(f.clone(), x0, schedule, NoiseModel::SphereUniform { sigma: 0.5 }, 5000, 0.5)
            .unwrap();
        let traj = run_sgd(&cfg, k as u64).unwrap();
        let m = f.manifold().unwrap().clone();
        let dec = decompose(&traj, &m).unwrap();
        let drift = ClampedDrift { representative: f.representative().unwrap(), manifold: &m, x_star: cfg.x_star.clone(), radius: 0.5 };
        let res = robbins_monro_residuals(&traj, &dec, &m, |y| drift.eval(y)).unwrap();
        let verdier = estimate_verdier_constant(f, &m, &cfg.x_star, 0.5, 10_000, 0).unwrap().estimate;
        worst_rebuild = worst_rebuild.max(res.reconstruction_error);
        pass &= res.reconstruction_error <= 1e-12 && res.c_rho == 0.0 && res.c_rho_tilde <= verdier + 0.1;
        notes.push(format!("{}: c_rho {} c_rho_tilde {:.3} verdier {:.3}", f.name(), res.c_rho, res.c_rho_tilde, verdier));
    }
    outcome(pass, format!("reconstruction {worst_rebuild:.1e}; {}", notes.join("; ")))
}

// For J = [[-1, 1], [0, -1]] the equation QJ + JᵀQ = -2I reads
// -2q₁₁ = -2, q₁₁ - 2q₁₂ = 0, 2q₁₂ - 2q₂₂ = -2, giving q₁₂ = 1/2, q₂₂ = 3/2.
fn lyapunov() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut definite = true;
    for k in 0..100u64 {
        let d = 1 + (k % 5) as usize;
        let mut rng = substream(2024, k);
        let entries = uniform_in_box(&mut rng, &Vector::from_element(d * d, -2.0), &Vector::from_element(d * d, 2.0));
        let a = Matrix::from_row_slice(d, d, entries.as_slice());
        let top = a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        let j = a - Matrix::identity(d, d) * (top + 0.1 + 0.01 * k as f64);
        let cert = lyapunov_solve(&j).unwrap();
        worst = worst.max(cert.residual);
        definite &= cert.lambda_min > 0.0;
    }
    let hand = lyapunov_solve(&Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0])).unwrap();
    let expected = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.5]);
    let hand_err = (&hand.q - &expected).amax();
    outcome(
        worst <= 1e-10 && definite && hand_err <= 1e-12,
        format!("max residual {worst:.1e}, all positive definite {definite}, hand case error {hand_err:.1e}"),
    )
}

fn center_stable(pool: &rayon::ThreadPool) -> Outcome {
    let mut fractions = Vec::new();
    for name in ["centerstable_omni.cfg", "centerstable_restricted.cfg"] {
        let cfg = load(name);
        let cs = &cfg.centerstable;
        let s = setup::center_stable(&cfg).unwrap();
        let settings = ExperimentSettings { l: cs.l, n_start: cs.n_start, epsilon: cs.epsilon, seed: cfg.seed };
        let stats = nonconvergence_parallel(&s.system, &s.run, &settings, 500, pool).unwrap();
        fractions.push(stats.fraction_converges);
    }
    let cfg = load("centerstable_omni.cfg").with_override("centerstable.horizon", "100000").unwrap();
    let s = setup::center_stable(&cfg).unwrap();
    let cert = lyapunov_solve(s.system.j_minus()).unwrap();
    let run = simulate_abstract(&s.system, &s.run, cfg.centerstable.l, cfg.centerstable.n_start, 0).unwrap();
    let probe = pathwise_inequality_probe(&s.system, &run, &cert);
    let pass = fractions == [0.0, 1.0]
        && probe.steps_checked >= 99_000
        && probe.violations_lower == 0
        && probe.violations_upper == 0;
    outcome(
        pass,
        format!(
            "omni converged {}/500, restricted converged {}/500, probe {} steps, violations {}+{}",
            (fractions[0] * 500.0).round(),
            (fractions[1] * 500.0).round(),
            probe.steps_checked,
            probe.violations_lower,
            probe.violations_upper
        ),
    )
}

// z(s) = 1/(s+1) and x(h) = z(99) + h, so on [0, 1] the gap
// 1/100 + h - 1/(100 + h) is largest at h = 1.
fn apt_demo() -> Outcome {
    let gap = apt_gap(1.0, 99.0).unwrap();
    let want = 1.0 + 1.0 / 100.0 - 1.0 / 101.0;
    let late = apt_gap(1.0, 1e4).unwrap();
    outcome((gap - want).abs() <= 1e-9 && late >= 1.0 - 0.01, format!("gap(1, 99) = {gap}, gap(1, 1e4) = {late}"))
}

const DETERMINISM_CONFIG: &str = "\
function.name = saddle_abs
point.x0 = 0, 0.3
schedule.c = 0.05
schedule.alpha = 0.7
noise.kind = sphere
noise.sigma = 0.5
sgd.horizon = 3000
sgd.radius = 0.5
run.seed = 5
run.runs = 20
conditions.samples = 500
conditions.segments = 200
drift.n_mc = 500
rates.checkpoints = 100, 1000
rates.tail_grid = 100, 1000, 2000
centerstable.j_plus = 1
centerstable.j_minus = -1
centerstable.g = 0.1:2
centerstable.delta_scale = 0.05
centerstable.sigma = 0.5
centerstable.y0 = 0.2, 0.004
centerstable.horizon = 3000
";

fn run_cli(args: &[&str]) -> i32 {
    let mut out = Vec::new();
    let mut err = Vec::new();
    cli::main_with_args(std::iter::once("saddlescape").chain(args.iter().copied()), &mut out, &mut err)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("det.cfg");
    fs::write(&cfg_path, DETERMINISM_CONFIG).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let mut mismatched = Vec::new();
    let mut csvs = 0;
    for cmd in ["run", "mc", "conditions", "drift", "rates", "centerstable"] {
        let mut snaps = Vec::new();
        for (tag, workers) in [("a", "1"), ("b", "4"), ("c", "4")] {
            let out = tmp.path().join(format!("{cmd}_{tag}"));
            let code = run_cli(&[cmd, "-c", cfg, "--workers", workers, "--out", out.to_str().unwrap()]);
            if code != 0 {
                mismatched.push(format!("{cmd} exit {code}"));
            }
            snaps.push(snapshot(&out));
        }
        csvs += snaps[0].iter().filter(|(n, _)| n.ends_with(".csv")).count();
        if snaps[0].is_empty() || snaps[0] != snaps[1] || snaps[1] != snaps[2] {
            mismatched.push(cmd.to_string());
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("6 commands, {csvs} csv files, workers 1/4/4 rerun, mismatches {mismatched:?}"),
    )
}

fn main() {
    let pool = parallel::pool(8).unwrap();
    let (rate, tail) = rate_and_tail(&pool);
    let results = [
        ("clarke oracle exactness", clarke_oracle()),
        ("riemannian calculus", riemannian_calculus()),
        ("condition certifiers vs closed forms", condition_certifiers()),
        ("weak convexity chain", weak_convexity_chain()),
        ("critical point classifier", classifier()),
        ("escape contrast", escape_contrast(&pool)),
        ("drift inequality", drift_inequality()),
        ("normal-component rate", rate),
        ("weighted tail", tail),
        ("robbins-monro residuals", residuals()),
        ("lyapunov certificates", lyapunov()),
        ("center-stable toy system", center_stable(&pool)),
        ("apt demo", apt_demo()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {}", i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
