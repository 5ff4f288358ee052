//! One function per CLI subcommand. Each writes its files into the output
//! directory and returns a one-line summary.

use std::path::{Path, PathBuf};

use rayon::ThreadPool;
use saddlescape_core::center_stable::{
    aggregate_nonconvergence, lyapunov_solve, nonconvergence_run, pathwise_inequality_probe, simulate_abstract,
    AbstractConfig, ConstructedSystem, ExperimentSettings, NonconvergenceStats, ProbeReport,
};
use saddlescape_core::conditions::{
    apt_gap, classify_critical_point, estimate_angle_beta, estimate_sharpness, estimate_verdier_constant,
    estimate_weak_convexity_rho, ClassifierOptions, ConditionReport, Witness,
};
use saddlescape_core::dynamics::{
    drift_probe, probe_grid, rate_diagnostic, weighted_tail_diagnostic, DriftSettings, ZEnsemble, ENSEMBLE_CHUNK,
};
use saddlescape_core::geometry::Manifold;
use saddlescape_core::rng::uniform_in_ball;
use saddlescape_core::sgd::{aggregate, epsilon_saddle, run_sgd, run_summary, EscapeStats, RunSummary, SgdConfig};
use saddlescape_core::Vector;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::output::{columns, json, num, write_file, Csv, Provenance};
use crate::parallel::map_chunks;
use crate::setup;

/// Resolved inputs shared by every subcommand.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: PathBuf,
    pub pool: &'a ThreadPool,
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn write(dir: &Path, files: &mut Vec<PathBuf>, name: &str, contents: &str) -> Result<(), LabError> {
    files.push(write_file(dir, name, contents)?);
    Ok(())
}

fn opt_usize(v: Option<usize>) -> String {
    v.map_or_else(String::new, |n| n.to_string())
}

pub fn run(ctx: &Context<'_>) -> Result<Outcome, LabError> {
    let sgd = setup::sgd_config(ctx.cfg)?;
    let t = run_sgd(&sgd, sgd.seed)?;
    let prov = Provenance::new(ctx.cfg);
    let d = t.dim;
    let mut header = vec!["n".to_string(), "gamma".to_string()];
    header.extend(columns("x", d));
    header.extend(["f".to_string(), "dist_M".to_string()]);
    let mut csv = Csv::new(&prov, &header);
    for n in 0..=t.steps() {
        let mut row = vec![n.to_string(), num(sgd.schedule.gamma(n as u64 + 1))];
        row.extend(t.x(n).iter().map(|v| num(*v)));
        row.push(num(t.f_values[n]));
        row.push(num(t.dist_m.get(n).copied().unwrap_or(f64::NAN)));
        csv.row(&row);
    }
    let mut files = Vec::new();
    write(&ctx.out, &mut files, "trajectory.csv", &csv.into_string())?;
    let summary = format!(
        "run: {} steps, exit_index={}, diverged_at={}, final f={}",
        t.steps(),
        opt_usize(t.exit_index),
        opt_usize(t.diverged_at),
        t.f_values[t.steps()]
    );
    Ok(Outcome { files, summary })
}

/// Monte Carlo over runs `0..n_runs` in chunks of [`ENSEMBLE_CHUNK`].
pub fn monte_carlo_parallel(sgd: &SgdConfig, n_runs: usize, pool: &ThreadPool) -> Result<EscapeStats, LabError> {
    if n_runs == 0 {
        return Err(LabError::InvalidArgument("at least one run is required".into()));
    }
    sgd.validate()?;
    let eps = epsilon_saddle(sgd);
    let chunks = map_chunks(pool, n_runs, ENSEMBLE_CHUNK, |first, count| {
        (first..first + count).map(|i| run_summary(sgd, i as u64, eps)).collect::<Result<Vec<_>, _>>()
    })?;
    Ok(aggregate(chunks.concat(), eps))
}

#[derive(Serialize)]
struct RunRow {
    run_index: usize,
    seed: u64,
    exit_index: Option<usize>,
    diverged_at: Option<usize>,
    final_distance: f64,
    final_f: f64,
    tail_dist_mean: f64,
    outcome: &'static str,
}

#[derive(Serialize)]
struct McSummary {
    n_runs: usize,
    n_escaped: usize,
    n_at_saddle: usize,
    n_at_other_critical: usize,
    fraction_escaped: f64,
    fraction_at_saddle: f64,
    fraction_at_other_critical: f64,
    mean_final_f: f64,
    epsilon_saddle: f64,
}

fn count(stats: &EscapeStats, outcome: &str) -> usize {
    stats.runs.iter().filter(|r| r.outcome.as_str() == outcome).count()
}

fn run_row(r: &RunSummary) -> RunRow {
    RunRow {
        run_index: r.run_index as usize,
        seed: r.seed,
        exit_index: r.exit_index,
        diverged_at: r.diverged_at,
        final_distance: r.final_distance,
        final_f: r.final_f,
        tail_dist_mean: r.tail_dist_mean,
        outcome: r.outcome.as_str(),
    }
}

pub fn mc(ctx: &Context<'_>) -> Result<Outcome, LabError> {
    let sgd = setup::sgd_config(ctx.cfg)?;
    let stats = monte_carlo_parallel(&sgd, ctx.cfg.runs, ctx.pool)?;
    let prov = Provenance::new(ctx.cfg);
    let header: Vec<String> =
        ["run", "seed", "exit_index", "diverged_at", "final_distance", "final_f", "tail_dist_mean", "outcome"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let mut csv = Csv::new(&prov, &header);
    for r in &stats.runs {
        let row = run_row(r);
        csv.row(&[
            row.run_index.to_string(),
            row.seed.to_string(),
            opt_usize(row.exit_index),
            opt_usize(row.diverged_at),
            num(row.final_distance),
            num(row.final_f),
            num(row.tail_dist_mean),
            row.outcome.to_string(),
        ]);
    }
    let summary = McSummary {
        n_runs: stats.n_runs,
        n_escaped: count(&stats, "escaped"),
        n_at_saddle: count(&stats, "at_saddle"),
        n_at_other_critical: count(&stats, "other"),
        fraction_escaped: stats.fraction_escaped,
        fraction_at_saddle: stats.fraction_at_saddle,
        fraction_at_other_critical: stats.fraction_at_other_critical,
        mean_final_f: stats.mean_final_f,
        epsilon_saddle: stats.epsilon_saddle,
    };
    let mut files = Vec::new();
    write(&ctx.out, &mut files, "mc_runs.csv", &csv.into_string())?;
    write(&ctx.out, &mut files, "mc.json", &json(&prov, ctx.cfg, &summary))?;
    let line = format!(
        "mc: {} runs, escaped {}, at saddle {}, other {}",
        stats.n_runs, stats.fraction_escaped, stats.fraction_at_saddle, stats.fraction_at_other_critical
    );
    Ok(Outcome { files, summary: line })
}

#[derive(Serialize)]
struct WitnessJson {
    kind: &'static str,
    points: Vec<Vec<f64>>,
    t: Option<f64>,
    rho: Option<f64>,
}

#[derive(Serialize)]
struct ReportJson {
    kind: &'static str,
    estimate: f64,
    extremal: f64,
    verdict: &'static str,
    n_samples: usize,
    radius: f64,
    seed: u64,
    witness: Option<WitnessJson>,
}

fn report_json(r: &ConditionReport) -> ReportJson {
    let v = |x: &Vector| x.iter().copied().collect::<Vec<f64>>();
    let witness = r.witness.as_ref().map(|w| match w {
        Witness::Point(x) => WitnessJson { kind: "point", points: vec![v(x)], t: None, rho: None },
        Witness::Pair { x, y } => WitnessJson { kind: "pair", points: vec![v(x), v(y)], t: None, rho: None },
        Witness::Segment { x1, x2, t, rho } => {
            WitnessJson { kind: "segment", points: vec![v(x1), v(x2)], t: Some(*t), rho: Some(*rho) }
        }
    });
    ReportJson {
        kind: r.kind.as_str(),
        estimate: r.estimate,
        extremal: r.extremal,
        verdict: r.verdict.as_str(),
        n_samples: r.n_samples,
        radius: r.radius,
        seed: r.seed,
        witness,
    }
}

#[derive(Serialize)]
struct ConditionsJson {
    function: String,
    manifold: String,
    x_star: Vec<f64>,
    reports: Vec<ReportJson>,
    classification: Option<&'static str>,
    classification_error: Option<String>,
}

pub fn conditions(ctx: &Context<'_>) -> Result<Outcome, LabError> {
    let cfg = ctx.cfg;
    let f = setup::function(cfg)?;
    let m = setup::manifold(cfg, &f)?;
    let xs = setup::x_star(cfg, &f)?;
    let c = &cfg.conditions;
    let n = c.samples;
    let lo = xs.map(|v| v - c.radius);
    let hi = xs.map(|v| v + c.radius);
    let reports = vec![
        estimate_sharpness(&f, &m, &xs, c.radius, n, cfg.seed)?,
        estimate_angle_beta(&f, &m, &xs, c.radius, n, cfg.seed.wrapping_add(1))?,
        estimate_verdier_constant(&f, &m, &xs, c.radius, n, cfg.seed.wrapping_add(2))?,
        estimate_weak_convexity_rho(&f, &lo, &hi, &c.rho_grid, c.segments, cfg.seed.wrapping_add(3))?,
    ];
    let opts = ClassifierOptions { n_samples: n.clamp(1, 2000), seed: cfg.seed };
    let (class, class_err) = match classify_critical_point(&f, &m, &xs, c.radius, c.tol, opts) {
        Ok(k) => (Some(k.as_str()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let prov = Provenance::new(cfg);
    let mut csv = Csv::new(&prov, &["check".to_string(), "index".to_string(), "ratio".to_string()]);
    for r in &reports {
        for (i, v) in r.ratios.iter().enumerate() {
            csv.row(&[r.kind.as_str().to_string(), i.to_string(), num(*v)]);
        }
    }
    let doc = ConditionsJson {
        function: f.name().to_string(),
        manifold: m.describe(),
        x_star: xs.iter().copied().collect(),
        reports: reports.iter().map(report_json).collect(),
        classification: class,
        classification_error: class_err,
    };
    let mut files = Vec::new();
    write(&ctx.out, &mut files, "ratios.csv", &csv.into_string())?;
    write(&ctx.out, &mut files, "conditions.json", &json(&prov, cfg, &doc))?;
    let verdicts: Vec<String> =
        reports.iter().map(|r| format!("{}={} ({})", r.kind.as_str(), r.estimate, r.verdict.as_str())).collect();
    let summary = format!("conditions: {}; class={}", verdicts.join(", "), class.unwrap_or("none"));
    Ok(Outcome { files, summary })
}

/// Unit vector maximizing the normal component at `x*` among the coordinate
/// axes.
pub fn default_normal(m: &Manifold, x_star: &Vector) -> Result<Vector, LabError> {
    let d = x_star.len();
    let p = m.tangent_projector(&m.project(x_star)?)?;
    let mut best = Vector::zeros(d);
    for i in 0..d {
        let mut e = Vector::zeros(d);
        e[i] = 1.0;
        let normal = &e - p.apply(&e);
        if normal.norm() > best.norm() + 1e-12 {
            best = normal;
        }
    }
    if best.norm() < 1e-12 {
        return Err(LabError::InvalidArgument("the manifold has no normal direction; set drift.normal".into()));
    }
    Ok(&best / best.norm())
}

#[derive(Serialize)]
struct DriftJson {
    beta: f64,
    user_c: f64,
    n_mc: usize,
    n_probes: usize,
    fitted_c: f64,
    violations: usize,
    largest_clean_offset: Option<f64>,
}

pub fn drift(ctx: &Context<'_>) -> Result<Outcome, LabError> {
    let cfg = ctx.cfg;
    let f = setup::function(cfg)?;
    let m = setup::manifold(cfg, &f)?;
    let xs = setup::x_star(cfg, &f)?;
    let noise = setup::noise(cfg, f.dim())?;
    let ds = &cfg.drift;
    let normal = match &ds.normal {
        Some(v) => Vector::from_row_slice(v),
        None => default_normal(&m, &xs)?,
    };
    let sigma = noise.scale();
    let settings = DriftSettings {
        noise,
        rule: cfg.rule,
        beta: ds.beta,
        user_c: ds.c.unwrap_or(10.0 * (sigma * sigma + 1.0)),
        n_mc: ds.n_mc,
        seed: cfg.seed,
    };
    let probes = probe_grid(&xs, &normal, &ds.offsets, &ds.gammas);
    let report = drift_probe(&f, &m, &probes, &settings)?;
    let prov = Provenance::new(cfg);
    let mut header = columns("probe_x", f.dim());
    header.extend(["gamma", "lhs", "bound", "fitted_C"].iter().map(|s| s.to_string()));
    let mut csv = Csv::new(&prov, &header);
    for p in &report.probes {
        let mut row: Vec<String> = p.x.iter().map(|v| num(*v)).collect();
        row.extend([num(p.gamma), num(p.lhs), num(p.bound), num(p.fitted_c)]);
        csv.row(&row);
    }
    let mut offsets = ds.offsets.clone();
    offsets.sort_by(f64::total_cmp);
    let doc = DriftJson {
        beta: report.beta,
        user_c: report.user_c,
        n_mc: report.n_mc,
        n_probes: report.probes.len(),
        fitted_c: report.fitted_c,
        violations: report.violations,
        largest_clean_offset: report.largest_clean_radius(&xs, &offsets),
    };
    let mut files = Vec::new();
    write(&ctx.out, &mut files, "drift.csv", &csv.into_string())?;
    write(&ctx.out, &mut files, "drift.json", &json(&prov, cfg, &doc))?;
    let summary = format!(
        "drift: {} probes, {} violations, fitted C = {} (bound C = {})",
        doc.n_probes, doc.violations, doc.fitted_c, doc.user_c
    );
    Ok(Outcome { files, summary })
}

/// Ensemble of `|z_n|` series over runs `0..n_runs`, merged in chunk order.
pub fn ensemble_parallel(sgd: &SgdConfig, n_runs: usize, pool: &ThreadPool) -> Result<ZEnsemble, LabError> {
    if n_runs == 0 {
        return Err(LabError::InvalidArgument("at least one run is required".into()));
    }
    let chunks = map_chunks(pool, n_runs, ENSEMBLE_CHUNK, |first, count| ZEnsemble::chunk(sgd, first, count))?;
    let mut total = ZEnsemble::new(sgd.horizon + 1);
    for c in &chunks {
        total.merge(c);
    }
    Ok(total)
}

#[derive(Serialize)]
struct RatesJson {
    n_runs: usize,
    a: f64,
    checkpoints: Vec<usize>,
    mean_scaled_z2: Vec<f64>,
    rate_decreasing: bool,
    tail_grid: Vec<usize>,
    weighted_tail: Vec<f64>,
    tail_decreasing: bool,
}

pub fn rates(ctx: &Context<'_>) -> Result<Outcome, LabError> {
    let cfg = ctx.cfg;
    let sgd = setup::sgd_config(cfg)?;
    let rs = &cfg.rates;
    // validate the exponent before spending time on the ensemble
    rate_diagnostic(&ZEnsemble::new(2), sgd.schedule.alpha(), rs.a, &[1])?;
    let ens = ensemble_parallel(&sgd, cfg.runs, ctx.pool)?;
    let rate = rate_diagnostic(&ens, sgd.schedule.alpha(), rs.a, &rs.checkpoints)?;
    let tail = weighted_tail_diagnostic(&sgd.schedule, sgd.horizon, |n| ens.mean_norm(n), &rs.tail_grid)?;
    let prov = Provenance::new(cfg);
    let mut csv = Csv::new(&prov, &["n".to_string(), "mean_scaled_z2".to_string()]);
    for (n, v) in rate.checkpoints.iter().zip(&rate.values) {
        csv.row(&[n.to_string(), num(*v)]);
    }
    let mut tail_csv = Csv::new(&prov, &["n".to_string(), "weighted_tail".to_string()]);
    for (n, v) in tail.n_grid.iter().zip(&tail.values) {
        tail_csv.row(&[n.to_string(), num(*v)]);
    }
    let doc = RatesJson {
        n_runs: cfg.runs,
        a: rate.a,
        checkpoints: rate.checkpoints.clone(),
        mean_scaled_z2: rate.values.clone(),
        rate_decreasing: rate.decreasing,
        tail_grid: tail.n_grid.clone(),
        weighted_tail: tail.values.clone(),
        tail_decreasing: tail.decreasing,
    };
    let mut files = Vec::new();
    write(&ctx.out, &mut files, "rates.csv", &csv.into_string())?;
    write(&ctx.out, &mut files, "tail.csv", &tail_csv.into_string())?;
    write(&ctx.out, &mut files, "rates.json", &json(&prov, cfg, &doc))?;
    let summary = format!(
        "rates: n^a|z|^2 {:?} (decreasing={}), weighted tail {:?} (decreasing={})",
        rate.values, rate.decreasing, tail.values, tail.decreasing
    );
    Ok(Outcome { files, summary })
}

/// Nonconvergence experiment over seeds `settings.seed + i`.
pub fn nonconvergence_parallel(
    sys: &ConstructedSystem,
    run: &AbstractConfig,
    settings: &ExperimentSettings,
    n_runs: usize,
    pool: &ThreadPool,
) -> Result<NonconvergenceStats, LabError> {
    if n_runs == 0 {
        return Err(LabError::InvalidArgument("at least one run is required".into()));
    }
    let cert = lyapunov_solve(sys.j_minus())?;
    let chis = run.schedule.chi_table(run.horizon as u64 + 1);
    let chunks = map_chunks(pool, n_runs, ENSEMBLE_CHUNK, |first, count| {
        (first..first + count)
            .map(|i| nonconvergence_run(sys, run, &cert, &chis, settings, i as u64))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(aggregate_nonconvergence(chunks.concat()))
}

#[derive(Serialize)]
struct SplitJson {
    d_plus: usize,
    d_minus: usize,
    residual: f64,
}

#[derive(Serialize)]
struct CertificateJson {
    q: Vec<Vec<f64>>,
    residual: f64,
    lambda_min: f64,
    lambda_max: f64,
}

#[derive(Serialize)]
struct ProbeJson {
    steps_checked: usize,
    violations_lower: usize,
    max_a_norm: f64,
    a_norm_bound: f64,
    steps_below_threshold: usize,
    fitted_c: f64,
    c_theory: f64,
    violations_upper: usize,
    perturbation_norm: f64,
}

impl From<&ProbeReport> for ProbeJson {
    fn from(p: &ProbeReport) -> Self {
        Self {
            steps_checked: p.steps_checked,
            violations_lower: p.violations_lower,
            max_a_norm: p.max_a_norm,
            a_norm_bound: p.a_norm_bound,
            steps_below_threshold: p.steps_below_threshold,
            fitted_c: p.fitted_c,
            c_theory: p.c_theory,
            violations_upper: p.violations_upper,
            perturbation_norm: p.perturbation_norm,
        }
    }
}

#[derive(Serialize)]
struct CenterStableJson {
    split: Option<SplitJson>,
    certificate: CertificateJson,
    invariance_defect: Option<f64>,
    contract_flags: Vec<String>,
    n_runs: usize,
    l: f64,
    n_start: usize,
    epsilon: f64,
    fraction_tau_finite: f64,
    fraction_stays_above: f64,
    fraction_converges: f64,
    probe: ProbeJson,
}

pub fn centerstable(ctx: &Context<'_>) -> Result<Outcome, LabError> {
    let cfg = ctx.cfg;
    let cs = &cfg.centerstable;
    let setup = setup::center_stable(cfg)?;
    let sys = &setup.system;
    let cert = lyapunov_solve(sys.j_minus())?;
    let settings = ExperimentSettings { l: cs.l, n_start: cs.n_start, epsilon: cs.epsilon, seed: cfg.seed };
    let stats = nonconvergence_parallel(sys, &setup.run, &settings, cfg.runs, ctx.pool)?;

    let prov = Provenance::new(cfg);
    let mut files = Vec::new();
    let mut probe = None;
    for i in 0..cs.csv_runs.max(1).min(cfg.runs) {
        let seed = cfg.seed.wrapping_add(i as u64);
        let run = simulate_abstract(sys, &setup.run, cs.l, cs.n_start, seed)?;
        if i == 0 {
            probe = Some(pathwise_inequality_probe(sys, &run, &cert));
        }
        if i < cs.csv_runs {
            let mut header = vec!["n".to_string(), "gamma".to_string(), "chi".to_string(), "U".to_string()];
            header.extend(columns("w_minus", run.d_minus));
            header.push("tau_flag".to_string());
            let mut csv = Csv::new(&prov, &header);
            for k in 0..run.u.len() {
                let n = k + 1;
                let gamma = setup.run.schedule.gamma(n as u64);
                let mut row = vec![n.to_string(), num(gamma), num(run.chis[k]), num(run.u[k])];
                row.extend(run.w(k).iter().map(|v| num(*v)));
                row.push(u8::from(run.tau.is_some_and(|t| n >= t)).to_string());
                csv.row(&row);
            }
            write(&ctx.out, &mut files, &format!("centerstable_run_{i}.csv"), &csv.into_string())?;
        }
    }
    let probe = probe.expect("at least one run is simulated");
    let invariance_defect = (sys.d_plus() > 0).then(|| {
        let mut rng = saddlescape_core::rng::substream(cfg.seed, u64::MAX);
        let starts: Vec<Vector> =
            (0..20).map(|_| uniform_in_ball(&mut rng, &Vector::zeros(sys.d_plus()), 0.5)).collect();
        sys.invariance_defect(&starts, 1.0, 1e-3)
    });
    let doc = CenterStableJson {
        split: setup.split.as_ref().map(|s| SplitJson { d_plus: s.d_plus(), d_minus: s.d_minus(), residual: s.residual }),
        certificate: CertificateJson {
            q: cert.q.row_iter().map(|r| r.iter().copied().collect()).collect(),
            residual: cert.residual,
            lambda_min: cert.lambda_min,
            lambda_max: cert.lambda_max,
        },
        invariance_defect,
        contract_flags: setup.run.contract_flags(),
        n_runs: stats.n_runs,
        l: cs.l,
        n_start: cs.n_start,
        epsilon: cs.epsilon,
        fraction_tau_finite: stats.fraction_tau_finite,
        fraction_stays_above: stats.fraction_stays_above,
        fraction_converges: stats.fraction_converges,
        probe: ProbeJson::from(&probe),
    };
    write(&ctx.out, &mut files, "centerstable.json", &json(&prov, cfg, &doc))?;
    let summary = format!(
        "centerstable: {} runs, P(tau<inf)={}, P(stays above)={}, P(converges)={}, probe violations={}",
        stats.n_runs,
        stats.fraction_tau_finite,
        stats.fraction_stays_above,
        stats.fraction_converges,
        probe.violations_lower + probe.violations_upper
    );
    Ok(Outcome { files, summary })
}

/// Gap between the limit-compatible curve and the flow on a window.
pub fn apt(big_t: f64, t: f64) -> Result<f64, LabError> {
    Ok(apt_gap(big_t, t)?)
}
