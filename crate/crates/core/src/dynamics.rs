//! Runtime diagnostics for the split `x_n = y_n + z_n` with `y_n = P_M(x_n)`.
//!
//! - [`decompose`] and [`robbins_monro_residuals`] rewrite a trajectory as a
//!   perturbed gradient recursion on the manifold.
//! - [`drift_probe`] estimates the one-step conditional drift of `|z|²`.
//! - [`rate_diagnostic`] and [`weighted_tail_diagnostic`] track the decay of
//!   the normal component over an ensemble of runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use thiserror::Error;

use crate::conditions::ConditionError;
use crate::functions::{GeneratorBuffer, PiecewiseSmoothFunction, SelectionRule};
use crate::geometry::{GeometryError, Manifold, SmoothFunction};
use crate::linalg::{norm, Vector};
use crate::rng::substream;
use crate::sgd::{distance_to_manifold, simulate, NoiseModel, SgdConfig, SgdError, StepSchedule, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("exponent a = {a} must lie in (0, {max})")]
    InvalidExponent { a: f64, max: f64 },
    #[error("angle constant must be positive, got {beta}")]
    AngleConditionFails { beta: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sgd(#[from] SgdError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
}

/// `y_n = P_M(x_n)` and `z_n = x_n - y_n` for `n < exit_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedTrajectory {
    pub dim: usize,
    pub ys: Vec<f64>,
    pub zs: Vec<f64>,
}

impl DecomposedTrajectory {
    pub fn len(&self) -> usize {
        self.ys.len().checked_div(self.dim).unwrap_or(0)
    }
    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
    pub fn y(&self, n: usize) -> &[f64] {
        &self.ys[n * self.dim..(n + 1) * self.dim]
    }
    pub fn z(&self, n: usize) -> &[f64] {
        &self.zs[n * self.dim..(n + 1) * self.dim]
    }
}

/// Splits the iterates that precede the exit from the ball.
pub fn decompose(traj: &Trajectory, m: &Manifold) -> Result<DecomposedTrajectory, DynamicsError> {
    let d = traj.dim;
    let len = traj.inside_len();
    let mut ys = Vec::with_capacity(len * d);
    let mut zs = Vec::with_capacity(len * d);
    for n in 0..len {
        let x = Vector::from_row_slice(traj.x(n));
        let y = m.project(&x)?;
        ys.extend_from_slice(y.as_slice());
        zs.extend(x.iter().zip(y.iter()).map(|(a, b)| a - b));
    }
    Ok(DecomposedTrajectory { dim: d, ys, zs })
}

/// `D(x) = ∇(F∘P_M)(c(x))` where `c` clamps `x` into `B(x*, r)`.
///
/// The clamp makes the field bounded while agreeing with `∇(F∘P_M)` on the ball.
#[derive(Clone, Debug)]
pub struct ClampedDrift<'a, F: SmoothFunction + ?Sized> {
    pub representative: &'a F,
    pub manifold: &'a Manifold,
    pub x_star: Vector,
    pub radius: f64,
}

impl<F: SmoothFunction + ?Sized> ClampedDrift<'_, F> {
    pub fn eval(&self, x: &Vector) -> Result<Vector, GeometryError> {
        let offset = x - &self.x_star;
        let n = offset.norm();
        let xc = if n > self.radius { &self.x_star + offset * (self.radius / n) } else { x.clone() };
        let p = self.manifold.project(&xc)?;
        let jac = self.manifold.projection_jacobian(&xc)?;
        Ok(jac.transpose() * self.representative.gradient(&p))
    }
}

/// Residual decomposition of `y_{n+1} - y_n = γ_n(-D(y_n) + η̃_n + ϱ_n + ϱ̃_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSeries {
    pub dim: usize,
    pub eta_tilde: Vec<f64>,
    pub rho: Vec<f64>,
    pub rho_tilde: Vec<f64>,
    /// `max_n |ϱ_n| / (γ_n (1 + |η_{n+1}|²))`.
    pub c_rho: f64,
    /// `max_n |ϱ̃_n| / (|z_n| (1 + |η_{n+1}|))`, with `0/0 = 0`.
    pub c_rho_tilde: f64,
    /// Largest `|γ_n(-D + η̃ + ϱ + ϱ̃) - (y_{n+1} - y_n)|` over the series.
    pub reconstruction_error: f64,
}

impl ResidualSeries {
    pub fn len(&self) -> usize {
        self.rho.len().checked_div(self.dim).unwrap_or(0)
    }
    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

/// Computes `η̃_n = P_{T_{y_n}M} η_{n+1}`, the Taylor remainder `ϱ_n` of the
/// projection, and `ϱ̃_n` as what is left over.
///
/// Numerators below the rounding floor `64ε(|y_{n+1}| + |y_n|)/γ_n` count as
/// exact zeros when forming `ĉ_ϱ̃`.
pub fn robbins_monro_residuals<D>(
    traj: &Trajectory,
    decomp: &DecomposedTrajectory,
    m: &Manifold,
    drift: D,
) -> Result<ResidualSeries, DynamicsError>
where
    D: Fn(&Vector) -> Result<Vector, GeometryError>,
{
    let d = traj.dim;
    let steps = decomp.len().saturating_sub(1);
    let mut out = ResidualSeries {
        dim: d,
        eta_tilde: Vec::with_capacity(steps * d),
        rho: Vec::with_capacity(steps * d),
        rho_tilde: Vec::with_capacity(steps * d),
        c_rho: 0.0,
        c_rho_tilde: 0.0,
        reconstruction_error: 0.0,
    };
    for n in 0..steps {
        let gamma = traj.gammas[n];
        let x = Vector::from_row_slice(traj.x(n));
        let x_next = Vector::from_row_slice(traj.x(n + 1));
        let y = Vector::from_row_slice(decomp.y(n));
        let y_next = Vector::from_row_slice(decomp.y(n + 1));
        let eta = Vector::from_row_slice(traj.eta(n));
        let eta_tilde = m.tangent_projector(&y)?.apply(&eta);
        let rho = m.projection_remainder(&x, &x_next)? / gamma;
        let dy = &y_next - &y;
        let d_y = drift(&y)?;
        let rho_tilde = &dy / gamma + &d_y - &eta_tilde - &rho;
        let rebuilt = (-&d_y + &eta_tilde + &rho + &rho_tilde) * gamma;
        out.reconstruction_error = out.reconstruction_error.max((rebuilt - &dy).norm());

        let eta_norm = eta.norm();
        out.c_rho = out.c_rho.max(rho.norm() / (gamma * (1.0 + eta_norm * eta_norm)));
        let floor = 64.0 * f64::EPSILON * (y_next.norm() + y.norm()) / gamma;
        let num = rho_tilde.norm();
        let z_norm = norm(decomp.z(n));
        let ratio = if num <= floor {
            0.0
        } else if z_norm == 0.0 {
            f64::INFINITY
        } else {
            num / (z_norm * (1.0 + eta_norm))
        };
        out.c_rho_tilde = out.c_rho_tilde.max(ratio);

        out.eta_tilde.extend_from_slice(eta_tilde.as_slice());
        out.rho.extend_from_slice(rho.as_slice());
        out.rho_tilde.extend_from_slice(rho_tilde.as_slice());
    }
    Ok(out)
}

/// One `(x, γ)` probe of the drift inequality.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftProbe {
    pub x: Vector,
    pub gamma: f64,
    pub z_norm: f64,
    /// Monte Carlo estimate of `E|z'|²`.
    pub lhs: f64,
    /// `|z|² - γβ|z| + Cγ²` with the user constant.
    pub bound: f64,
    /// `(E|z'|² - |z|² + γβ|z|) / γ²`.
    pub fitted_c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub beta: f64,
    pub user_c: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub probes: Vec<DriftProbe>,
    /// Largest per-probe fitted constant.
    pub fitted_c: f64,
    pub violations: usize,
}

impl DriftReport {
    /// Largest radius in `grid` such that no probe within that distance of
    /// `x_star` violates the bound. `None` if even the smallest fails.
    pub fn largest_clean_radius(&self, x_star: &Vector, grid: &[f64]) -> Option<f64> {
        grid.iter()
            .cloned()
            .filter(|r| self.probes.iter().filter(|p| (&p.x - x_star).norm() <= *r).all(|p| p.lhs <= p.bound))
            .fold(None, |best: Option<f64>, r| Some(best.map_or(r, |b| b.max(r))))
    }
}

/// Settings shared by every probe of [`drift_probe`].
#[derive(Clone, Debug)]
pub struct DriftSettings {
    pub noise: NoiseModel,
    pub rule: SelectionRule,
    pub beta: f64,
    pub user_c: f64,
    pub n_mc: usize,
    pub seed: u64,
}

/// Probe points `x* + s·u` for each normal offset `s` and direction `u`,
/// paired with every step size.
pub fn probe_grid(x_star: &Vector, normal: &Vector, offsets: &[f64], gammas: &[f64]) -> Vec<(Vector, f64)> {
    let u = normal / normal.norm();
    let mut grid = Vec::with_capacity(offsets.len() * gammas.len());
    for s in offsets {
        for g in gammas {
            grid.push((x_star + &u * *s, *g));
        }
    }
    grid
}

/// Estimates `E|z'|²` after one step from each probe by `n_mc` independent
/// replicas (probe `j` uses substream `j` of the seed) and compares it with
/// `|z|² - γβ|z| + Cγ²`.
pub fn drift_probe(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    probes: &[(Vector, f64)],
    settings: &DriftSettings,
) -> Result<DriftReport, DynamicsError> {
    if !(settings.beta > 0.0) {
        return Err(DynamicsError::AngleConditionFails { beta: settings.beta });
    }
    if settings.n_mc == 0 {
        return Err(DynamicsError::InvalidArgument(String::from("n_mc must be at least 1")));
    }
    settings.noise.validate(f.dim())?;
    let d = f.dim();
    let mut out = Vec::with_capacity(probes.len());
    let mut buf = GeneratorBuffer::new(d);
    let mut v = vec![0.0; d];
    let mut eta = vec![0.0; d];
    let mut x_next = vec![0.0; d];
    let mut scratch = Vec::new();
    for (j, (x, gamma)) in probes.iter().enumerate() {
        if x.len() != d {
            return Err(DynamicsError::InvalidArgument(format!("probe {j} has dimension {}", x.len())));
        }
        let z_norm = distance_to_manifold(m, x.as_slice())?;
        let mut noise_rng = substream(settings.seed, 2 * j as u64);
        let mut select_rng = substream(settings.seed, 2 * j as u64 + 1);
        let mut acc = 0.0;
        for _ in 0..settings.n_mc {
            f.select_into(x.as_slice(), settings.rule, &mut select_rng, &mut buf, &mut v);
            settings.noise.sample_into(&mut noise_rng, &mut eta, &mut scratch);
            for i in 0..d {
                x_next[i] = x[i] - gamma * v[i] + gamma * eta[i];
            }
            let zn = distance_to_manifold(m, &x_next)?;
            acc += zn * zn;
        }
        let lhs = acc / settings.n_mc as f64;
        let base = z_norm * z_norm - gamma * settings.beta * z_norm;
        out.push(DriftProbe {
            x: x.clone(),
            gamma: *gamma,
            z_norm,
            lhs,
            bound: base + settings.user_c * gamma * gamma,
            fitted_c: (lhs - base) / (gamma * gamma),
        });
    }
    let fitted_c = out.iter().map(|p| p.fitted_c).fold(f64::NEG_INFINITY, f64::max);
    let violations = out.iter().filter(|p| p.lhs > p.bound).count();
    Ok(DriftReport {
        beta: settings.beta,
        user_c: settings.user_c,
        n_mc: settings.n_mc,
        seed: settings.seed,
        probes: out,
        fitted_c,
        violations,
    })
}

/// Runs per ensemble chunk. Chunks are reduced in order, so the floating
/// point result does not depend on how chunks are scheduled.
pub const ENSEMBLE_CHUNK: usize = 8;

/// `|z_n|` for `n = 0..=N`, set to 0 from the exit index on.
pub fn z_norm_series(cfg: &SgdConfig, seed: u64) -> Result<Vec<f64>, DynamicsError> {
    let mut series = Vec::with_capacity(cfg.horizon + 1);
    let mut err = None;
    let mut outside = distance_to_manifold(&cfg.manifold, cfg.x0.as_slice()).map(|d| {
        series.push(d);
        false
    })?;
    let x_star = cfg.x_star.as_slice();
    if crate::linalg::dist(cfg.x0.as_slice(), x_star) > cfg.radius {
        series[0] = 0.0;
        outside = true;
    }
    let end = simulate(cfg, seed, |s| {
        if outside || crate::linalg::dist(s.x_next, x_star) > cfg.radius {
            outside = true;
            series.push(0.0);
            return;
        }
        match distance_to_manifold(&cfg.manifold, s.x_next) {
            Ok(v) => series.push(v),
            Err(e) => {
                err.get_or_insert(e);
                series.push(f64::NAN);
            }
        }
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    // a diverged run has left the ball for good
    series.resize(end.steps + 1, 0.0);
    series.resize(cfg.horizon + 1, 0.0);
    Ok(series)
}

/// Ensemble sums of `|z_n|` and `|z_n|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZEnsemble {
    pub n_runs: usize,
    pub sum_norm: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl ZEnsemble {
    pub fn new(len: usize) -> Self {
        Self { n_runs: 0, sum_norm: vec![0.0; len], sum_sq: vec![0.0; len] }
    }

    pub fn add_series(&mut self, series: &[f64]) {
        for (i, z) in series.iter().enumerate() {
            self.sum_norm[i] += z;
            self.sum_sq[i] += z * z;
        }
        self.n_runs += 1;
    }

    pub fn merge(&mut self, other: &ZEnsemble) {
        for (a, b) in self.sum_norm.iter_mut().zip(&other.sum_norm) {
            *a += b;
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *a += b;
        }
        self.n_runs += other.n_runs;
    }

    pub fn mean_norm(&self, n: usize) -> f64 {
        self.sum_norm[n] / self.n_runs as f64
    }

    pub fn mean_sq(&self, n: usize) -> f64 {
        self.sum_sq[n] / self.n_runs as f64
    }

    /// Ensemble of runs `first..first+count` (seeds `cfg.seed + i`).
    pub fn chunk(cfg: &SgdConfig, first: usize, count: usize) -> Result<Self, DynamicsError> {
        let mut e = ZEnsemble::new(cfg.horizon + 1);
        for i in first..first + count {
            e.add_series(&z_norm_series(cfg, cfg.seed.wrapping_add(i as u64))?);
        }
        Ok(e)
    }

    /// Sequential build with the canonical chunking.
    pub fn build(cfg: &SgdConfig, n_runs: usize) -> Result<Self, DynamicsError> {
        let mut total = ZEnsemble::new(cfg.horizon + 1);
        let mut first = 0;
        while first < n_runs {
            let count = ENSEMBLE_CHUNK.min(n_runs - first);
            total.merge(&ZEnsemble::chunk(cfg, first, count)?);
            first += count;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub a: f64,
    pub checkpoints: Vec<usize>,
    /// Ensemble mean of `n^a |z_n|²` at each checkpoint.
    pub values: Vec<f64>,
    /// Last value below the first.
    pub decreasing: bool,
}

/// Mean of `n^a |z_n|²` at the checkpoints, for `a ∈ (0, 2α - 1)`.
pub fn rate_diagnostic(
    ensemble: &ZEnsemble,
    alpha: f64,
    a: f64,
    checkpoints: &[usize],
) -> Result<RateReport, DynamicsError> {
    let max = 2.0 * alpha - 1.0;
    if !(a > 0.0 && a < max) {
        return Err(DynamicsError::InvalidExponent { a, max });
    }
    if let Some(n) = checkpoints.iter().find(|n| **n >= ensemble.sum_sq.len() || **n == 0) {
        return Err(DynamicsError::InvalidArgument(format!("checkpoint {n} outside 1..={}", ensemble.sum_sq.len() - 1)));
    }
    let values: Vec<f64> =
        checkpoints.iter().map(|n| Float::powf(*n as f64, a) * ensemble.mean_sq(*n)).collect();
    let decreasing = values.len() >= 2 && values[values.len() - 1] < values[0];
    Ok(RateReport { a, checkpoints: checkpoints.to_vec(), values, decreasing })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTailReport {
    pub n_grid: Vec<usize>,
    pub values: Vec<f64>,
    /// Strictly decreasing across the grid.
    pub decreasing: bool,
    /// Strictly increasing across the grid.
    pub increasing: bool,
}

/// `χ_n^{-1/2} Σ_{i=n}^{n_max} γ_i m_i` at each grid point, where `m_i` is
/// the mean of `|z_i|` and `χ_n` is the full infinite tail.
pub fn weighted_tail_diagnostic<M: Fn(usize) -> f64>(
    schedule: &StepSchedule,
    n_max: usize,
    mean_norm: M,
    n_grid: &[usize],
) -> Result<WeightedTailReport, DynamicsError> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(DynamicsError::InvalidArgument(String::from("n grid must be positive and strictly increasing")));
    }
    if *n_grid.last().unwrap() > n_max {
        return Err(DynamicsError::InvalidArgument(format!("grid exceeds the horizon {n_max}")));
    }
    let mut values = vec![0.0; n_grid.len()];
    let mut acc = 0.0;
    let mut k = n_grid.len();
    for i in (n_grid[0]..=n_max).rev() {
        acc += schedule.gamma(i as u64) * mean_norm(i);
        while k > 0 && n_grid[k - 1] == i {
            k -= 1;
            values[k] = acc / Float::sqrt(schedule.chi(i as u64));
        }
    }
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    Ok(WeightedTailReport { n_grid: n_grid.to_vec(), values, decreasing, increasing })
}
