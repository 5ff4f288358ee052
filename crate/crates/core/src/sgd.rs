//! The stochastic subgradient recursion `x_{n+1} = x_n - γ_n v_n + γ_n η_{n+1}`.
//!
//! Step `n` (0-based) uses `γ_{n+1}` from the schedule, the subgradient
//! `v_n ∈ ∂f(x_n)` and the noise draw `η_{n+1}`. Each run owns two streams
//! derived from its seed: stream 0 for noise and stream 1 for randomized
//! subgradient selection.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::functions::{FunctionError, GeneratorBuffer, PiecewiseSmoothFunction, SelectionRule};
use crate::geometry::{GeometryError, Manifold};
use crate::linalg::{dist, orthonormality_defect, Matrix, Vector};
use crate::rng::{fill_sphere, substream, Stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SgdError {
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("tail sum of squared steps diverges for alpha = 1/2")]
    DivergentChi,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error(transparent)]
    Function(#[from] FunctionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Below this index [`chi`] sums terms explicitly before switching to the
/// Euler–Maclaurin tail.
const CHI_EXPLICIT: u64 = 100;

/// `Σ_{i >= n} c²/i^{2α}` for `n >= 1`.
///
/// Exact terms up to index 99, then `∫_N^∞ g + g(N)/2 - g'(N)/12 + g'''(N)/720`
/// with `g(x) = c² x^{-2α}`; the neglected remainder is `O(N^{-2α-5})`.
pub fn chi(c: f64, alpha: f64, n: u64) -> Result<f64, SgdError> {
    if alpha <= 0.5 {
        return Err(SgdError::DivergentChi);
    }
    let n = n.max(1);
    let start = n.max(CHI_EXPLICIT);
    let mut head = 0.0;
    // smallest terms first
    for i in (n..start).rev() {
        head += gamma_raw(c, alpha, i).powi(2);
    }
    Ok(head + chi_tail(c, alpha, start as f64))
}

fn chi_tail(c: f64, alpha: f64, big_n: f64) -> f64 {
    let a2 = 2.0 * alpha;
    let c2 = c * c;
    let integral = c2 * Float::powf(big_n, 1.0 - a2) / (a2 - 1.0);
    let g = c2 * Float::powf(big_n, -a2);
    let g1 = -a2 * c2 * Float::powf(big_n, -a2 - 1.0);
    let g3 = -a2 * (a2 + 1.0) * (a2 + 2.0) * c2 * Float::powf(big_n, -a2 - 3.0);
    integral + g / 2.0 - g1 / 12.0 + g3 / 720.0
}

#[inline]
fn gamma_raw(c: f64, alpha: f64, n: u64) -> f64 {
    if alpha == 1.0 {
        c / n as f64
    } else {
        c / Float::powf(n as f64, alpha)
    }
}

/// Step sizes `γ_n = c / n^α` with `α ∈ (1/2, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    c: f64,
    alpha: f64,
}

impl StepSchedule {
    pub fn new(c: f64, alpha: f64) -> Result<Self, SgdError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(SgdError::InvalidSchedule(format!("c must be positive, got {c}")));
        }
        if alpha == 0.5 {
            return Err(SgdError::DivergentChi);
        }
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(SgdError::InvalidSchedule(format!("alpha must lie in (0.5, 1], got {alpha}")));
        }
        Ok(Self { c, alpha })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `γ_n`, for `n >= 1`.
    pub fn gamma(&self, n: u64) -> f64 {
        gamma_raw(self.c, self.alpha, n.max(1))
    }

    /// `χ_n = Σ_{i >= n} γ_i²`.
    pub fn chi(&self, n: u64) -> f64 {
        chi(self.c, self.alpha, n).expect("alpha validated at construction")
    }

    /// `[χ_1, ..., χ_n_max]` by backward recursion from the tail at `n_max`.
    pub fn chi_table(&self, n_max: u64) -> Vec<f64> {
        let n_max = n_max.max(1);
        let mut table = vec![0.0; n_max as usize];
        let mut acc = self.chi(n_max);
        table[n_max as usize - 1] = acc;
        for n in (1..n_max).rev() {
            acc += self.gamma(n).powi(2);
            table[n as usize - 1] = acc;
        }
        table
    }
}

/// Zero-mean noise laws for `η_{n+1}`, drawn i.i.d. and independent of `x_n`.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    Zero,
    /// Uniform on the sphere of radius `sigma`.
    SphereUniform { sigma: f64 },
    /// Independent `N(0, σ²)` coordinates, each conditioned on `|η_i| <= bound`.
    TruncGaussian { sigma: f64, bound: f64 },
    /// Independent `±σ` coordinates.
    Rademacher { sigma: f64 },
    /// Inner draw projected onto the span of the orthonormal `basis` columns.
    SubspaceRestricted { inner: Box<NoiseModel>, basis: Matrix },
}

impl NoiseModel {
    pub fn validate(&self, d: usize) -> Result<(), SgdError> {
        match self {
            NoiseModel::Zero => Ok(()),
            NoiseModel::SphereUniform { sigma } | NoiseModel::Rademacher { sigma } => positive(*sigma, "sigma"),
            NoiseModel::TruncGaussian { sigma, bound } => {
                positive(*sigma, "sigma")?;
                positive(*bound, "bound")
            }
            NoiseModel::SubspaceRestricted { inner, basis } => {
                if basis.nrows() != d {
                    return Err(SgdError::InvalidNoise(format!(
                        "subspace basis has {} rows, expected {d}",
                        basis.nrows()
                    )));
                }
                if orthonormality_defect(basis) > 1e-12 {
                    return Err(SgdError::InvalidNoise(String::from("subspace basis is not orthonormal")));
                }
                inner.validate(d)
            }
        }
    }

    /// Scale `σ` used in the saddle tolerance.
    pub fn scale(&self) -> f64 {
        match self {
            NoiseModel::Zero => 0.0,
            NoiseModel::SphereUniform { sigma }
            | NoiseModel::Rademacher { sigma }
            | NoiseModel::TruncGaussian { sigma, .. } => *sigma,
            NoiseModel::SubspaceRestricted { inner, .. } => inner.scale(),
        }
    }

    /// Closed-form bound `B` on `E‖η‖⁴` in dimension `d`.
    pub fn fourth_moment_bound(&self, d: usize) -> f64 {
        let d = d as f64;
        match self {
            NoiseModel::Zero => 0.0,
            NoiseModel::SphereUniform { sigma } => sigma.powi(4),
            NoiseModel::Rademacher { sigma } => d * d * sigma.powi(4),
            NoiseModel::TruncGaussian { sigma, bound } => {
                ((d * d + 2.0 * d) * sigma.powi(4)).min(d * d * bound.powi(4))
            }
            NoiseModel::SubspaceRestricted { inner, .. } => inner.fourth_moment_bound(d as usize),
        }
    }

    /// One draw into `out`. `scratch` is only used by restricted noise.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64], scratch: &mut Vec<f64>) {
        match self {
            NoiseModel::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            NoiseModel::SphereUniform { sigma } => fill_sphere(rng, *sigma, out),
            NoiseModel::Rademacher { sigma } => {
                for o in out.iter_mut() {
                    *o = if rng.random::<bool>() { *sigma } else { -*sigma };
                }
            }
            NoiseModel::TruncGaussian { sigma, bound } => {
                for o in out.iter_mut() {
                    *o = loop {
                        let g: f64 = StandardNormal.sample(rng);
                        let g = g * sigma;
                        if g.abs() <= *bound {
                            break g;
                        }
                    };
                }
            }
            NoiseModel::SubspaceRestricted { inner, basis } => {
                inner.sample_into(rng, out, scratch);
                let k = basis.ncols();
                scratch.clear();
                scratch.resize(k, 0.0);
                for (j, s) in scratch.iter_mut().enumerate() {
                    *s = basis.column(j).iter().zip(out.iter()).map(|(b, x)| b * x).sum();
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..k).map(|j| basis[(i, j)] * scratch[j]).sum();
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, d: usize) -> Vector {
        let mut out = Vector::zeros(d);
        self.sample_into(rng, out.as_mut_slice(), &mut Vec::new());
        out
    }
}

fn positive(v: f64, what: &str) -> Result<(), SgdError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SgdError::InvalidNoise(format!("{what} must be positive, got {v}")))
    }
}

/// Coordinates of `v` in the orthonormal basis of a subspace, `Bᵀv`.
pub fn subspace_component(v: &Vector, basis: &Matrix) -> Vector {
    basis.transpose() * v
}

#[derive(Clone, Debug)]
pub struct SgdConfig {
    pub function: PiecewiseSmoothFunction,
    pub manifold: Manifold,
    pub x_star: Vector,
    pub x0: Vector,
    pub schedule: StepSchedule,
    pub noise: NoiseModel,
    pub rule: SelectionRule,
    pub horizon: usize,
    pub radius: f64,
    pub seed: u64,
}

impl SgdConfig {
    /// Uses the function's own manifold and critical point annotation.
    pub fn for_function(
        function: PiecewiseSmoothFunction,
        x0: Vector,
        schedule: StepSchedule,
        noise: NoiseModel,
        horizon: usize,
        radius: f64,
    ) -> Result<Self, SgdError> {
        let manifold = function
            .manifold()
            .cloned()
            .ok_or_else(|| SgdError::InvalidConfig(format!("`{}` has no manifold annotation", function.name())))?;
        let x_star = function
            .critical_point()
            .cloned()
            .ok_or_else(|| SgdError::InvalidConfig(format!("`{}` has no critical point annotation", function.name())))?;
        let cfg = Self {
            function,
            manifold,
            x_star,
            x0,
            schedule,
            noise,
            rule: SelectionRule::MinNorm,
            horizon,
            radius,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SgdError> {
        let d = self.function.dim();
        for (what, len) in [("x0", self.x0.len()), ("x_star", self.x_star.len()), ("manifold", self.manifold.ambient_dim())] {
            if len != d {
                return Err(SgdError::InvalidConfig(format!("{what} has dimension {len}, function has {d}")));
            }
        }
        if !(self.radius > 0.0) {
            return Err(SgdError::InvalidConfig(format!("radius must be positive, got {}", self.radius)));
        }
        if self.horizon == 0 {
            return Err(SgdError::InvalidConfig(String::from("horizon must be at least 1")));
        }
        self.noise.validate(d)
    }

    pub fn dim(&self) -> usize {
        self.function.dim()
    }
}

/// Data of one step handed to observers.
pub struct StepView<'a> {
    /// 0-based step index `n`.
    pub n: usize,
    pub gamma: f64,
    pub x: &'a [f64],
    pub v: &'a [f64],
    /// `η_{n+1}`.
    pub eta: &'a [f64],
    pub x_next: &'a [f64],
}

/// How a simulation ended.
#[derive(Clone, Debug, PartialEq)]
pub struct RunEnd {
    pub final_x: Vec<f64>,
    /// Number of completed steps.
    pub steps: usize,
    /// First `n` with `|x_n - x*| > r`.
    pub exit_index: Option<usize>,
    /// Last finite index when the iterates overflowed.
    pub diverged_at: Option<usize>,
}

/// Runs the recursion for `cfg.horizon` steps, calling `observe` after each.
///
/// Allocation-free per step apart from minimum-norm selections at points
/// with several generators.
pub fn simulate<F: FnMut(&StepView<'_>)>(cfg: &SgdConfig, seed: u64, mut observe: F) -> RunEnd {
    let d = cfg.dim();
    let mut noise_rng: Stream = substream(seed, 0);
    let mut select_rng: Stream = substream(seed, 1);
    let mut x = cfg.x0.as_slice().to_vec();
    let mut x_next = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut eta = vec![0.0; d];
    let mut scratch = Vec::new();
    let mut buf = GeneratorBuffer::new(d);
    let x_star = cfg.x_star.as_slice();
    let mut exit_index = if dist(&x, x_star) > cfg.radius { Some(0) } else { None };
    let mut diverged_at = None;
    let mut steps = 0;
    for n in 0..cfg.horizon {
        let gamma = cfg.schedule.gamma(n as u64 + 1);
        cfg.function.select_into(&x, cfg.rule, &mut select_rng, &mut buf, &mut v);
        cfg.noise.sample_into(&mut noise_rng, &mut eta, &mut scratch);
        let mut finite = true;
        for i in 0..d {
            x_next[i] = x[i] - gamma * v[i] + gamma * eta[i];
            finite &= x_next[i].is_finite();
        }
        if !finite {
            diverged_at = Some(n);
            break;
        }
        observe(&StepView { n, gamma, x: &x, v: &v, eta: &eta, x_next: &x_next });
        core::mem::swap(&mut x, &mut x_next);
        steps = n + 1;
        if exit_index.is_none() && dist(&x, x_star) > cfg.radius {
            exit_index = Some(n + 1);
        }
    }
    RunEnd { final_x: x, steps, exit_index, diverged_at }
}

/// Distance to `M` without allocating for affine manifolds.
pub fn distance_to_manifold(m: &Manifold, x: &[f64]) -> Result<f64, GeometryError> {
    match m {
        Manifold::Affine(a) => {
            let base = a.base();
            let basis = a.basis();
            let mut sq: f64 = x.iter().zip(base.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            for j in 0..basis.ncols() {
                let c: f64 = basis.column(j).iter().zip(x.iter().zip(base.iter())).map(|(b, (p, q))| b * (p - q)).sum();
                sq -= c * c;
            }
            Ok(Float::sqrt(sq.max(0.0)))
        }
        Manifold::Implicit(_) => m.distance(&Vector::from_row_slice(x)),
    }
}

/// A recorded run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    /// `x_0, ..., x_N` flattened.
    pub xs: Vec<f64>,
    /// `v_0, ..., v_{N-1}` flattened.
    pub vs: Vec<f64>,
    /// `η_1, ..., η_N` flattened.
    pub etas: Vec<f64>,
    /// `γ_1, ..., γ_N`.
    pub gammas: Vec<f64>,
    pub f_values: Vec<f64>,
    /// `dist(x_n, M)` for `n < exit_index`.
    pub dist_m: Vec<f64>,
    pub exit_index: Option<usize>,
    pub diverged_at: Option<usize>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of recorded steps `N`.
    pub fn steps(&self) -> usize {
        self.gammas.len()
    }
    pub fn x(&self, n: usize) -> &[f64] {
        &self.xs[n * self.dim..(n + 1) * self.dim]
    }
    pub fn v(&self, n: usize) -> &[f64] {
        &self.vs[n * self.dim..(n + 1) * self.dim]
    }
    /// `η_{n+1}`, the noise used in step `n`.
    pub fn eta(&self, n: usize) -> &[f64] {
        &self.etas[n * self.dim..(n + 1) * self.dim]
    }
    /// Number of leading iterates inside the ball.
    pub fn inside_len(&self) -> usize {
        self.exit_index.unwrap_or(self.steps() + 1).min(self.steps() + 1)
    }
}

/// Runs the recursion and records everything.
pub fn run_sgd(cfg: &SgdConfig, seed: u64) -> Result<Trajectory, SgdError> {
    cfg.validate()?;
    let d = cfg.dim();
    let n = cfg.horizon;
    let mut t = Trajectory {
        dim: d,
        xs: Vec::with_capacity((n + 1) * d),
        vs: Vec::with_capacity(n * d),
        etas: Vec::with_capacity(n * d),
        gammas: Vec::with_capacity(n),
        f_values: Vec::new(),
        dist_m: Vec::new(),
        exit_index: None,
        diverged_at: None,
        seed,
    };
    t.xs.extend_from_slice(cfg.x0.as_slice());
    let end = simulate(cfg, seed, |s| {
        t.xs.extend_from_slice(s.x_next);
        t.vs.extend_from_slice(s.v);
        t.etas.extend_from_slice(s.eta);
        t.gammas.push(s.gamma);
    });
    t.exit_index = end.exit_index;
    t.diverged_at = end.diverged_at;
    t.f_values = (0..=t.steps()).map(|k| cfg.function.evaluate_slice(t.x(k))).collect::<Result<_, _>>()?;
    t.dist_m = (0..t.inside_len()).map(|k| distance_to_manifold(&cfg.manifold, t.x(k))).collect::<Result<_, _>>()?;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    Escaped,
    AtSaddle,
    Other,
}

impl RunOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunOutcome::Escaped => "escaped",
            RunOutcome::AtSaddle => "at_saddle",
            RunOutcome::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run_index: u64,
    pub seed: u64,
    pub exit_index: Option<usize>,
    pub diverged_at: Option<usize>,
    pub final_distance: f64,
    pub final_f: f64,
    /// Mean of `dist(x_n, M)` over the last tenth of the steps.
    pub tail_dist_mean: f64,
    pub outcome: RunOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeStats {
    pub n_runs: usize,
    pub fraction_escaped: f64,
    pub fraction_at_saddle: f64,
    pub fraction_at_other_critical: f64,
    /// Mean final value over runs that stayed finite.
    pub mean_final_f: f64,
    pub epsilon_saddle: f64,
    pub runs: Vec<RunSummary>,
}

/// `ε = 2 γ_N (L + σ)` with `L` the sampled Lipschitz bound on `B(x*, r)`.
pub fn epsilon_saddle(cfg: &SgdConfig) -> f64 {
    let mut rng = substream(cfg.seed, u64::MAX);
    let lip = cfg.function.lipschitz_bound_on(&cfg.x_star, cfg.radius, 1000, &mut rng);
    2.0 * cfg.schedule.gamma(cfg.horizon as u64) * (lip + cfg.noise.scale())
}

/// Runs and classifies run `index` (seed `cfg.seed + index`).
pub fn run_summary(cfg: &SgdConfig, index: u64, epsilon: f64) -> Result<RunSummary, SgdError> {
    let seed = cfg.seed.wrapping_add(index);
    let tail_start = cfg.horizon - cfg.horizon / 10;
    let mut tail_sum = 0.0;
    let mut tail_count = 0usize;
    let mut err = None;
    let end = simulate(cfg, seed, |s| {
        if s.n + 1 >= tail_start && err.is_none() {
            match distance_to_manifold(&cfg.manifold, s.x_next) {
                Ok(v) => {
                    tail_sum += v;
                    tail_count += 1;
                }
                Err(e) => err = Some(e),
            }
        }
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    let final_distance = dist(&end.final_x, cfg.x_star.as_slice());
    let final_f = if end.diverged_at.is_some() { f64::NAN } else { cfg.function.evaluate_slice(&end.final_x)? };
    let tail_dist_mean = if tail_count > 0 { tail_sum / tail_count as f64 } else { f64::INFINITY };
    let outcome = if end.diverged_at.is_some() || final_distance > cfg.radius {
        RunOutcome::Escaped
    } else if final_distance <= epsilon && tail_dist_mean <= epsilon {
        RunOutcome::AtSaddle
    } else {
        RunOutcome::Other
    };
    Ok(RunSummary {
        run_index: index,
        seed,
        exit_index: end.exit_index,
        diverged_at: end.diverged_at,
        final_distance,
        final_f,
        tail_dist_mean,
        outcome,
    })
}

/// Folds per-run summaries, in the given order, into escape statistics.
pub fn aggregate(runs: Vec<RunSummary>, epsilon_saddle: f64) -> EscapeStats {
    let n = runs.len();
    let count = |o: RunOutcome| runs.iter().filter(|r| r.outcome == o).count() as f64 / n.max(1) as f64;
    let finite: Vec<f64> = runs.iter().map(|r| r.final_f).filter(|f| f.is_finite()).collect();
    let mean_final_f =
        if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    EscapeStats {
        n_runs: n,
        fraction_escaped: count(RunOutcome::Escaped),
        fraction_at_saddle: count(RunOutcome::AtSaddle),
        fraction_at_other_critical: count(RunOutcome::Other),
        mean_final_f,
        epsilon_saddle,
        runs,
    }
}

/// Sequential Monte Carlo over seeds `cfg.seed + i`, `i < n_runs`.
pub fn monte_carlo(cfg: &SgdConfig, n_runs: usize) -> Result<EscapeStats, SgdError> {
    cfg.validate()?;
    if n_runs == 0 {
        return Err(SgdError::InvalidConfig(String::from("at least one run is required")));
    }
    let eps = epsilon_saddle(cfg);
    let runs = (0..n_runs as u64).map(|i| run_summary(cfg, i, eps)).collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(runs, eps))
}
