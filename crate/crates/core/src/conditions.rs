//! Sampled certifiers for the geometric conditions around a critical point.
//!
//! Every certifier draws sample `i` from its own substream of the seed, so
//! reports are reproducible and independent of evaluation order. Verdicts are
//! estimates: they carry the sample count, radius and seed they were made with.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::functions::{FunctionError, GeneratorBuffer, PiecewiseSmoothFunction};
use crate::geometry::{riem_gradient, riem_hessian, GeometryError, Manifold};
use crate::linalg::{dot, Vector};
use crate::rng::{substream, uniform_in_ball, uniform_in_box};

pub const SHARPNESS_FLOOR: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-6;
const VERDIER_STABILITY: f64 = 1.05;
const CONVEXITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConditionError {
    #[error("point is not critical: |min-norm subgradient| = {norm:e}")]
    NotCritical { norm: f64 },
    #[error("function `{0}` has no smooth representative on its manifold")]
    MissingRepresentative(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Function(#[from] FunctionError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionKind {
    Sharpness,
    Angle,
    Verdier,
    WeakConvexity,
}

impl ConditionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionKind::Sharpness => "sharpness",
            ConditionKind::Angle => "angle",
            ConditionKind::Verdier => "verdier",
            ConditionKind::WeakConvexity => "weak_convexity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Sample(s) at which the extremal value was attained.
#[derive(Clone, Debug, PartialEq)]
pub enum Witness {
    Point(Vector),
    Pair { x: Vector, y: Vector },
    Segment { x1: Vector, x2: Vector, t: f64, rho: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    pub kind: ConditionKind,
    /// The certified constant (sharpness infimum, β, C or ρ).
    pub estimate: f64,
    /// Value reproduced by re-evaluating the witness. Equals `estimate`
    /// except for weak convexity, where it is the worst convexity gap.
    pub extremal: f64,
    pub n_samples: usize,
    pub radius: f64,
    pub seed: u64,
    pub witness: Option<Witness>,
    pub verdict: Verdict,
    /// Every sampled ratio, in sample order.
    pub ratios: Vec<f64>,
}

fn sample_off_manifold<R: Rng>(
    rng: &mut R,
    m: &Manifold,
    center: &Vector,
    r: f64,
) -> Result<(Vector, Vector, f64), ConditionError> {
    for _ in 0..10_000 {
        let x = uniform_in_ball(rng, center, r);
        let p = m.project(&x)?;
        let dist = (&x - &p).norm();
        if dist >= r * 1e-3 {
            return Ok((x, p, dist));
        }
    }
    Err(ConditionError::InvalidArgument(String::from("ball lies within r·1e-3 of the manifold")))
}

fn check_radius(r: f64) -> Result<(), ConditionError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(ConditionError::InvalidArgument(alloc::format!("radius must be positive, got {r}")));
    }
    Ok(())
}

fn sharpness_value(f: &PiecewiseSmoothFunction, x: &Vector) -> f64 {
    f.min_norm_subgradient(x).norm()
}

fn angle_value(f: &PiecewiseSmoothFunction, x: &Vector, p: &Vector, buf: &mut GeneratorBuffer) -> f64 {
    let normal = x - p;
    let n = normal.norm();
    f.generators_into(x.as_slice(), buf);
    (0..buf.len()).map(|i| dot(buf.get(i), normal.as_slice()) / n).fold(f64::INFINITY, f64::min)
}

fn verdier_value(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    x: &Vector,
    y: &Vector,
    buf: &mut GeneratorBuffer,
) -> Result<f64, ConditionError> {
    let rep = f.representative().ok_or_else(|| ConditionError::MissingRepresentative(f.name().into()))?;
    let proj = m.tangent_projector(y)?;
    let grad_m = riem_gradient(rep, m, y)?;
    let dist = (x - y).norm();
    f.generators_into(x.as_slice(), buf);
    let mut worst = 0.0f64;
    for i in 0..buf.len() {
        let v = Vector::from_row_slice(buf.get(i));
        worst = worst.max((proj.apply(&v) - &grad_m).norm() / dist);
    }
    Ok(worst)
}

fn convexity_gap(f: &PiecewiseSmoothFunction, x1: &Vector, x2: &Vector, t: f64, rho: f64) -> Result<f64, ConditionError> {
    let g = |x: &Vector| -> Result<f64, ConditionError> { Ok(f.evaluate(x)? + rho * x.norm_squared()) };
    let mid = x1 * t + x2 * (1.0 - t);
    Ok(g(&mid)? - (t * g(x1)? + (1.0 - t) * g(x2)?))
}

/// Infimum of `dist(0, ∂f(x))` over sampled `x ∈ B(x*, r)` with
/// `dist(x, M) >= r·1e-3`.
///
/// Holds when the infimum exceeds [`SHARPNESS_FLOOR`] and is not driven by
/// the samples closest to `M`: the minimum over the nearest decile must be at
/// least half the minimum over the remaining samples. Smooth functions whose
/// gradient vanishes on `M` fail the second test even though the distance
/// cutoff keeps their infimum positive.
pub fn estimate_sharpness(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    x_star: &Vector,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ConditionReport, ConditionError> {
    check_radius(r)?;
    let mut rows: Vec<(f64, f64, Vector)> = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = substream(seed, i as u64);
        let (x, _, dist) = sample_off_manifold(&mut rng, m, x_star, r)?;
        rows.push((dist, sharpness_value(f, &x), x));
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (estimate, witness) = argmin(&rows);
    let verdict = if n_samples == 0 {
        Verdict::Inconclusive
    } else if estimate <= SHARPNESS_FLOOR {
        Verdict::Fails
    } else {
        let (near, far) = split_nearest_decile(&rows);
        let near_min = near.iter().cloned().fold(f64::INFINITY, f64::min);
        let far_min = far.iter().cloned().fold(f64::INFINITY, f64::min);
        if far.is_empty() || near_min >= 0.5 * far_min {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    };
    Ok(ConditionReport {
        kind: ConditionKind::Sharpness,
        estimate,
        extremal: estimate,
        n_samples,
        radius: r,
        seed,
        witness: witness.map(Witness::Point),
        verdict,
        ratios,
    })
}

fn argmin(rows: &[(f64, f64, Vector)]) -> (f64, Option<Vector>) {
    let mut best = f64::INFINITY;
    let mut at = None;
    for (_, v, x) in rows {
        if *v < best {
            best = *v;
            at = Some(x.clone());
        }
    }
    (best, at)
}

/// Values of the samples with the smallest 10% of distances, and the rest.
fn split_nearest_decile(rows: &[(f64, f64, Vector)]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|a, b| rows[*a].0.total_cmp(&rows[*b].0));
    let cut = (rows.len() / 10).max(1);
    let near = order[..cut].iter().map(|i| rows[*i].1).collect();
    let far = order[cut..].iter().map(|i| rows[*i].1).collect();
    (near, far)
}

/// Angle ratios `min_v <v, x - P_M x> / |x - P_M x|` at the given points.
pub fn angle_ratios(f: &PiecewiseSmoothFunction, m: &Manifold, points: &[Vector]) -> Result<Vec<f64>, ConditionError> {
    let mut buf = GeneratorBuffer::new(f.dim());
    points
        .iter()
        .map(|x| {
            let p = m.project(x)?;
            Ok(angle_value(f, x, &p, &mut buf))
        })
        .collect()
}

/// Angle constant β: minimum over samples and generators of the normal
/// component ratio. Holds iff positive.
pub fn estimate_angle_beta(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    x_star: &Vector,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ConditionReport, ConditionError> {
    check_radius(r)?;
    let mut buf = GeneratorBuffer::new(f.dim());
    let mut rows = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut rng = substream(seed, i as u64);
        let (x, p, dist) = sample_off_manifold(&mut rng, m, x_star, r)?;
        rows.push((dist, angle_value(f, &x, &p, &mut buf), x));
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (estimate, witness) = argmin(&rows);
    let verdict = if n_samples == 0 {
        Verdict::Inconclusive
    } else if estimate > 0.0 {
        Verdict::Holds
    } else {
        Verdict::Fails
    };
    Ok(ConditionReport {
        kind: ConditionKind::Angle,
        estimate,
        extremal: estimate,
        n_samples,
        radius: r,
        seed,
        witness: witness.map(Witness::Point),
        verdict,
        ratios,
    })
}

/// Verdier constant: maximum of `|P_{T_y M} v - ∇_M f(y)| / |x - y|` over
/// pairs `y ∈ M`, `x` near `y`, and generators `v ∈ ∂f(x)`.
///
/// `y` is the projection of a uniform ball point; `x = y + ρu` with `u`
/// uniform on the sphere and `ρ` log-uniform in `[r·1e-4, r]`, rejected
/// unless `x` is in the ball. Holds iff the maximum over the nearest decile
/// of pairs is at most 1.05 times the maximum over the other pairs.
pub fn estimate_verdier_constant(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    x_star: &Vector,
    r: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<ConditionReport, ConditionError> {
    check_radius(r)?;
    let d = f.dim();
    let mut buf = GeneratorBuffer::new(d);
    let mut rows = Vec::with_capacity(n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    let (lo, hi) = (Float::ln(r * 1e-4), Float::ln(r));
    for i in 0..n_pairs {
        let mut rng = substream(seed, i as u64);
        let y = m.project(&uniform_in_ball(&mut rng, x_star, r))?;
        let mut x;
        let mut tries = 0;
        loop {
            let mut dir = alloc::vec![0.0; d];
            crate::rng::fill_sphere(&mut rng, 1.0, &mut dir);
            let rho = Float::exp(lo + (hi - lo) * rng.random::<f64>());
            x = Vector::from_iterator(d, y.iter().zip(&dir).map(|(a, b)| a + rho * b));
            tries += 1;
            if (&x - x_star).norm() <= r || tries > 1000 {
                break;
            }
        }
        let value = verdier_value(f, m, &x, &y, &mut buf)?;
        rows.push(((&x - &y).norm(), value, x.clone()));
        pairs.push((x, y));
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mut estimate = f64::NEG_INFINITY;
    let mut witness = None;
    for (k, v) in ratios.iter().enumerate() {
        if *v > estimate {
            estimate = *v;
            witness = Some(k);
        }
    }
    let verdict = if n_pairs < 20 {
        Verdict::Inconclusive
    } else {
        let (near, far) = split_nearest_decile(&rows);
        let near_max = near.iter().cloned().fold(0.0, f64::max);
        let far_max = far.iter().cloned().fold(0.0, f64::max);
        if near_max <= VERDIER_STABILITY * far_max || near_max == 0.0 {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    };
    Ok(ConditionReport {
        kind: ConditionKind::Verdier,
        estimate: estimate.max(0.0),
        extremal: estimate.max(0.0),
        n_samples: n_pairs,
        radius: r,
        seed,
        witness: witness.map(|k| Witness::Pair { x: pairs[k].0.clone(), y: pairs[k].1.clone() }),
        verdict,
        ratios,
    })
}

/// Smallest `ρ` in `rho_grid` for which `f + ρ|·|²` passes the convexity
/// inequality on every sampled segment of the box, at `t = 1/2` and at one
/// random `t` per segment. The estimate is `+∞` when no grid value passes.
pub fn estimate_weak_convexity_rho(
    f: &PiecewiseSmoothFunction,
    lo: &Vector,
    hi: &Vector,
    rho_grid: &[f64],
    n_segments: usize,
    seed: u64,
) -> Result<ConditionReport, ConditionError> {
    if rho_grid.is_empty() || rho_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ConditionError::InvalidArgument(String::from("rho grid must be non-empty and ascending")));
    }
    if lo.len() != f.dim() || hi.len() != f.dim() || lo.iter().zip(hi.iter()).any(|(a, b)| !(a < b)) {
        return Err(ConditionError::InvalidArgument(String::from("box corners must satisfy lo < hi coordinatewise")));
    }
    let mut segments = Vec::with_capacity(2 * n_segments);
    for i in 0..n_segments {
        let mut rng = substream(seed, i as u64);
        let x1 = uniform_in_box(&mut rng, lo, hi);
        let x2 = uniform_in_box(&mut rng, lo, hi);
        let t: f64 = rng.random();
        segments.push((x1.clone(), x2.clone(), 0.5));
        segments.push((x1, x2, t));
    }
    let mut last = None;
    for &rho in rho_grid {
        let mut worst = f64::NEG_INFINITY;
        let mut worst_at = 0;
        let mut gaps = Vec::with_capacity(segments.len());
        for (k, (x1, x2, t)) in segments.iter().enumerate() {
            let gap = convexity_gap(f, x1, x2, *t, rho)?;
            if gap > worst {
                worst = gap;
                worst_at = k;
            }
            gaps.push(gap);
        }
        let (x1, x2, t) = &segments[worst_at.min(segments.len().saturating_sub(1))];
        let report = |estimate: f64, verdict: Verdict, gaps: Vec<f64>| ConditionReport {
            kind: ConditionKind::WeakConvexity,
            estimate,
            extremal: worst,
            n_samples: n_segments,
            radius: 0.0,
            seed,
            witness: if segments.is_empty() {
                None
            } else {
                Some(Witness::Segment { x1: x1.clone(), x2: x2.clone(), t: *t, rho })
            },
            verdict,
            ratios: gaps,
        };
        if n_segments == 0 {
            return Ok(report(f64::INFINITY, Verdict::Inconclusive, gaps));
        }
        if worst <= CONVEXITY_SLACK {
            return Ok(report(rho, Verdict::Holds, gaps));
        }
        last = Some(report(f64::INFINITY, Verdict::Fails, gaps));
    }
    Ok(last.expect("grid is non-empty"))
}

/// Recomputes the value at a report's witness.
pub fn reevaluate_witness(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    report: &ConditionReport,
) -> Result<Option<f64>, ConditionError> {
    let mut buf = GeneratorBuffer::new(f.dim());
    let value = match (&report.kind, &report.witness) {
        (_, None) => return Ok(None),
        (ConditionKind::Sharpness, Some(Witness::Point(x))) => sharpness_value(f, x),
        (ConditionKind::Angle, Some(Witness::Point(x))) => angle_value(f, x, &m.project(x)?, &mut buf),
        (ConditionKind::Verdier, Some(Witness::Pair { x, y })) => verdier_value(f, m, x, y, &mut buf)?,
        (ConditionKind::WeakConvexity, Some(Witness::Segment { x1, x2, t, rho })) => {
            convexity_gap(f, x1, x2, *t, *rho)?
        }
        _ => return Err(ConditionError::InvalidArgument(String::from("witness does not match report kind"))),
    };
    Ok(Some(value))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticalPointClass {
    LocalMinCandidate,
    ActiveStrictSaddle,
    SharplyRepulsive,
    Other,
}

impl CriticalPointClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            CriticalPointClass::LocalMinCandidate => "local_min_candidate",
            CriticalPointClass::ActiveStrictSaddle => "active_strict_saddle",
            CriticalPointClass::SharplyRepulsive => "sharply_repulsive",
            CriticalPointClass::Other => "other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierOptions {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self { n_samples: 2000, seed: 0 }
    }
}

/// Classifies a Clarke critical point.
///
/// Rules, in order:
/// - active strict saddle: sharp, `|∇_M f(x*)| <= tol` and the Riemannian
///   Hessian has an eigenvalue below `-tol`;
/// - sharply repulsive: sharp, `x*` minimizes `f|_M` on the samples, and some
///   sampled subgradient points toward `M` (angle estimate `<= -tol`);
/// - local minimum candidate: no sampled value of `f` is below `f(x*) - tol`;
/// - other.
pub fn classify_critical_point(
    f: &PiecewiseSmoothFunction,
    m: &Manifold,
    x_star: &Vector,
    r: f64,
    tol: f64,
    opts: ClassifierOptions,
) -> Result<CriticalPointClass, ConditionError> {
    check_radius(r)?;
    let norm = f.min_norm_subgradient(x_star).norm();
    if norm > tol {
        return Err(ConditionError::NotCritical { norm });
    }
    let f_star = f.evaluate(x_star)?;
    let sharp = m.dim() < m.ambient_dim()
        && estimate_sharpness(f, m, x_star, r, opts.n_samples, opts.seed)?.verdict == Verdict::Holds;

    if sharp && m.dim() > 0 {
        if let Some(rep) = f.representative() {
            let y = m.project(x_star)?;
            let grad = riem_gradient(rep, m, &y)?;
            if grad.norm() <= tol {
                let hess = riem_hessian(rep, m, &y)?;
                let lambda_min = hess.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                if lambda_min < -tol {
                    return Ok(CriticalPointClass::ActiveStrictSaddle);
                }
            }
        }
    }

    let mut ball = Vec::with_capacity(opts.n_samples);
    for i in 0..opts.n_samples {
        let mut rng = substream(opts.seed ^ 0x5eed_ba11, i as u64);
        ball.push(uniform_in_ball(&mut rng, x_star, r));
    }

    if sharp {
        let mut min_on_m = true;
        for x in &ball {
            if f.evaluate(&m.project(x)?)? < f_star - tol {
                min_on_m = false;
                break;
            }
        }
        if min_on_m {
            let angle = estimate_angle_beta(f, m, x_star, r, opts.n_samples, opts.seed)?;
            if angle.estimate <= -tol {
                return Ok(CriticalPointClass::SharplyRepulsive);
            }
        }
    }

    for x in &ball {
        if f.evaluate(x)? < f_star - tol {
            return Ok(CriticalPointClass::Other);
        }
    }
    Ok(CriticalPointClass::LocalMinCandidate)
}

/// Shadowing gap `sup_{h ∈ [0,T]} |z(t+h) - x(h)|` between `z(s) = 1/(s+1)`
/// and the solution `x(h) = z(t) + h` of `ẋ ∈ ∂|x|` started at `z(t)`.
///
/// Evaluated on a uniform grid of 10⁴ + 1 points including `h = T`.
pub fn apt_gap(big_t: f64, t: f64) -> Result<f64, ConditionError> {
    if !(big_t >= 0.0) || !(t >= 0.0) || !big_t.is_finite() || !t.is_finite() {
        return Err(ConditionError::InvalidArgument(alloc::format!("need T >= 0 and t >= 0, got T={big_t}, t={t}")));
    }
    const STEPS: usize = 10_000;
    let z = |s: f64| 1.0 / (s + 1.0);
    let z_t = z(t);
    let gap = (0..=STEPS)
        .map(|k| {
            let h = big_t * k as f64 / STEPS as f64;
            (z(t + h) - (z_t + h)).abs()
        })
        .fold(0.0, f64::max);
    Ok(gap)
}
