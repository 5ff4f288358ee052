//! Toy systems with a known center-stable manifold and the `U_n` process.
//!
//! A [`ConstructedSystem`] is built from blocks `J⁺` (spectrum in the closed
//! right half-plane) and `J⁻` (open left half-plane), a polynomial graph
//! `G: R^{d⁺} -> R^{d⁻}` with `G(0) = 0`, `J_G(0) = 0`, and a perturbation
//! `Δ(w) = c·min(|w|, cap)·I`. In the coordinates `w⁺ = y⁺`,
//! `w⁻ = y⁻ - G(y⁺)` the flow `ẏ = -D(y)` reads
//!
//! ```text
//! ẇ⁺ = -J⁺ w⁺,    ẇ⁻ = (-J⁻ + Δ(w)) w⁻,
//! ```
//!
//! so `{y⁻ = G(y⁺)}` is invariant. The stochastic recursion
//! `y_{n+1} = y_n - γ_n D(y_n) + γ_n(η̃ + ϱ + ϱ̃)` then satisfies
//! `w⁻_{n+1} = w⁻_n + γ_n H_n w⁻_n + γ_n(e_n + r_n + r̃_n)` with
//! `H_n = -J⁻ + Δ(w_n)`, and `U_n = |w⁻_n|_Q` for the Lyapunov matrix `Q`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Complex;
use num_traits::Float;
use thiserror::Error;

use crate::functions::Polynomial;
use crate::geometry::SmoothFunction;
use crate::linalg::{condition_number, spectral_norm, symmetrize, Matrix, Vector};
use crate::rng::{fill_sphere, substream};
use crate::sgd::{NoiseModel, SgdError, StepSchedule};

/// Eigenvalues with real part in `(-TOL_GAP, 0)` are rejected.
pub const TOL_GAP: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CenterStableError {
    #[error("matrix has no eigenvalue with negative real part")]
    NoNegativeEigenvalue,
    #[error("eigenvalue {re}{im:+}i lies within the spectral gap around the imaginary axis")]
    NoSpectralGap { re: f64, im: f64 },
    #[error("invariant subspace basis is ill-conditioned (condition {condition:e})")]
    NearDefective { condition: f64 },
    #[error("Lyapunov system is singular: eigenvalues {0} and {1} sum to zero")]
    SingularSystem(String, String),
    #[error("matrix is not stable: eigenvalue with real part {0} >= 0")]
    NotStable(f64),
    #[error("invalid manifold specification: {0}")]
    InvalidManifoldSpec(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error(transparent)]
    Sgd(#[from] SgdError),
}

fn cabs(z: Complex<f64>) -> f64 {
    Float::sqrt(z.re * z.re + z.im * z.im)
}

fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().cloned().collect()
}

/// `J = P · blockdiag(J⁺, J⁻) · P⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSplit {
    pub p: Matrix,
    pub j_plus: Matrix,
    pub j_minus: Matrix,
    pub e_plus_basis: Matrix,
    pub e_minus_basis: Matrix,
    /// `|P·blockdiag(J⁺, J⁻)·P⁻¹ - J|`.
    pub residual: f64,
}

impl SpectralSplit {
    pub fn d_plus(&self) -> usize {
        self.j_plus.nrows()
    }
    pub fn d_minus(&self) -> usize {
        self.j_minus.nrows()
    }
}

/// Range of `Π (J - λI)` over `factors`, with complex pairs combined into
/// the real quadratic `J² - 2Re(λ)J + |λ|²I`. Each factor is normalized.
fn annihilated_range(j: &Matrix, factors: &[Complex<f64>], rank: usize) -> Matrix {
    let d = j.nrows();
    let id = Matrix::identity(d, d);
    let mut prod = id.clone();
    let mut skip_conjugate = Vec::new();
    for (k, lambda) in factors.iter().enumerate() {
        if skip_conjugate.contains(&k) {
            continue;
        }
        let factor = if lambda.im.abs() > 1e-12 {
            // consume the conjugate partner
            if let Some(partner) = factors
                .iter()
                .enumerate()
                .position(|(i, mu)| i > k && !skip_conjugate.contains(&i) && cabs(mu - lambda.conj()) < 1e-8)
            {
                skip_conjugate.push(partner);
            }
            j * j - j * (2.0 * lambda.re) + &id * lambda.norm_sqr()
        } else {
            j - &id * lambda.re
        };
        let scale = spectral_norm(&factor).max(1e-300);
        prod = factor * prod / scale;
    }
    if rank == 0 {
        return Matrix::zeros(d, 0);
    }
    let svd = prod.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    Matrix::from_fn(d, rank, |r, c| u[(r, order[c])])
}

/// True when some repeated eigenvalue has fewer eigenvectors than its
/// multiplicity.
fn is_defective(j: &Matrix, eig: &[Complex<f64>]) -> bool {
    let d = j.nrows();
    let id = Matrix::identity(d, d);
    for lambda in eig {
        let mult = eig.iter().filter(|mu| cabs(*mu - lambda) < 1e-6).count();
        if mult < 2 {
            continue;
        }
        let (factor, expected) = if lambda.im.abs() > 1e-12 {
            (j * j - j * (2.0 * lambda.re) + &id * lambda.norm_sqr(), 2 * mult)
        } else {
            (j - &id * lambda.re, mult)
        };
        let scale = spectral_norm(&factor).max(1.0);
        let nullity = factor.singular_values().iter().filter(|s| **s <= 1e-8 * scale).count();
        if nullity < expected {
            return true;
        }
    }
    false
}

/// Splits `J` into the blocks of eigenvalues with real part `< -TOL_GAP`
/// (`J⁻`) and `>= 0` (`J⁺`), using orthonormal bases of the two real
/// invariant subspaces.
pub fn spectral_split(j: &Matrix) -> Result<SpectralSplit, CenterStableError> {
    let d = j.nrows();
    if j.ncols() != d || d == 0 {
        return Err(CenterStableError::InvalidSystem(String::from("matrix must be square and non-empty")));
    }
    let eig = eigenvalues(j);
    if let Some(l) = eig.iter().find(|l| l.re > -TOL_GAP && l.re < 0.0) {
        return Err(CenterStableError::NoSpectralGap { re: l.re, im: l.im });
    }
    let minus: Vec<Complex<f64>> = eig.iter().cloned().filter(|l| l.re < 0.0).collect();
    let plus: Vec<Complex<f64>> = eig.iter().cloned().filter(|l| l.re >= 0.0).collect();
    if minus.is_empty() {
        return Err(CenterStableError::NoNegativeEigenvalue);
    }
    if is_defective(j, &eig) {
        return Err(CenterStableError::NearDefective { condition: f64::INFINITY });
    }
    let e_minus = annihilated_range(j, &plus, minus.len());
    let e_plus = annihilated_range(j, &minus, plus.len());
    let mut p = Matrix::zeros(d, d);
    p.view_mut((0, 0), (d, plus.len())).copy_from(&e_plus);
    p.view_mut((0, plus.len()), (d, minus.len())).copy_from(&e_minus);
    let condition = condition_number(&p);
    if !(condition <= MAX_CONDITION) {
        return Err(CenterStableError::NearDefective { condition });
    }
    let p_inv = p.clone().try_inverse().ok_or(CenterStableError::NearDefective { condition: f64::INFINITY })?;
    let block = &p_inv * j * &p;
    let (dp, dm) = (plus.len(), minus.len());
    let j_plus = block.view((0, 0), (dp, dp)).into_owned();
    let j_minus = block.view((dp, dp), (dm, dm)).into_owned();
    let mut diag = Matrix::zeros(d, d);
    diag.view_mut((0, 0), (dp, dp)).copy_from(&j_plus);
    diag.view_mut((dp, dp), (dm, dm)).copy_from(&j_minus);
    let residual = (&p * diag * &p_inv - j).norm();
    Ok(SpectralSplit { p, j_plus, j_minus, e_plus_basis: e_plus, e_minus_basis: e_minus, residual })
}

/// Solution `Q` of `QJ⁻ + (J⁻)ᵀQ = -2I`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate {
    pub q: Matrix,
    /// Frobenius norm of `QJ⁻ + (J⁻)ᵀQ + 2I`.
    pub residual: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Solves the Lyapunov equation through its `d²`-dimensional Kronecker form.
pub fn lyapunov_solve(j_minus: &Matrix) -> Result<LyapunovCertificate, CenterStableError> {
    let d = j_minus.nrows();
    if j_minus.ncols() != d || d == 0 {
        return Err(CenterStableError::InvalidSystem(String::from("J⁻ must be square and non-empty")));
    }
    let eig = eigenvalues(j_minus);
    if let Some(l) = eig.iter().find(|l| l.re >= 0.0) {
        return Err(CenterStableError::NotStable(l.re));
    }
    for a in &eig {
        for b in &eig {
            if cabs(a + b) < 1e-12 {
                return Err(CenterStableError::SingularSystem(format!("{a}"), format!("{b}")));
            }
        }
    }
    // vec(QJ) = (Jᵀ ⊗ I) vec(Q), vec(JᵀQ) = (I ⊗ Jᵀ) vec(Q), column-major vec
    let n = d * d;
    let mut k = Matrix::zeros(n, n);
    for col in 0..d {
        for row in 0..d {
            let idx = col * d + row;
            for m in 0..d {
                // (QJ)[row, col] = Σ_m Q[row, m] J[m, col]
                k[(idx, m * d + row)] += j_minus[(m, col)];
                // (JᵀQ)[row, col] = Σ_m J[m, row] Q[m, col]
                k[(idx, col * d + m)] += j_minus[(m, row)];
            }
        }
    }
    let mut rhs = Vector::zeros(n);
    for i in 0..d {
        rhs[i * d + i] = -2.0;
    }
    let sol = k.lu().solve(&rhs).ok_or_else(|| CenterStableError::SingularSystem(String::from("?"), String::from("?")))?;
    let q = symmetrize(&Matrix::from_column_slice(d, d, sol.as_slice()));
    let residual = (&q * j_minus + j_minus.transpose() * &q + Matrix::identity(d, d) * 2.0).norm();
    let ev = q.clone().symmetric_eigen().eigenvalues;
    let lambda_min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambda_max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(LyapunovCertificate { q, residual, lambda_min, lambda_max })
}

/// `Δ(w) = scale·min(|w|, cap)·I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaSpec {
    pub scale: f64,
    pub cap: f64,
}

impl DeltaSpec {
    pub const ZERO: DeltaSpec = DeltaSpec { scale: 0.0, cap: 1.0 };

    pub fn factor(&self, w_norm: f64) -> f64 {
        self.scale * w_norm.min(self.cap)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstructedSystem {
    j_plus: Matrix,
    j_minus: Matrix,
    g: Vec<Polynomial>,
    delta: DeltaSpec,
}

impl ConstructedSystem {
    /// `g` has one polynomial on `R^{d⁺}` per stable coordinate.
    pub fn new(j_plus: Matrix, j_minus: Matrix, g: Vec<Polynomial>, delta: DeltaSpec) -> Result<Self, CenterStableError> {
        let (dp, dm) = (j_plus.nrows(), j_minus.nrows());
        if j_plus.ncols() != dp || j_minus.ncols() != dm {
            return Err(CenterStableError::InvalidSystem(String::from("blocks must be square")));
        }
        if dm == 0 {
            return Err(CenterStableError::NoNegativeEigenvalue);
        }
        if let Some(l) = eigenvalues(&j_plus).iter().find(|l| l.re < 0.0) {
            return Err(CenterStableError::InvalidSystem(format!("J⁺ has eigenvalue with real part {} < 0", l.re)));
        }
        if let Some(l) = eigenvalues(&j_minus).iter().find(|l| l.re >= -TOL_GAP) {
            return Err(CenterStableError::InvalidSystem(format!("J⁻ has eigenvalue with real part {} >= 0", l.re)));
        }
        if g.len() != dm {
            return Err(CenterStableError::InvalidManifoldSpec(format!("G needs {dm} components, got {}", g.len())));
        }
        let zero = Vector::zeros(dp);
        for (i, gi) in g.iter().enumerate() {
            if gi.dim != dp {
                return Err(CenterStableError::InvalidManifoldSpec(format!("G component {i} is not a map on R^{dp}")));
            }
            if gi.value(&zero) != 0.0 {
                return Err(CenterStableError::InvalidManifoldSpec(format!("G component {i} does not vanish at 0")));
            }
            if gi.gradient(&zero).iter().any(|v| *v != 0.0) {
                return Err(CenterStableError::InvalidManifoldSpec(format!("G component {i} has nonzero Jacobian at 0")));
            }
        }
        if !(delta.scale >= 0.0) || !(delta.cap > 0.0) {
            return Err(CenterStableError::InvalidSystem(String::from("Δ needs scale >= 0 and cap > 0")));
        }
        Ok(Self { j_plus, j_minus, g, delta })
    }

    /// `G ≡ 0`.
    pub fn linear_graph(j_plus: Matrix, j_minus: Matrix, delta: DeltaSpec) -> Result<Self, CenterStableError> {
        let (dp, dm) = (j_plus.nrows(), j_minus.nrows());
        Self::new(j_plus, j_minus, vec![Polynomial::zero(dp); dm], delta)
    }

    pub fn d_plus(&self) -> usize {
        self.j_plus.nrows()
    }
    pub fn d_minus(&self) -> usize {
        self.j_minus.nrows()
    }
    pub fn dim(&self) -> usize {
        self.d_plus() + self.d_minus()
    }
    pub fn j_plus(&self) -> &Matrix {
        &self.j_plus
    }
    pub fn j_minus(&self) -> &Matrix {
        &self.j_minus
    }
    pub fn delta(&self) -> DeltaSpec {
        self.delta
    }

    fn split(&self, y: &Vector) -> (Vector, Vector) {
        let dp = self.d_plus();
        (y.rows(0, dp).into_owned(), y.rows(dp, self.d_minus()).into_owned())
    }

    pub fn g(&self, y_plus: &Vector) -> Vector {
        Vector::from_iterator(self.d_minus(), self.g.iter().map(|gi| gi.value(y_plus)))
    }

    /// `d⁻ × d⁺` Jacobian of `G`.
    pub fn g_jacobian(&self, y_plus: &Vector) -> Matrix {
        let mut jac = Matrix::zeros(self.d_minus(), self.d_plus());
        for (i, gi) in self.g.iter().enumerate() {
            jac.set_row(i, &gi.gradient(y_plus).transpose());
        }
        jac
    }

    /// `(w⁺, w⁻) = (y⁺, y⁻ - G(y⁺))`.
    pub fn to_w(&self, y: &Vector) -> Vector {
        let (yp, ym) = self.split(y);
        let wm = ym - self.g(&yp);
        let mut w = y.clone();
        w.rows_mut(self.d_plus(), self.d_minus()).copy_from(&wm);
        w
    }

    /// Point of the known manifold above `y⁺`.
    pub fn on_manifold(&self, y_plus: &Vector) -> Vector {
        let mut y = Vector::zeros(self.dim());
        y.rows_mut(0, self.d_plus()).copy_from(y_plus);
        y.rows_mut(self.d_plus(), self.d_minus()).copy_from(&self.g(y_plus));
        y
    }

    /// Drift `D(y)`; the mean field of the recursion is `-D`.
    pub fn drift(&self, y: &Vector) -> Vector {
        let (yp, ym) = self.split(y);
        let wm = &ym - self.g(&yp);
        let w_norm = Float::sqrt(yp.norm_squared() + wm.norm_squared());
        let delta = self.delta.factor(w_norm);
        let dp = &self.j_plus * &yp;
        let dm = self.g_jacobian(&yp) * &dp + &self.j_minus * &wm - &wm * delta;
        let mut out = Vector::zeros(self.dim());
        out.rows_mut(0, self.d_plus()).copy_from(&dp);
        out.rows_mut(self.d_plus(), self.d_minus()).copy_from(&dm);
        out
    }

    /// Largest `|w⁻(t)|` over `t ∈ [0, t_end]` for RK4 solutions of
    /// `ẏ = -D(y)` started on the manifold at `starts`.
    pub fn invariance_defect(&self, starts: &[Vector], t_end: f64, dt: f64) -> f64 {
        let steps = Float::ceil(t_end / dt) as usize;
        let h = t_end / steps.max(1) as f64;
        let rhs = |y: &Vector| -self.drift(y);
        let mut worst = 0.0f64;
        for s in starts {
            let mut y = self.on_manifold(s);
            for _ in 0..steps {
                let k1 = rhs(&y);
                let k2 = rhs(&(&y + &k1 * (h / 2.0)));
                let k3 = rhs(&(&y + &k2 * (h / 2.0)));
                let k4 = rhs(&(&y + &k3 * h));
                y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                let wm = self.to_w(&y).rows(self.d_plus(), self.d_minus()).norm();
                worst = worst.max(wm);
            }
        }
        worst
    }
}

/// Residual input laws for the `ϱ` and `ϱ̃` terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResidualSpec {
    Zero,
    /// `ϱ_n = scale·ξ/n` and `ϱ̃_n = scale·γ_n·ξ`, `ξ` uniform on the unit sphere.
    Decaying { scale: f64 },
    /// `scale·ξ`: breaks the summability contracts, for negative controls.
    Persistent { scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbstractConfig {
    pub schedule: StepSchedule,
    /// Martingale input `η̃`, in `y` coordinates.
    pub noise: NoiseModel,
    pub rho: ResidualSpec,
    pub rho_tilde: ResidualSpec,
    pub horizon: usize,
    pub y0: Vector,
}

impl AbstractConfig {
    /// Human-readable contract violations, empty when every input honors
    /// its bound by construction.
    pub fn contract_flags(&self) -> Vec<String> {
        let mut flags = Vec::new();
        if let ResidualSpec::Persistent { .. } = self.rho {
            flags.push(String::from("rho is not square-summable"));
        }
        if let ResidualSpec::Persistent { .. } = self.rho_tilde {
            flags.push(String::from("rho_tilde violates its tail bound"));
        }
        flags
    }
}

/// One step of an abstract run, as seen by observers.
pub struct AbstractStep<'a> {
    /// Paper index `n >= 1` of the state before the step.
    pub n: usize,
    pub gamma: f64,
    pub chi: f64,
    pub y: &'a Vector,
    pub y_next: &'a Vector,
    pub w_minus: &'a Vector,
    pub w_minus_next: &'a Vector,
    pub e: &'a Vector,
    pub r: &'a Vector,
    pub r_tilde: &'a Vector,
    /// `Δ(w_n) = delta·I`.
    pub delta: f64,
}

fn residual_draw<R: rand::Rng>(spec: ResidualSpec, rng: &mut R, n: usize, gamma: f64, tilde: bool, out: &mut [f64]) {
    match spec {
        ResidualSpec::Zero => out.iter_mut().for_each(|o| *o = 0.0),
        ResidualSpec::Decaying { scale } => {
            let s = if tilde { scale * gamma } else { scale / n as f64 };
            fill_sphere(rng, s, out);
        }
        ResidualSpec::Persistent { scale } => fill_sphere(rng, scale, out),
    }
}

/// Streams an abstract run through `observe`. `chis[k]` must hold `χ_{k+1}`
/// for `k <= horizon`.
pub fn simulate_abstract_with<F: FnMut(&AbstractStep<'_>)>(
    sys: &ConstructedSystem,
    cfg: &AbstractConfig,
    chis: &[f64],
    seed: u64,
    mut observe: F,
) -> Result<Vector, CenterStableError> {
    let d = sys.dim();
    let (dp, dm) = (sys.d_plus(), sys.d_minus());
    if cfg.y0.len() != d {
        return Err(CenterStableError::InvalidSystem(format!("y0 has dimension {}, expected {d}", cfg.y0.len())));
    }
    if chis.len() < cfg.horizon + 1 {
        return Err(CenterStableError::InvalidSystem(String::from("chi table shorter than the horizon")));
    }
    cfg.noise.validate(d)?;
    let mut e_rng = substream(seed, 0);
    let mut r_rng = substream(seed, 1);
    let mut rt_rng = substream(seed, 2);
    let mut scratch = Vec::new();
    let mut eta = Vector::zeros(d);
    let mut rho = Vector::zeros(d);
    let mut rho_t = Vector::zeros(d);
    let mut y = cfg.y0.clone();
    let mut w_minus = sys.to_w(&y).rows(dp, dm).into_owned();
    for n in 1..=cfg.horizon {
        let gamma = cfg.schedule.gamma(n as u64);
        cfg.noise.sample_into(&mut e_rng, eta.as_mut_slice(), &mut scratch);
        residual_draw(cfg.rho, &mut r_rng, n, gamma, false, rho.as_mut_slice());
        residual_draw(cfg.rho_tilde, &mut rt_rng, n, gamma, true, rho_t.as_mut_slice());

        let (yp, _) = sys.split(&y);
        let w_norm = Float::sqrt(yp.norm_squared() + w_minus.norm_squared());
        let delta = sys.delta.factor(w_norm);
        let y_next = &y - sys.drift(&y) * gamma + (&eta + &rho + &rho_t) * gamma;
        let (yp_next, ym_next) = sys.split(&y_next);
        let g_now = sys.g(&yp);
        let g_next = sys.g(&yp_next);
        let jg = sys.g_jacobian(&yp);
        let w_minus_next = &ym_next - &g_next;

        let minus = |v: &Vector| v.rows(dp, dm).into_owned();
        let plus = |v: &Vector| v.rows(0, dp).into_owned();
        let e = minus(&eta) - &jg * plus(&eta);
        let xi = &g_next - &g_now - &jg * (&yp_next - &yp);
        let r = minus(&rho) - &jg * plus(&rho) - xi / gamma;
        let r_tilde = minus(&rho_t) - &jg * plus(&rho_t);

        observe(&AbstractStep {
            n,
            gamma,
            chi: chis[n - 1],
            y: &y,
            y_next: &y_next,
            w_minus: &w_minus,
            w_minus_next: &w_minus_next,
            e: &e,
            r: &r,
            r_tilde: &r_tilde,
            delta,
        });
        y = y_next;
        w_minus = w_minus_next;
        if y.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Ok(y)
}

/// Recorded abstract run. Index `k` of every per-state array holds step
/// `n = k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AbstractRun {
    pub dim: usize,
    pub d_minus: usize,
    pub ys: Vec<f64>,
    pub w_minus: Vec<f64>,
    pub u: Vec<f64>,
    pub gammas: Vec<f64>,
    pub chis: Vec<f64>,
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub r_tilde: Vec<f64>,
    /// `Δ(w_n) = deltas[k]·I`; `H_n = -J⁻ + Δ(w_n)`.
    pub deltas: Vec<f64>,
    pub l: f64,
    pub n_start: usize,
    /// `τ_N(L) = inf{k >= N : U_k² >= Lχ_k}`.
    pub tau: Option<usize>,
    pub contract_flags: Vec<String>,
    pub certificate: LyapunovCertificate,
    pub seed: u64,
}

impl AbstractRun {
    pub fn steps(&self) -> usize {
        self.gammas.len()
    }
    pub fn y(&self, k: usize) -> &[f64] {
        &self.ys[k * self.dim..(k + 1) * self.dim]
    }
    pub fn w(&self, k: usize) -> &[f64] {
        &self.w_minus[k * self.d_minus..(k + 1) * self.d_minus]
    }
    fn slice<'a>(&self, data: &'a [f64], k: usize) -> &'a [f64] {
        &data[k * self.d_minus..(k + 1) * self.d_minus]
    }
}

fn u_value(q: &Matrix, w: &Vector) -> f64 {
    Float::sqrt((w.transpose() * q * w)[(0, 0)].max(0.0))
}

/// Runs the recursion, recording every series and `τ_N(L)`.
pub fn simulate_abstract(
    sys: &ConstructedSystem,
    cfg: &AbstractConfig,
    l: f64,
    n_start: usize,
    seed: u64,
) -> Result<AbstractRun, CenterStableError> {
    let cert = lyapunov_solve(sys.j_minus())?;
    let chis = cfg.schedule.chi_table(cfg.horizon as u64 + 1);
    let (d, dm) = (sys.dim(), sys.d_minus());
    let mut run = AbstractRun {
        dim: d,
        d_minus: dm,
        ys: Vec::with_capacity((cfg.horizon + 1) * d),
        w_minus: Vec::with_capacity((cfg.horizon + 1) * dm),
        u: Vec::with_capacity(cfg.horizon + 1),
        gammas: Vec::with_capacity(cfg.horizon),
        chis: chis.clone(),
        e: Vec::with_capacity(cfg.horizon * dm),
        r: Vec::with_capacity(cfg.horizon * dm),
        r_tilde: Vec::with_capacity(cfg.horizon * dm),
        deltas: Vec::with_capacity(cfg.horizon),
        l,
        n_start: n_start.max(1),
        tau: None,
        contract_flags: cfg.contract_flags(),
        certificate: cert.clone(),
        seed,
    };
    let w0 = sys.to_w(&cfg.y0).rows(sys.d_plus(), dm).into_owned();
    run.ys.extend_from_slice(cfg.y0.as_slice());
    run.w_minus.extend_from_slice(w0.as_slice());
    run.u.push(u_value(&cert.q, &w0));
    simulate_abstract_with(sys, cfg, &chis, seed, |s| {
        run.ys.extend_from_slice(s.y_next.as_slice());
        run.w_minus.extend_from_slice(s.w_minus_next.as_slice());
        run.u.push(u_value(&cert.q, s.w_minus_next));
        run.gammas.push(s.gamma);
        run.e.extend_from_slice(s.e.as_slice());
        run.r.extend_from_slice(s.r.as_slice());
        run.r_tilde.extend_from_slice(s.r_tilde.as_slice());
        run.deltas.push(s.delta);
    })?;
    run.tau = (run.n_start..=run.u.len()).find(|&n| run.u[n - 1].powi(2) >= l * run.chis[n - 1]);
    Ok(run)
}

/// Per-run outcome of a nonconvergence experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct NonconvergenceRun {
    pub seed: u64,
    pub tau: Option<usize>,
    /// `U_k >= sqrt(Lχ_k)/2` for every `k >= τ`.
    pub stays_above: bool,
    /// `|y_N| < ε` and `max |y_k| < ε` over the last tenth of the run.
    pub converges: bool,
    pub final_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NonconvergenceStats {
    pub n_runs: usize,
    pub fraction_tau_finite: f64,
    pub fraction_stays_above: f64,
    pub fraction_converges: f64,
    pub runs: Vec<NonconvergenceRun>,
}

/// Parameters of [`nonconvergence_experiment`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentSettings {
    pub l: f64,
    pub n_start: usize,
    pub epsilon: f64,
    pub seed: u64,
}

/// Streams run `index` (seed `settings.seed + index`).
pub fn nonconvergence_run(
    sys: &ConstructedSystem,
    cfg: &AbstractConfig,
    cert: &LyapunovCertificate,
    chis: &[f64],
    settings: &ExperimentSettings,
    index: u64,
) -> Result<NonconvergenceRun, CenterStableError> {
    let seed = settings.seed.wrapping_add(index);
    let tail_start = cfg.horizon + 1 - (cfg.horizon + 1) / 10;
    let n_start = settings.n_start.max(1);
    let l = settings.l;
    let dm = sys.d_minus();
    let w0 = sys.to_w(&cfg.y0).rows(sys.d_plus(), dm).into_owned();
    let mut tau = None;
    let mut stays_above = true;
    let mut check = |n: usize, u: f64| {
        let threshold = l * chis[n - 1];
        if tau.is_none() && n >= n_start && u * u >= threshold {
            tau = Some(n);
        }
        if tau.is_some() && u < 0.5 * Float::sqrt(threshold) {
            stays_above = false;
        }
    };
    check(1, u_value(&cert.q, &w0));
    let mut tail_max = 0.0f64;
    let last = simulate_abstract_with(sys, cfg, chis, seed, |s| {
        check(s.n + 1, u_value(&cert.q, s.w_minus_next));
        if s.n + 1 >= tail_start {
            tail_max = tail_max.max(s.y_next.norm());
        }
    })?;
    let final_norm = last.norm();
    let converges = final_norm.is_finite() && final_norm < settings.epsilon && tail_max < settings.epsilon;
    Ok(NonconvergenceRun { seed, tau, stays_above: tau.is_some() && stays_above, converges, final_norm })
}

/// Aggregates runs in the given order.
pub fn aggregate_nonconvergence(runs: Vec<NonconvergenceRun>) -> NonconvergenceStats {
    let n = runs.len().max(1) as f64;
    let frac = |p: &dyn Fn(&NonconvergenceRun) -> bool| runs.iter().filter(|r| p(r)).count() as f64 / n;
    NonconvergenceStats {
        n_runs: runs.len(),
        fraction_tau_finite: frac(&|r| r.tau.is_some()),
        fraction_stays_above: frac(&|r| r.stays_above),
        fraction_converges: frac(&|r| r.converges),
        runs,
    }
}

/// Sequential experiment over seeds `settings.seed + i`, `i < n_runs`.
pub fn nonconvergence_experiment(
    sys: &ConstructedSystem,
    cfg: &AbstractConfig,
    settings: &ExperimentSettings,
    n_runs: usize,
) -> Result<NonconvergenceStats, CenterStableError> {
    let cert = lyapunov_solve(sys.j_minus())?;
    let chis = cfg.schedule.chi_table(cfg.horizon as u64 + 1);
    let runs = (0..n_runs as u64)
        .map(|i| nonconvergence_run(sys, cfg, &cert, &chis, settings, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_nonconvergence(runs))
}

/// Outcome of the per-step checks on `U_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub steps_checked: usize,
    /// Steps with `U_{n+1} - U_n < γ_n<a_n, e + r + r̃>` beyond rounding.
    pub violations_lower: usize,
    /// Largest `|a_n|`.
    pub max_a_norm: f64,
    /// `sqrt(λ_max(Q))`, the exact bound on `|a_n|`.
    pub a_norm_bound: f64,
    /// Steps where `U_n² <= Lχ_n`.
    pub steps_below_threshold: usize,
    /// Largest `(U_{n+1} - U_n)² / (γ²(L + |e|² + |r|² + |r̃|²))` on those steps.
    pub fitted_c: f64,
    /// `6 λ_max max(1, H² χ_1 / λ_min)` with `H = sup_n |H_n|`.
    pub c_theory: f64,
    pub violations_upper: usize,
    /// `sup_n |Q(H_n + J⁻)|`; the standing assumption asks for at most 1/2.
    pub perturbation_norm: f64,
}

/// Checks the lower increment bound and the small-`U` increment bound at
/// every recorded step.
pub fn pathwise_inequality_probe(
    sys: &ConstructedSystem,
    run: &AbstractRun,
    cert: &LyapunovCertificate,
) -> ProbeReport {
    let dm = run.d_minus;
    let q = &cert.q;
    let id = Matrix::identity(dm, dm);
    let h_sup = run
        .deltas
        .iter()
        .map(|dlt| spectral_norm(&(-sys.j_minus() + &id * *dlt)))
        .fold(spectral_norm(&(-sys.j_minus())), f64::max);
    let perturbation_norm = run.deltas.iter().map(|dlt| spectral_norm(&(q * *dlt))).fold(0.0, f64::max);
    let chi_1 = run.chis[0];
    let c_theory = 6.0 * cert.lambda_max * (h_sup * h_sup * chi_1 / cert.lambda_min).max(1.0);
    // unit vector in the Q-norm for the U = 0 case
    let mut u0 = Vector::zeros(dm);
    u0[0] = 1.0 / Float::sqrt(q[(0, 0)]);
    let mut report = ProbeReport {
        steps_checked: run.steps(),
        violations_lower: 0,
        max_a_norm: 0.0,
        a_norm_bound: Float::sqrt(cert.lambda_max),
        steps_below_threshold: 0,
        fitted_c: 0.0,
        c_theory,
        violations_upper: 0,
        perturbation_norm,
    };
    for k in 0..run.steps() {
        let w = Vector::from_row_slice(run.w(k));
        let (u, u_next) = (run.u[k], run.u[k + 1]);
        let e = Vector::from_row_slice(run.slice(&run.e, k));
        let r = Vector::from_row_slice(run.slice(&run.r, k));
        let rt = Vector::from_row_slice(run.slice(&run.r_tilde, k));
        let gamma = run.gammas[k];
        let a = if u > 0.0 { q * &w / u } else { q * &u0 };
        report.max_a_norm = report.max_a_norm.max(a.norm());
        let forcing = &e + &r + &rt;
        let lower = gamma * a.dot(&forcing);
        if u_next - u < lower - 1e-12 * (1.0 + u + u_next) {
            report.violations_lower += 1;
        }
        if u * u <= run.l * run.chis[k] {
            report.steps_below_threshold += 1;
            let scale = gamma * gamma * (run.l + e.norm_squared() + r.norm_squared() + rt.norm_squared());
            let inc = (u_next - u).powi(2);
            if scale > 0.0 {
                report.fitted_c = report.fitted_c.max(inc / scale);
            }
            if inc > c_theory * scale * (1.0 + 1e-12) + 1e-300 {
                report.violations_upper += 1;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::Monomial;

    fn m(r: usize, c: usize, xs: &[f64]) -> Matrix {
        Matrix::from_row_slice(r, c, xs)
    }

    #[test]
    fn split_examples() {
        let s = spectral_split(&m(2, 2, &[1.0, 0.0, 0.0, -1.0])).unwrap();
        assert_eq!(s.d_minus(), 1);
        assert!((s.j_plus[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((s.j_minus[(0, 0)] + 1.0).abs() < 1e-12);
        assert!((s.e_minus_basis[(1, 0)].abs() - 1.0).abs() < 1e-12);

        let s = spectral_split(&m(3, 3, &[2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -3.0])).unwrap();
        assert_eq!(s.d_minus(), 2);
        let mut ev: Vec<f64> = eigenvalues(&s.j_minus).iter().map(|l| l.re).collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] + 3.0).abs() < 1e-10 && (ev[1] + 1.0).abs() < 1e-10);

        let s = spectral_split(&m(2, 2, &[-1.0, 1.0, -1.0, -1.0])).unwrap();
        assert_eq!(s.d_minus(), 2);
        assert_eq!(s.d_plus(), 0);
        assert!(s.residual < 1e-8);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            spectral_split(&m(3, 3, &[1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, -1.0])),
            Err(CenterStableError::NearDefective { .. })
        ));
        assert!(spectral_split(&m(3, 3, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0])).is_ok());
        assert!(matches!(spectral_split(&m(1, 1, &[1.0])), Err(CenterStableError::NoNegativeEigenvalue)));
        assert!(matches!(
            spectral_split(&m(2, 2, &[-1e-10, 0.0, 0.0, -1.0])),
            Err(CenterStableError::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn lyapunov_examples() {
        let c = lyapunov_solve(&m(1, 1, &[-1.0])).unwrap();
        assert!((c.q[(0, 0)] - 1.0).abs() < 1e-15);
        let c = lyapunov_solve(&m(2, 2, &[-1.0, 1.0, 0.0, -1.0])).unwrap();
        let expect = m(2, 2, &[1.0, 0.5, 0.5, 1.5]);
        assert!((&c.q - expect).abs().max() < 1e-12);
        let c = lyapunov_solve(&(-Matrix::identity(2, 2))).unwrap();
        assert!((&c.q - Matrix::identity(2, 2)).abs().max() < 1e-15);
        assert!(matches!(lyapunov_solve(&m(1, 1, &[1.0])), Err(CenterStableError::NotStable(_))));
    }

    #[test]
    fn manifold_spec_is_validated() {
        let jp = m(1, 1, &[1.0]);
        let jm = m(1, 1, &[-1.0]);
        let linear = Polynomial { dim: 1, terms: vec![Monomial::single(0.3, 0, 1.0)] };
        assert!(matches!(
            ConstructedSystem::new(jp.clone(), jm.clone(), vec![linear], DeltaSpec::ZERO),
            Err(CenterStableError::InvalidManifoldSpec(_))
        ));
        let shifted = Polynomial { dim: 1, terms: vec![Monomial::constant(0.1)] };
        assert!(ConstructedSystem::new(jp, jm, vec![shifted], DeltaSpec::ZERO).is_err());
    }

    #[test]
    fn parabola_is_invariant() {
        let g = Polynomial { dim: 1, terms: vec![Monomial::single(0.1, 0, 2.0)] };
        let sys = ConstructedSystem::new(m(1, 1, &[1.0]), m(1, 1, &[-1.0]), vec![g], DeltaSpec { scale: 0.05, cap: 1.0 })
            .unwrap();
        let starts: Vec<Vector> = (0..5).map(|i| Vector::from_element(1, -0.5 + 0.25 * i as f64)).collect();
        assert!(sys.invariance_defect(&starts, 1.0, 1e-3) <= 1e-8);
        let y = sys.on_manifold(&Vector::from_element(1, 0.5));
        assert!((y[1] - 0.025).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_linear_run_grows() {
        let sys = ConstructedSystem::linear_graph(m(1, 1, &[1.0]), m(1, 1, &[-1.0]), DeltaSpec::ZERO).unwrap();
        let cfg = AbstractConfig {
            schedule: StepSchedule::new(0.1, 1.0).unwrap(),
            noise: NoiseModel::Zero,
            rho: ResidualSpec::Zero,
            rho_tilde: ResidualSpec::Zero,
            horizon: 100,
            y0: Vector::from_row_slice(&[0.0, 0.1]),
        };
        let run = simulate_abstract(&sys, &cfg, 0.01, 1, 0).unwrap();
        assert!(run.u.windows(2).all(|w| w[1] > w[0]));
        // w⁻ multiplies by 1 + γ_n exactly
        let mut w = 0.1;
        for k in 0..5 {
            assert!((run.w(k)[0] - w).abs() <= 1e-15 * w);
            w *= 1.0 + 0.1 / (k as f64 + 1.0);
        }
        let probe = pathwise_inequality_probe(&sys, &run, &run.certificate);
        assert_eq!(probe.violations_lower, 0);
        assert!((probe.max_a_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_input_stays_at_zero() {
        let sys = ConstructedSystem::linear_graph(m(1, 1, &[1.0]), m(1, 1, &[-1.0]), DeltaSpec::ZERO).unwrap();
        let basis = m(2, 1, &[1.0, 0.0]);
        let cfg = AbstractConfig {
            schedule: StepSchedule::new(0.1, 1.0).unwrap(),
            noise: NoiseModel::SubspaceRestricted {
                inner: alloc::boxed::Box::new(NoiseModel::SphereUniform { sigma: 1.0 }),
                basis,
            },
            rho: ResidualSpec::Zero,
            rho_tilde: ResidualSpec::Zero,
            horizon: 200,
            y0: Vector::from_row_slice(&[0.3, 0.0]),
        };
        let run = simulate_abstract(&sys, &cfg, 0.01, 1, 4).unwrap();
        assert!(run.u.iter().all(|u| *u == 0.0));
        assert_eq!(run.tau, None);
    }
}
