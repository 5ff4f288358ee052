//! Piecewise-smooth test functions with exact Clarke generators.
//!
//! A function is a list of polynomial pieces, each living on a polyhedral
//! region cut out by sign constraints on linear functionals. Pieces must agree
//! on shared boundaries. For this class the Clarke subdifferential at `x` is
//! the convex hull of the gradients of all pieces whose closed region
//! contains `x`, which is what [`PiecewiseSmoothFunction::clarke_generators`]
//! returns.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::geometry::{AffineManifold, Manifold, SmoothFunction};
use crate::hull::min_norm_point;
use crate::linalg::{Matrix, Vector};

pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionError {
    #[error("no piece covers the point {0:?}")]
    MalformedFunction(Vec<f64>),
    #[error("unknown catalog function `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[inline]
fn is_int(p: f64) -> bool {
    p == Float::trunc(p) && Float::abs(p) < 64.0
}

/// `x^p` for integer `p`, `|x|^p` otherwise.
#[inline]
fn pow(x: f64, p: f64) -> f64 {
    if is_int(p) {
        Float::powi(x, p as i32)
    } else {
        Float::powf(Float::abs(x), p)
    }
}

/// Derivative of [`pow`] in `x`. For fractional `p < 1` the singular value at
/// `x = 0` is replaced by 0.
#[inline]
fn dpow(x: f64, p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if is_int(p) {
        p * Float::powi(x, p as i32 - 1)
    } else if x == 0.0 {
        0.0
    } else {
        p * Float::powf(Float::abs(x), p - 1.0) * Float::signum(x)
    }
}

#[inline]
fn ddpow(x: f64, p: f64) -> f64 {
    if p == 0.0 || p == 1.0 {
        0.0
    } else if is_int(p) {
        p * (p - 1.0) * Float::powi(x, p as i32 - 2)
    } else if x == 0.0 {
        0.0
    } else {
        p * (p - 1.0) * Float::powf(Float::abs(x), p - 2.0)
    }
}

/// `coeff · Π x_i^{p_i}`, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    /// `(coordinate, power)` with nonzero powers only.
    pub factors: Vec<(usize, f64)>,
}

impl Monomial {
    pub fn new(coeff: f64, powers: &[f64]) -> Self {
        let factors = powers.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(i, p)| (i, *p)).collect();
        Self { coeff, factors }
    }

    pub fn constant(coeff: f64) -> Self {
        Self { coeff, factors: Vec::new() }
    }

    /// `coeff · x_i^p`.
    pub fn single(coeff: f64, i: usize, p: f64) -> Self {
        Self { coeff, factors: vec![(i, p)] }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.factors.iter().fold(self.coeff, |acc, (i, p)| acc * pow(x[*i], *p))
    }

    fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        for (a, (i, p)) in self.factors.iter().enumerate() {
            let mut g = self.coeff * dpow(x[*i], *p);
            for (b, (j, q)) in self.factors.iter().enumerate() {
                if a != b {
                    g *= pow(x[*j], *q);
                }
            }
            out[*i] += g;
        }
    }

    fn add_hessian(&self, x: &[f64], out: &mut Matrix) {
        let n = self.factors.len();
        for a in 0..n {
            for b in 0..n {
                let (i, p) = self.factors[a];
                let (j, q) = self.factors[b];
                let mut h = self.coeff;
                if a == b {
                    h *= ddpow(x[i], p);
                } else {
                    h *= dpow(x[i], p) * dpow(x[j], q);
                }
                for (c, (k, r)) in self.factors.iter().enumerate() {
                    if c != a && c != b {
                        h *= pow(x[*k], *r);
                    }
                }
                out[(i, j)] += h;
            }
        }
    }
}

/// Sum of monomials on `R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self, FunctionError> {
        for t in &terms {
            if let Some((i, _)) = t.factors.iter().find(|(i, _)| *i >= dim) {
                return Err(FunctionError::InvalidParameter(format!("coordinate {i} out of range for dimension {dim}")));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    /// Writes the gradient into `out` (overwriting it).
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            t.add_gradient(x, out);
        }
    }

    /// `self - <u, x>`.
    pub fn tilted(&self, u: &[f64]) -> Self {
        let mut terms = self.terms.clone();
        for (i, ui) in u.iter().enumerate() {
            if *ui != 0.0 {
                terms.push(Monomial::single(-ui, i, 1.0));
            }
        }
        Self { dim: self.dim, terms }
    }
}

impl SmoothFunction for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &Vector) -> f64 {
        self.eval(x.as_slice())
    }
    fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim);
        self.gradient_into(x.as_slice(), g.as_mut_slice());
        g
    }
    fn hessian(&self, x: &Vector) -> Matrix {
        let mut h = Matrix::zeros(self.dim, self.dim);
        for t in &self.terms {
            t.add_hessian(x.as_slice(), &mut h);
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

/// Intersection of sign constraints `sign(<l, x>)` on linear functionals `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub constraints: Vec<(Vec<f64>, Sign)>,
    pub tolerance: f64,
}

impl Region {
    pub fn whole_space() -> Self {
        Self { constraints: Vec::new(), tolerance: DEFAULT_BOUNDARY_TOLERANCE }
    }

    /// One constraint per coordinate; `None` leaves the coordinate free.
    pub fn from_coordinate_signs(signs: &[Option<Sign>]) -> Self {
        let d = signs.len();
        let constraints = signs
            .iter()
            .enumerate()
            .filter_map(|(i, s)| {
                s.map(|s| {
                    let mut l = vec![0.0; d];
                    l[i] = 1.0;
                    (l, s)
                })
            })
            .collect();
        Self { constraints, tolerance: DEFAULT_BOUNDARY_TOLERANCE }
    }

    /// Closed region, enlarged by the boundary tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|(l, s)| {
            let v: f64 = l.iter().zip(x).map(|(a, b)| a * b).sum();
            match s {
                Sign::Positive => v >= -self.tolerance,
                Sign::Negative => v <= self.tolerance,
                Sign::Zero => Float::abs(v) <= self.tolerance,
            }
        })
    }

    /// Open interior, shrunk by the boundary tolerance.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|(l, s)| {
            let v: f64 = l.iter().zip(x).map(|(a, b)| a * b).sum();
            match s {
                Sign::Positive => v > self.tolerance,
                Sign::Negative => v < -self.tolerance,
                Sign::Zero => false,
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub id: usize,
    pub region: Region,
    pub poly: Polynomial,
}

/// Finite generator list whose convex hull is `∂f(point)`, ordered by piece id.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgradientSet {
    pub point: Vector,
    pub generators: Vec<Vector>,
    pub piece_ids: Vec<usize>,
}

impl SubgradientSet {
    pub fn len(&self) -> usize {
        self.generators.len()
    }
    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }
}

/// Reusable flat storage for generators, used on hot paths.
#[derive(Clone, Debug, Default)]
pub struct GeneratorBuffer {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<usize>,
}

impl GeneratorBuffer {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new(), ids: Vec::new() }
    }
    pub fn len(&self) -> usize {
        self.ids.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
    pub fn piece_id(&self, i: usize) -> usize {
        self.ids[i]
    }
    fn clear(&mut self, dim: usize) {
        self.dim = dim;
        self.data.clear();
        self.ids.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SelectionRule {
    /// Shortest element of the subdifferential.
    #[default]
    MinNorm,
    /// Gradient of the lowest-id covering piece.
    ActivePiece,
    /// A generator drawn uniformly.
    RandomVertex,
}

#[derive(Clone, Debug)]
pub struct PiecewiseSmoothFunction {
    name: String,
    dim: usize,
    pieces: Vec<Piece>,
    representative: Option<Polynomial>,
    manifold: Option<Manifold>,
    critical_point: Option<Vector>,
}

impl PiecewiseSmoothFunction {
    pub fn new(name: impl Into<String>, dim: usize, pieces: Vec<Piece>) -> Result<Self, FunctionError> {
        if pieces.is_empty() {
            return Err(FunctionError::InvalidParameter(String::from("at least one piece is required")));
        }
        for p in &pieces {
            if p.poly.dim != dim {
                return Err(FunctionError::DimensionMismatch { expected: dim, got: p.poly.dim });
            }
            if let Some((l, _)) = p.region.constraints.iter().find(|(l, _)| l.len() != dim) {
                return Err(FunctionError::DimensionMismatch { expected: dim, got: l.len() });
            }
        }
        Ok(Self { name: name.into(), dim, pieces, representative: None, manifold: None, critical_point: None })
    }

    /// Attaches a smooth representative `F` agreeing with `f` on the manifold.
    pub fn with_representative(mut self, rep: Polynomial) -> Self {
        self.representative = Some(rep);
        self
    }

    /// Attaches the active manifold and critical point annotation.
    pub fn with_annotation(mut self, manifold: Manifold, critical_point: Vector) -> Self {
        self.manifold = Some(manifold);
        self.critical_point = Some(critical_point);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }
    pub fn representative(&self) -> Option<&Polynomial> {
        self.representative.as_ref()
    }
    pub fn manifold(&self) -> Option<&Manifold> {
        self.manifold.as_ref()
    }
    pub fn critical_point(&self) -> Option<&Vector> {
        self.critical_point.as_ref()
    }

    /// Value of the first covering piece.
    pub fn evaluate(&self, x: &Vector) -> Result<f64, FunctionError> {
        self.evaluate_slice(x.as_slice())
    }

    pub fn evaluate_slice(&self, x: &[f64]) -> Result<f64, FunctionError> {
        self.pieces
            .iter()
            .find(|p| p.region.contains(x))
            .map(|p| p.poly.eval(x))
            .ok_or_else(|| FunctionError::MalformedFunction(x.to_vec()))
    }

    /// Gradients of every piece whose closed region contains `x`.
    ///
    /// Exact duplicates are kept once, under the lowest piece id.
    pub fn clarke_generators(&self, x: &Vector) -> SubgradientSet {
        let mut buf = GeneratorBuffer::new(self.dim);
        self.generators_into(x.as_slice(), &mut buf);
        let generators = (0..buf.len()).map(|i| Vector::from_row_slice(buf.get(i))).collect();
        let piece_ids = (0..buf.len()).map(|i| buf.piece_id(i)).collect();
        SubgradientSet { point: x.clone(), generators, piece_ids }
    }

    /// Allocation-free (after warm-up) variant of [`Self::clarke_generators`].
    pub fn generators_into(&self, x: &[f64], buf: &mut GeneratorBuffer) {
        let d = self.dim;
        buf.clear(d);
        for p in &self.pieces {
            if !p.region.contains(x) {
                continue;
            }
            let start = buf.data.len();
            buf.data.resize(start + d, 0.0);
            p.poly.gradient_into(x, &mut buf.data[start..]);
            let dup = (0..buf.ids.len()).any(|k| buf.data[k * d..(k + 1) * d] == buf.data[start..start + d]);
            if dup {
                buf.data.truncate(start);
            } else {
                buf.ids.push(p.id);
            }
        }
    }

    /// Projection of the origin onto the hull of the generators.
    pub fn min_norm_subgradient(&self, x: &Vector) -> Vector {
        let set = self.clarke_generators(x);
        if set.is_empty() {
            return Vector::zeros(self.dim);
        }
        min_norm_point(&set.generators).point
    }

    /// An element of `∂f(x)` chosen by `rule`. `rng` is consumed only by
    /// [`SelectionRule::RandomVertex`].
    pub fn select_subgradient<R: Rng + ?Sized>(&self, x: &Vector, rule: SelectionRule, rng: &mut R) -> Vector {
        let mut buf = GeneratorBuffer::new(self.dim);
        let mut out = Vector::zeros(self.dim);
        self.select_into(x.as_slice(), rule, rng, &mut buf, out.as_mut_slice());
        out
    }

    /// Writes the selected subgradient into `out`.
    pub fn select_into<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rule: SelectionRule,
        rng: &mut R,
        buf: &mut GeneratorBuffer,
        out: &mut [f64],
    ) {
        self.generators_into(x, buf);
        if buf.is_empty() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let pick = match rule {
            _ if buf.len() == 1 => 0,
            SelectionRule::ActivePiece => 0,
            SelectionRule::RandomVertex => rng.random_range(0..buf.len()),
            SelectionRule::MinNorm => {
                let pts: Vec<Vector> = (0..buf.len()).map(|i| Vector::from_row_slice(buf.get(i))).collect();
                out.copy_from_slice(min_norm_point(&pts).point.as_slice());
                return;
            }
        };
        out.copy_from_slice(buf.get(pick));
    }

    /// `f_u(x) = f(x) - <u, x>`. The manifold annotation is kept; the critical
    /// point annotation is dropped since tilting moves it in general.
    pub fn tilt(&self, u: &Vector) -> Result<Self, FunctionError> {
        if u.len() != self.dim {
            return Err(FunctionError::DimensionMismatch { expected: self.dim, got: u.len() });
        }
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece { id: p.id, region: p.region.clone(), poly: p.poly.tilted(u.as_slice()) })
            .collect();
        Ok(Self {
            name: format!("{}+tilt", self.name),
            dim: self.dim,
            pieces,
            representative: self.representative.as_ref().map(|r| r.tilted(u.as_slice())),
            manifold: self.manifold.clone(),
            critical_point: None,
        })
    }

    /// Largest generator norm over `n_samples` uniform points of the ball.
    pub fn lipschitz_bound_on<R: Rng + ?Sized>(&self, center: &Vector, radius: f64, n_samples: usize, rng: &mut R) -> f64 {
        let mut buf = GeneratorBuffer::new(self.dim);
        let mut best = 0.0f64;
        let mut visit = |x: &[f64], buf: &mut GeneratorBuffer| {
            self.generators_into(x, buf);
            for i in 0..buf.len() {
                best = best.max(crate::linalg::norm(buf.get(i)));
            }
        };
        visit(center.as_slice(), &mut buf);
        for _ in 0..n_samples {
            let x = crate::rng::uniform_in_ball(rng, center, radius);
            visit(x.as_slice(), &mut buf);
        }
        best
    }
}

/// Parameters for [`builtin`]; only `separable` reads them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuiltinParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

pub const CATALOG: &[&str] =
    &["saddle_abs", "double_abs", "neg_abs", "quad_abs", "abs_only", "z_squared", "verdier_fail", "separable"];

/// Looks up a catalog function by name.
pub fn builtin(name: &str, params: &BuiltinParams) -> Result<PiecewiseSmoothFunction, FunctionError> {
    match name {
        "saddle_abs" => Ok(saddle_abs()),
        "double_abs" => Ok(double_abs()),
        "neg_abs" => Ok(neg_abs()),
        "quad_abs" => Ok(quad_abs()),
        "abs_only" => Ok(abs_only()),
        "z_squared" => Ok(z_squared()),
        "verdier_fail" => Ok(verdier_fail()),
        "separable" => separable(&params.a, &params.b),
        other => Err(FunctionError::UnknownBuiltin(String::from(other))),
    }
}

fn sign_patterns(m: usize) -> impl Iterator<Item = Vec<Sign>> {
    (0..(1usize << m)).map(move |bits| {
        (0..m)
            .map(|j| if bits >> (m - 1 - j) & 1 == 0 { Sign::Positive } else { Sign::Negative })
            .collect()
    })
}

fn sign_value(s: Sign) -> f64 {
    match s {
        Sign::Positive => 1.0,
        Sign::Negative => -1.0,
        Sign::Zero => 0.0,
    }
}

fn horizontal_line() -> Manifold {
    Manifold::Affine(AffineManifold::coordinate(Vector::zeros(2), &[0]).expect("valid axes"))
}

/// `smooth(x) + Σ_j b_j |x_{abs_axes[j]}|`, one piece per sign pattern.
fn abs_family(name: &str, dim: usize, smooth: &[Monomial], abs_axes: &[usize], b: &[f64]) -> PiecewiseSmoothFunction {
    let pieces = sign_patterns(abs_axes.len())
        .enumerate()
        .map(|(id, pattern)| {
            let mut signs = vec![None; dim];
            let mut terms = smooth.to_vec();
            for (j, axis) in abs_axes.iter().enumerate() {
                signs[*axis] = Some(pattern[j]);
                terms.push(Monomial::single(b[j] * sign_value(pattern[j]), *axis, 1.0));
            }
            Piece { id, region: Region::from_coordinate_signs(&signs), poly: Polynomial { dim, terms } }
        })
        .collect();
    PiecewiseSmoothFunction::new(name, dim, pieces).expect("catalog construction is consistent")
}

/// `f(y, z) = -y² + |z|`; active strict saddle at 0 on `R × {0}`.
pub fn saddle_abs() -> PiecewiseSmoothFunction {
    let smooth = [Monomial::single(-1.0, 0, 2.0)];
    abs_family("saddle_abs", 2, &smooth, &[1], &[1.0])
        .with_representative(Polynomial { dim: 2, terms: smooth.to_vec() })
        .with_annotation(horizontal_line(), Vector::zeros(2))
}

/// `f(y, z) = -|y| + |z|`; sharply repulsive point at 0, `M = {0}`.
pub fn double_abs() -> PiecewiseSmoothFunction {
    abs_family("double_abs", 2, &[], &[0, 1], &[-1.0, 1.0])
        .with_representative(Polynomial::zero(2))
        .with_annotation(Manifold::point(Vector::zeros(2)), Vector::zeros(2))
}

/// `f(y, z) = -y² - |z|`; violates the angle condition.
pub fn neg_abs() -> PiecewiseSmoothFunction {
    let smooth = [Monomial::single(-1.0, 0, 2.0)];
    abs_family("neg_abs", 2, &smooth, &[1], &[-1.0])
        .with_representative(Polynomial { dim: 2, terms: smooth.to_vec() })
        .with_annotation(horizontal_line(), Vector::zeros(2))
}

/// `f(y, z) = y² + |z|`; local minimum at 0.
pub fn quad_abs() -> PiecewiseSmoothFunction {
    let smooth = [Monomial::single(1.0, 0, 2.0)];
    abs_family("quad_abs", 2, &smooth, &[1], &[1.0])
        .with_representative(Polynomial { dim: 2, terms: smooth.to_vec() })
        .with_annotation(horizontal_line(), Vector::zeros(2))
}

/// `f(y, z) = |z|`.
pub fn abs_only() -> PiecewiseSmoothFunction {
    abs_family("abs_only", 2, &[], &[1], &[1.0])
        .with_representative(Polynomial::zero(2))
        .with_annotation(horizontal_line(), Vector::zeros(2))
}

/// `f(y, z) = z²`; smooth, not sharp along `R × {0}`.
pub fn z_squared() -> PiecewiseSmoothFunction {
    let poly = Polynomial { dim: 2, terms: vec![Monomial::single(1.0, 1, 2.0)] };
    PiecewiseSmoothFunction::new("z_squared", 2, vec![Piece { id: 0, region: Region::whole_space(), poly }])
        .expect("single piece")
        .with_representative(Polynomial::zero(2))
        .with_annotation(horizontal_line(), Vector::zeros(2))
}

/// `f(y, z) = |z| + y·|z|^{1/2}`: smooth on `R × {0}` (where it vanishes) but
/// its tangential subgradient component decays like `|z|^{1/2}`, so the
/// Verdier ratio blows up near the manifold.
pub fn verdier_fail() -> PiecewiseSmoothFunction {
    let pieces = [Sign::Positive, Sign::Negative]
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let terms = vec![
                Monomial::single(sign_value(*s), 1, 1.0),
                Monomial { coeff: 1.0, factors: vec![(0, 1.0), (1, 0.5)] },
            ];
            Piece { id, region: Region::from_coordinate_signs(&[None, Some(*s)]), poly: Polynomial { dim: 2, terms } }
        })
        .collect();
    PiecewiseSmoothFunction::new("verdier_fail", 2, pieces)
        .expect("catalog construction is consistent")
        .with_representative(Polynomial::zero(2))
        .with_annotation(horizontal_line(), Vector::zeros(2))
}

/// `f(x) = Σ a_i x_i² + Σ b_j |x_{k+j}|` on `R^{k+m}` with `M = R^k × {0}^m`.
pub fn separable(a: &[f64], b: &[f64]) -> Result<PiecewiseSmoothFunction, FunctionError> {
    if b.is_empty() {
        return Err(FunctionError::InvalidParameter(String::from("separable needs at least one b coefficient")));
    }
    if let Some(bad) = b.iter().find(|v| !(**v > 0.0)) {
        return Err(FunctionError::InvalidParameter(format!("separable b coefficients must be > 0, got {bad}")));
    }
    if b.len() > 16 {
        return Err(FunctionError::InvalidParameter(String::from("at most 16 nonsmooth coordinates are supported")));
    }
    let (k, m) = (a.len(), b.len());
    let d = k + m;
    let smooth: Vec<Monomial> = a.iter().enumerate().map(|(i, ai)| Monomial::single(*ai, i, 2.0)).collect();
    let axes: Vec<usize> = (k..d).collect();
    let axes_m: Vec<usize> = (0..k).collect();
    let manifold = Manifold::Affine(AffineManifold::coordinate(Vector::zeros(d), &axes_m).expect("valid axes"));
    Ok(abs_family("separable", d, &smooth, &axes, b)
        .with_representative(Polynomial { dim: d, terms: smooth.clone() })
        .with_annotation(manifold, Vector::zeros(d)))
}
