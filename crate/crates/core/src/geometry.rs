//! Manifolds, projections and Riemannian derivatives.
//!
//! Two kinds of manifolds are supported. An affine manifold is a base point
//! plus an orthonormal tangent basis; its projection is exact and global. An
//! implicit manifold is the zero set of a constraint map `c: R^d -> R^{d-k}`
//! with a Jacobian oracle; its projection is computed locally by a damped
//! Gauss–Newton iteration on the stationarity system and is only trusted
//! within a configured radius of a reference point.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::linalg::{orthonormal_basis, orthonormality_defect, projector, symmetrize, Matrix, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("projection did not converge (residual {residual:e})")]
    NoConvergence { last_iterate: Vector, residual: f64 },
    #[error("constraint Jacobian is rank deficient at the given point")]
    SingularConstraint,
    #[error("point is {distance} away from the reference point, beyond validity radius {radius}")]
    OutsideValidityRegion { distance: f64, radius: f64 },
    #[error("point is not on the manifold (residual {residual:e})")]
    NotOnManifold { residual: f64 },
    #[error("finite-difference step underflows at this point")]
    DegenerateStep,
    #[error("invalid manifold: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A smooth function with closed-form derivatives.
pub trait SmoothFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    fn hessian(&self, x: &Vector) -> Matrix;
}

/// Constraint map whose zero set is an implicit manifold.
pub trait Constraint: Send + Sync + fmt::Debug {
    fn ambient_dim(&self) -> usize;
    /// Number of constraint equations, `d - k`.
    fn codim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
    /// `codim × d` Jacobian.
    fn jacobian(&self, x: &Vector) -> Matrix;
    fn name(&self) -> String {
        String::from("custom")
    }
}

/// Sphere `{x : |x - center|^2 = radius^2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vector,
    pub radius: f64,
}

impl Constraint for Sphere {
    fn ambient_dim(&self) -> usize {
        self.center.len()
    }
    fn codim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_element(1, (x - &self.center).norm_squared() - self.radius * self.radius)
    }
    fn jacobian(&self, x: &Vector) -> Matrix {
        let g = (x - &self.center) * 2.0;
        Matrix::from_row_slice(1, g.len(), g.as_slice())
    }
    fn name(&self) -> String {
        format!("sphere(r={})", self.radius)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineManifold {
    base: Vector,
    basis: Matrix,
}

impl AffineManifold {
    /// `basis` columns must be orthonormal to 1e-12.
    pub fn new(base: Vector, basis: Matrix) -> Result<Self, GeometryError> {
        if basis.nrows() != base.len() {
            return Err(GeometryError::DimensionMismatch { expected: base.len(), got: basis.nrows() });
        }
        if basis.ncols() > base.len() {
            return Err(GeometryError::Invalid(String::from("more basis vectors than ambient dimension")));
        }
        let defect = orthonormality_defect(&basis);
        if defect > 1e-12 {
            return Err(GeometryError::Invalid(format!("tangent basis not orthonormal (defect {defect:e})")));
        }
        Ok(Self { base, basis })
    }

    /// Orthonormalizes the given spanning columns first.
    pub fn from_spanning(base: Vector, spanning: &Matrix) -> Result<Self, GeometryError> {
        let basis = if spanning.ncols() == 0 {
            Matrix::zeros(base.len(), 0)
        } else {
            orthonormal_basis(spanning, 1e-10)
        };
        Self::new(base, basis)
    }

    /// Coordinate subspace through `base` spanned by the listed axes.
    pub fn coordinate(base: Vector, axes: &[usize]) -> Result<Self, GeometryError> {
        let d = base.len();
        if let Some(&bad) = axes.iter().find(|&&a| a >= d) {
            return Err(GeometryError::Invalid(format!("axis {bad} out of range for dimension {d}")));
        }
        let basis = Matrix::from_fn(d, axes.len(), |r, c| if axes[c] == r { 1.0 } else { 0.0 });
        Self::new(base, basis)
    }

    pub fn base(&self) -> &Vector {
        &self.base
    }
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }
}

#[derive(Clone, Debug)]
pub struct ImplicitManifold {
    constraint: Arc<dyn Constraint>,
    reference_point: Vector,
    validity_radius: f64,
    max_iter: usize,
}

impl ImplicitManifold {
    /// `reach` is the caller's local reach estimate; the validity radius
    /// defaults to half of it.
    pub fn new(constraint: Arc<dyn Constraint>, reference_point: Vector, reach: f64) -> Result<Self, GeometryError> {
        let d = constraint.ambient_dim();
        if reference_point.len() != d {
            return Err(GeometryError::DimensionMismatch { expected: d, got: reference_point.len() });
        }
        if constraint.codim() > d {
            return Err(GeometryError::Invalid(String::from("codimension exceeds ambient dimension")));
        }
        let jac = constraint.jacobian(&reference_point);
        if orthonormal_basis(&jac.transpose(), 1e-10).ncols() != constraint.codim() {
            return Err(GeometryError::SingularConstraint);
        }
        Ok(Self { constraint, reference_point, validity_radius: 0.5 * reach, max_iter: 100 })
    }

    pub fn with_validity_radius(mut self, radius: f64) -> Self {
        self.validity_radius = radius;
        self
    }

    pub fn constraint(&self) -> &Arc<dyn Constraint> {
        &self.constraint
    }
    pub fn reference_point(&self) -> &Vector {
        &self.reference_point
    }
    pub fn validity_radius(&self) -> f64 {
        self.validity_radius
    }

    fn tangent_projector_at(&self, y: &Vector) -> Result<Matrix, GeometryError> {
        let d = y.len();
        let jac = self.constraint.jacobian(y);
        let gram = &jac * jac.transpose();
        let inv = gram.clone().try_inverse().ok_or(GeometryError::SingularConstraint)?;
        if crate::linalg::condition_number(&gram) > 1e14 {
            return Err(GeometryError::SingularConstraint);
        }
        Ok(Matrix::identity(d, d) - jac.transpose() * inv * jac)
    }

    fn project(&self, x: &Vector) -> Result<Vector, GeometryError> {
        let distance = (x - &self.reference_point).norm();
        if distance > self.validity_radius {
            return Err(GeometryError::OutsideValidityRegion { distance, radius: self.validity_radius });
        }
        let scale = 1.0 + x.norm();
        let mut y = x.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..self.max_iter {
            let c = self.constraint.eval(&y);
            let jac = self.constraint.jacobian(&y);
            let gram = &jac * jac.transpose();
            let lu = gram.lu();
            let rhs = &jac * (x - &y) + &c;
            let mu = lu.solve(&rhs).ok_or(GeometryError::SingularConstraint)?;
            let step = (x - &y) - jac.transpose() * mu;
            // damping: never increase the constraint residual by more than 10x
            let c_norm = c.norm();
            let mut t = 1.0;
            let mut candidate = &y + &step * t;
            for _ in 0..30 {
                let cn = self.constraint.eval(&candidate).norm();
                if cn.is_finite() && (cn <= 10.0 * c_norm + 1e-12) {
                    break;
                }
                t *= 0.5;
                candidate = &y + &step * t;
            }
            y = candidate;
            let c_new = self.constraint.eval(&y).norm();
            let stationarity = match self.tangent_projector_at(&y) {
                Ok(p) => (p * (x - &y)).norm(),
                Err(_) => f64::INFINITY,
            };
            residual = c_new.max(stationarity / scale);
            if c_new <= 1e-13 * scale && stationarity <= 1e-12 * scale && (&step * t).norm() <= 1e-10 * scale {
                return Ok(y);
            }
        }
        if residual <= 1e-11 {
            return Ok(y);
        }
        Err(GeometryError::NoConvergence { last_iterate: y, residual })
    }
}

/// A submanifold of `R^d` with a projection neighbourhood.
#[derive(Clone, Debug)]
pub enum Manifold {
    Affine(AffineManifold),
    Implicit(ImplicitManifold),
}

/// Orthogonal projector onto `T_y M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentProjector {
    pub matrix: Matrix,
    pub manifold_point: Vector,
}

impl TangentProjector {
    pub fn apply(&self, v: &Vector) -> Vector {
        &self.matrix * v
    }

    /// Orthonormal basis of the tangent space, as columns.
    pub fn basis(&self) -> Matrix {
        let d = self.matrix.nrows();
        let eig = symmetrize(&self.matrix).symmetric_eigen();
        let keep: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        Matrix::from_fn(d, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
    }
}

impl Manifold {
    /// Unit circle in the plane; convenience for tests and demos.
    pub fn unit_circle(validity_radius: f64) -> Self {
        let sphere = Sphere { center: Vector::zeros(2), radius: 1.0 };
        let m = ImplicitManifold::new(Arc::new(sphere), Vector::from_row_slice(&[1.0, 0.0]), 1.0)
            .expect("unit circle is regular")
            .with_validity_radius(validity_radius);
        Manifold::Implicit(m)
    }

    /// The whole space `R^d` (tangent basis = identity).
    pub fn full(d: usize) -> Self {
        Manifold::Affine(AffineManifold::new(Vector::zeros(d), Matrix::identity(d, d)).expect("identity basis"))
    }

    /// The single point `{p}`.
    pub fn point(p: Vector) -> Self {
        let d = p.len();
        Manifold::Affine(AffineManifold::new(p, Matrix::zeros(d, 0)).expect("empty basis"))
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Affine(a) => a.base.len(),
            Manifold::Implicit(m) => m.constraint.ambient_dim(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Manifold::Affine(a) => a.basis.ncols(),
            Manifold::Implicit(m) => m.constraint.ambient_dim() - m.constraint.codim(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Manifold::Affine(_))
    }

    fn check_dim(&self, x: &Vector) -> Result<(), GeometryError> {
        let d = self.ambient_dim();
        if x.len() != d {
            return Err(GeometryError::DimensionMismatch { expected: d, got: x.len() });
        }
        Ok(())
    }

    /// `P_M(x)`, the nearest point of `M`.
    pub fn project(&self, x: &Vector) -> Result<Vector, GeometryError> {
        self.check_dim(x)?;
        match self {
            Manifold::Affine(a) => {
                let offset = x - &a.base;
                let coords = a.basis.transpose() * offset;
                Ok(&a.base + &a.basis * coords)
            }
            Manifold::Implicit(m) => m.project(x),
        }
    }

    /// Constraint residual of `y` (distance to `M` for affine manifolds).
    pub fn residual(&self, y: &Vector) -> Result<f64, GeometryError> {
        self.check_dim(y)?;
        match self {
            Manifold::Affine(a) => {
                let offset = y - &a.base;
                let tangential = &a.basis * (a.basis.transpose() * &offset);
                Ok((offset - tangential).norm())
            }
            Manifold::Implicit(m) => Ok(m.constraint.eval(y).norm()),
        }
    }

    /// `dist(x, M) = |x - P_M(x)|`.
    pub fn distance(&self, x: &Vector) -> Result<f64, GeometryError> {
        Ok((x - self.project(x)?).norm())
    }

    /// Projector onto `T_y M`; `y` must lie on `M` (residual <= 1e-8).
    pub fn tangent_projector(&self, y: &Vector) -> Result<TangentProjector, GeometryError> {
        let residual = self.residual(y)?;
        if residual > 1e-8 {
            return Err(GeometryError::NotOnManifold { residual });
        }
        let matrix = match self {
            Manifold::Affine(a) => projector(&a.basis),
            Manifold::Implicit(m) => m.tangent_projector_at(y)?,
        };
        Ok(TangentProjector { matrix, manifold_point: y.clone() })
    }

    /// Orthonormal tangent basis at `y ∈ M`.
    pub fn tangent_basis(&self, y: &Vector) -> Result<Matrix, GeometryError> {
        match self {
            Manifold::Affine(a) => {
                let residual = self.residual(y)?;
                if residual > 1e-8 {
                    return Err(GeometryError::NotOnManifold { residual });
                }
                Ok(a.basis.clone())
            }
            Manifold::Implicit(_) => Ok(self.tangent_projector(y)?.basis()),
        }
    }

    /// Jacobian of `P_M` at an arbitrary point `x` of the projection
    /// neighbourhood. Exact for affine manifolds, central differences otherwise.
    pub fn projection_jacobian(&self, x: &Vector) -> Result<Matrix, GeometryError> {
        match self {
            Manifold::Affine(a) => {
                self.check_dim(x)?;
                Ok(projector(&a.basis))
            }
            Manifold::Implicit(_) => {
                let d = x.len();
                let h = fd_step(x)?;
                let mut jac = Matrix::zeros(d, d);
                for j in 0..d {
                    let mut plus = x.clone();
                    let mut minus = x.clone();
                    plus[j] += h;
                    minus[j] -= h;
                    let col = (self.project(&plus)? - self.project(&minus)?) / (2.0 * h);
                    jac.set_column(j, &col);
                }
                Ok(jac)
            }
        }
    }

    /// Second-order Taylor remainder `P_M(x') - P_M(x) - J_{P_M}(x)(x' - x)`.
    ///
    /// Identically zero for affine manifolds, whose projection is affine.
    pub fn projection_remainder(&self, x: &Vector, x_next: &Vector) -> Result<Vector, GeometryError> {
        match self {
            Manifold::Affine(_) => {
                self.check_dim(x)?;
                Ok(Vector::zeros(x.len()))
            }
            Manifold::Implicit(_) => {
                let jac = self.projection_jacobian(x)?;
                Ok(self.project(x_next)? - self.project(x)? - jac * (x_next - x))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Manifold::Affine(a) => format!("affine(d={}, k={})", a.base.len(), a.basis.ncols()),
            Manifold::Implicit(m) => format!("implicit({}, d={})", m.constraint.name(), self.ambient_dim()),
        }
    }
}

/// `P_M(x)`.
pub fn project(manifold: &Manifold, x: &Vector) -> Result<Vector, GeometryError> {
    manifold.project(x)
}

/// `P_{T_y M}`.
pub fn tangent_projector(manifold: &Manifold, y: &Vector) -> Result<TangentProjector, GeometryError> {
    manifold.tangent_projector(y)
}

/// `dist(x, M)`.
pub fn manifold_distance(manifold: &Manifold, x: &Vector) -> Result<f64, GeometryError> {
    manifold.distance(x)
}

/// Riemannian gradient `P_{T_y M} ∇F(y)` of a smooth representative `F`.
pub fn riem_gradient(f: &dyn SmoothFunction, manifold: &Manifold, y: &Vector) -> Result<Vector, GeometryError> {
    let p = manifold.tangent_projector(y)?;
    Ok(p.apply(&f.gradient(y)))
}

fn fd_step(y: &Vector) -> Result<f64, GeometryError> {
    let h = f64::max(1e-5, 1e-5 * y.norm());
    if !h.is_finite() {
        return Err(GeometryError::DegenerateStep);
    }
    for v in y.iter() {
        if (v + h) - v == 0.0 {
            return Err(GeometryError::DegenerateStep);
        }
    }
    Ok(h)
}

/// Riemannian Hessian of `F|_M` at `y`, in tangent coordinates (`k × k`).
///
/// Entry `(i, j)` is `b_iᵀ P_T J_G(y) b_j` with `G(x) = P_{T_{P_M(x)}M} ∇F(P_M(x))`
/// and `J_G b_j` taken by central differences along the tangent basis.
pub fn riem_hessian(f: &dyn SmoothFunction, manifold: &Manifold, y: &Vector) -> Result<Matrix, GeometryError> {
    let basis = manifold.tangent_basis(y)?;
    let k = basis.ncols();
    if k == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let pt = manifold.tangent_projector(y)?;
    let h = fd_step(y)?;
    let field = |x: &Vector| -> Result<Vector, GeometryError> {
        let p = manifold.project(x)?;
        let proj = manifold.tangent_projector(&p)?;
        Ok(proj.apply(&f.gradient(&p)))
    };
    let mut jg_b = Matrix::zeros(y.len(), k);
    for j in 0..k {
        let b = basis.column(j).into_owned();
        let plus = field(&(y + &b * h))?;
        let minus = field(&(y - &b * h))?;
        jg_b.set_column(j, &(pt.apply(&((plus - minus) / (2.0 * h)))));
    }
    Ok(symmetrize(&(basis.transpose() * jg_b)))
}

/// Aperture `sup_{u ∈ E1, |u| = 1} dist(u, E2)` between column spans.
///
/// Returns 0 when `E1 = {0}`.
pub fn subspace_aperture(e1: &Matrix, e2: &Matrix) -> f64 {
    let b1 = orthonormal_basis(e1, 1e-10);
    if b1.ncols() == 0 {
        return 0.0;
    }
    let d = b1.nrows();
    let b2 = orthonormal_basis(e2, 1e-10);
    let residual = (Matrix::identity(d, d) - projector(&b2)) * b1;
    crate::linalg::spectral_norm(&residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        // F(x) = sum_i c_i x_i^2 + <l, x>
        c: Vec<f64>,
        l: Vec<f64>,
    }

    impl SmoothFunction for Quadratic {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn value(&self, x: &Vector) -> f64 {
            x.iter().enumerate().map(|(i, v)| self.c[i] * v * v + self.l[i] * v).sum()
        }
        fn gradient(&self, x: &Vector) -> Vector {
            Vector::from_iterator(x.len(), x.iter().enumerate().map(|(i, v)| 2.0 * self.c[i] * v + self.l[i]))
        }
        fn hessian(&self, x: &Vector) -> Matrix {
            Matrix::from_fn(x.len(), x.len(), |i, j| if i == j { 2.0 * self.c[i] } else { 0.0 })
        }
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn horizontal_line() -> Manifold {
        Manifold::Affine(AffineManifold::coordinate(Vector::zeros(2), &[0]).unwrap())
    }

    #[test]
    fn affine_projection_examples() {
        assert_eq!(horizontal_line().project(&v(&[2.0, 3.0])).unwrap(), v(&[2.0, 0.0]));
        assert_eq!(Manifold::point(Vector::zeros(2)).project(&v(&[0.3, -0.4])).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn circle_projection_matches_radial_formula() {
        let circle = Manifold::unit_circle(3.0);
        let y = circle.project(&v(&[2.0, 0.0])).unwrap();
        assert!((y - v(&[1.0, 0.0])).norm() < 1e-12);
        // radial oracle x / |x|
        for x in [v(&[0.3, 0.9]), v(&[-1.4, 0.2]), v(&[0.0, 0.5])] {
            let y = circle.project(&x).unwrap();
            let radial = &x / x.norm();
            assert!((y - radial).norm() < 1e-12);
        }
    }

    #[test]
    fn validity_radius_is_enforced() {
        let circle = Manifold::unit_circle(0.5);
        assert!(matches!(
            circle.project(&v(&[-1.0, 0.0])),
            Err(GeometryError::OutsideValidityRegion { .. })
        ));
    }

    #[test]
    fn tangent_projector_examples() {
        let p = horizontal_line().tangent_projector(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(p.matrix, Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let p0 = Manifold::point(Vector::zeros(2)).tangent_projector(&Vector::zeros(2)).unwrap();
        assert_eq!(p0.matrix, Matrix::zeros(2, 2));
        let pc = Manifold::unit_circle(3.0).tangent_projector(&v(&[0.0, 1.0])).unwrap();
        assert!((pc.matrix - Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn off_manifold_point_is_rejected() {
        assert!(matches!(
            horizontal_line().tangent_projector(&v(&[1.0, 0.1])),
            Err(GeometryError::NotOnManifold { .. })
        ));
    }

    #[test]
    fn riemannian_gradient_examples() {
        let f = Quadratic { c: alloc::vec![-1.0, 0.0], l: alloc::vec![0.0, 0.0] };
        let g = riem_gradient(&f, &horizontal_line(), &v(&[0.5, 0.0])).unwrap();
        assert!((g - v(&[-1.0, 0.0])).norm() < 1e-15);
        let lin = Quadratic { c: alloc::vec![0.0, 0.0], l: alloc::vec![0.0, 1.0] };
        assert_eq!(riem_gradient(&lin, &horizontal_line(), &v(&[0.7, 0.0])).unwrap(), v(&[0.0, 0.0]));
        let full = riem_gradient(&f, &Manifold::full(2), &v(&[0.2, 0.4])).unwrap();
        assert_eq!(full, f.gradient(&v(&[0.2, 0.4])));
    }

    #[test]
    fn riemannian_hessian_examples() {
        let f = Quadratic { c: alloc::vec![-1.0, 0.0], l: alloc::vec![0.0, 0.0] };
        let h = riem_hessian(&f, &horizontal_line(), &Vector::zeros(2)).unwrap();
        assert!((h[(0, 0)] + 2.0).abs() < 1e-4);
        let bowl = Quadratic { c: alloc::vec![1.0, 1.0], l: alloc::vec![0.0, 0.0] };
        assert!((riem_hessian(&bowl, &horizontal_line(), &Vector::zeros(2)).unwrap()[(0, 0)] - 2.0).abs() < 1e-4);
        let lin = Quadratic { c: alloc::vec![0.0, 0.0], l: alloc::vec![1.0, -3.0] };
        assert!(riem_hessian(&lin, &horizontal_line(), &v(&[0.3, 0.0])).unwrap().norm() < 1e-8);
        assert_eq!(riem_hessian(&f, &Manifold::point(Vector::zeros(2)), &Vector::zeros(2)).unwrap().nrows(), 0);
    }

    #[test]
    fn circle_hessian_includes_curvature() {
        // F(x, y) = y restricted to the unit circle: f(θ) = sin θ, f''(π/2) = -1
        let f = Quadratic { c: alloc::vec![0.0, 0.0], l: alloc::vec![0.0, 1.0] };
        let circle = Manifold::unit_circle(3.0);
        let h = riem_hessian(&f, &circle, &v(&[0.0, 1.0])).unwrap();
        assert!((h[(0, 0)] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn aperture_examples() {
        let e1 = Matrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let e2 = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(subspace_aperture(&e1, &e1) < 1e-15);
        assert_eq!(subspace_aperture(&Matrix::zeros(2, 0), &e2), 0.0);
        assert!((subspace_aperture(&e1, &e2) - 1.0).abs() < 1e-15);
        assert_eq!(subspace_aperture(&Matrix::zeros(2, 1), &e2), 0.0);
    }

    #[test]
    fn distance_examples() {
        assert!((horizontal_line().distance(&v(&[5.0, 0.2])).unwrap() - 0.2).abs() < 1e-15);
        assert!((Manifold::point(Vector::zeros(2)).distance(&v(&[3.0, 4.0])).unwrap() - 5.0).abs() < 1e-15);
        assert!((Manifold::unit_circle(3.0).distance(&v(&[0.0, 0.5])).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_orthonormal_basis_rejected() {
        let basis = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(AffineManifold::new(Vector::zeros(2), basis.clone()).is_err());
        let m = AffineManifold::from_spanning(Vector::zeros(2), &basis).unwrap();
        assert!((m.basis()[(0, 0)].abs() - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
