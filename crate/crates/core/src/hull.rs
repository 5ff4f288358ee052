//! Minimum-norm point of the convex hull of finitely many points.
//!
//! Wolfe's active-set algorithm: maintain an affinely independent corral of
//! points, repeatedly add the point most violating the optimality condition
//! `<x, p> >= |x|^2`, and drop points whose barycentric weight would turn
//! negative. It terminates after finitely many corral changes and returns an
//! exact (up to rounding) convex combination.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{dot, Vector};

/// Result of a minimum-norm solve: the point and its convex weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MinNormPoint {
    pub point: Vector,
    /// One weight per input point, non-negative, summing to one.
    pub weights: Vec<f64>,
}

const OPT_TOL: f64 = 1e-12;
const WEIGHT_TOL: f64 = 1e-14;

/// Euclidean projection of the origin onto `conv(points)`.
///
/// Panics if `points` is empty or the dimensions disagree.
pub fn min_norm_point(points: &[Vector]) -> MinNormPoint {
    assert!(!points.is_empty(), "convex hull of an empty set");
    let d = points[0].len();
    assert!(points.iter().all(|p| p.len() == d), "dimension mismatch");
    let n = points.len();
    if n == 1 {
        return MinNormPoint { point: points[0].clone(), weights: vec![1.0] };
    }
    let scale = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(1e-300);

    // start from the shortest point
    let first = (0..n)
        .min_by(|&a, &b| points[a].norm_squared().total_cmp(&points[b].norm_squared()))
        .unwrap();
    let mut corral: Vec<usize> = vec![first];
    let mut lambda: Vec<f64> = vec![1.0];
    let mut x = points[first].clone();

    for _major in 0..(50 * n + 50) {
        let xx = x.norm_squared();
        if xx <= OPT_TOL * OPT_TOL * scale {
            break;
        }
        let (j, best) = (0..n)
            .map(|i| (i, dot(x.as_slice(), points[i].as_slice())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if best >= xx - OPT_TOL * scale || corral.contains(&j) {
            break;
        }
        corral.push(j);
        lambda.push(0.0);

        for _minor in 0..(n + 2) {
            let alpha = match affine_minimizer(points, &corral) {
                Some(a) => a,
                None => {
                    // affinely dependent corral: drop the entering point
                    corral.pop();
                    lambda.pop();
                    break;
                }
            };
            if alpha.iter().all(|&a| a > WEIGHT_TOL) {
                lambda = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (l, a) in lambda.iter().zip(&alpha) {
                if *a <= WEIGHT_TOL {
                    let denom = l - a;
                    if denom > 0.0 {
                        theta = theta.min(l / denom);
                    }
                }
            }
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l += theta * (a - *l);
            }
            let mut k = 0;
            while k < corral.len() {
                if lambda[k] <= WEIGHT_TOL {
                    corral.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = lambda.iter().sum();
            for l in lambda.iter_mut() {
                *l /= total;
            }
            if corral.len() == 1 {
                break;
            }
        }
        x = combine(points, &corral, &lambda);
    }

    let mut weights = vec![0.0; n];
    for (idx, l) in corral.iter().zip(&lambda) {
        weights[*idx] = *l;
    }
    MinNormPoint { point: x, weights }
}

fn combine(points: &[Vector], corral: &[usize], lambda: &[f64]) -> Vector {
    let mut x = Vector::zeros(points[0].len());
    for (idx, l) in corral.iter().zip(lambda) {
        x.axpy(*l, &points[*idx], 1.0);
    }
    x
}

/// Minimizer of the norm over the affine hull of the corral, as barycentric
/// coordinates. `None` when the corral is affinely dependent.
fn affine_minimizer(points: &[Vector], corral: &[usize]) -> Option<Vec<f64>> {
    let m = corral.len();
    let mut kkt = DMatrix::<f64>::zeros(m + 1, m + 1);
    for a in 0..m {
        for b in 0..m {
            kkt[(a, b)] = dot(points[corral[a]].as_slice(), points[corral[b]].as_slice());
        }
        kkt[(a, m)] = 1.0;
        kkt[(m, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m + 1);
    rhs[m] = 1.0;
    let lu = kkt.lu();
    let sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(sol.iter().take(m).cloned().collect())
}

/// Whether `target` lies in `conv(points)` up to `tol` in distance.
pub fn hull_contains(points: &[Vector], target: &Vector, tol: f64) -> bool {
    let shifted: Vec<Vector> = points.iter().map(|p| p - target).collect();
    min_norm_point(&shifted).point.norm() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    #[test]
    fn segment_projection() {
        let r = min_norm_point(&[v(&[-1.0, 1.0]), v(&[-1.0, -1.0])]);
        assert_eq!(r.point, v(&[-1.0, 0.0]));
        assert_eq!(r.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn square_contains_origin() {
        let pts = [v(&[1.0, 1.0]), v(&[-1.0, 1.0]), v(&[1.0, -1.0]), v(&[-1.0, -1.0])];
        let r = min_norm_point(&pts);
        assert!(r.point.norm() < 1e-14);
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn vertex_is_closest() {
        // (3,1) - (1,2) = (2,-1) is orthogonal to (1,2), so the vertex wins
        let r = min_norm_point(&[v(&[1.0, 2.0]), v(&[3.0, 1.0]), v(&[2.0, 5.0])]);
        assert!((r.point - v(&[1.0, 2.0])).norm() < 1e-14);
    }

    #[test]
    fn edge_is_closest() {
        // foot of the perpendicular on (1,2)-(3,-1): t = 4/13
        let r = min_norm_point(&[v(&[1.0, 2.0]), v(&[3.0, -1.0]), v(&[4.0, 4.0])]);
        assert!((r.point - v(&[21.0 / 13.0, 14.0 / 13.0])).norm() < 1e-14);
        assert!(r.weights[2] == 0.0);
    }

    #[test]
    fn duplicate_points_do_not_stall() {
        let p = v(&[0.0, 1.0]);
        let r = min_norm_point(&[p.clone(), p.clone(), v(&[1.0, 1.0])]);
        assert!((r.point - p).norm() < 1e-15);
    }

    #[test]
    fn containment() {
        let pts = [v(&[0.0, 1.0]), v(&[0.0, -1.0])];
        assert!(hull_contains(&pts, &v(&[0.0, 0.3]), 1e-12));
        assert!(!hull_contains(&pts, &v(&[0.1, 0.3]), 1e-12));
    }
}
