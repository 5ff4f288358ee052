use proptest::prelude::*;
use saddlescape_core::functions::saddle_abs;
use saddlescape_core::geometry::{riem_gradient, riem_hessian, subspace_aperture, AffineManifold, Manifold, SmoothFunction};
use saddlescape_core::{Matrix, Vector};

fn plane() -> Manifold {
    let spanning = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
    Manifold::Affine(AffineManifold::from_spanning(Vector::from_row_slice(&[0.5, -1.0, 0.25]), &spanning).unwrap())
}

proptest! {
    #[test]
    fn affine_projection_is_idempotent_and_orthogonal(x in prop::collection::vec(-10.0f64..10.0, 3)) {
        let m = plane();
        let x = Vector::from_vec(x);
        let p = m.project(&x).unwrap();
        let pp = m.project(&p).unwrap();
        prop_assert!((&pp - &p).norm() <= 1e-10);
        let basis = m.tangent_basis(&p).unwrap();
        for b in basis.column_iter() {
            prop_assert!((&x - &p).dot(&b).abs() <= 1e-12 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn circle_projection_is_idempotent(angle in 0.0f64..std::f64::consts::TAU, radius in 0.3f64..1.7) {
        let m = Manifold::unit_circle(3.0);
        let x = Vector::from_row_slice(&[radius * angle.cos(), radius * angle.sin()]);
        let p = m.project(&x).unwrap();
        prop_assert!((p.norm() - 1.0).abs() <= 1e-10);
        let pp = m.project(&p).unwrap();
        prop_assert!((&pp - &p).norm() <= 1e-10);
    }

    #[test]
    fn riemannian_gradient_matches_one_sided_differences(y in -1.0f64..1.0) {
        let f = saddle_abs();
        let rep = f.representative().unwrap().clone();
        let m = f.manifold().unwrap().clone();
        let p = Vector::from_row_slice(&[y, 0.0]);
        let g = riem_gradient(&rep, &m, &p).unwrap();
        let h = 1e-7;
        let b = Vector::from_row_slice(&[1.0, 0.0]);
        let fd = (rep.value(&(&p + &b * h)) - rep.value(&p)) / h;
        prop_assert!((g.dot(&b) - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
    }
}

#[test]
fn riemannian_hessian_matches_second_differences() {
    let f = saddle_abs();
    let rep = f.representative().unwrap().clone();
    let m = f.manifold().unwrap().clone();
    let p = Vector::zeros(2);
    let hess = riem_hessian(&rep, &m, &p).unwrap();
    let h = 1e-3;
    let b = Vector::from_row_slice(&[1.0, 0.0]);
    let fd = (rep.value(&(&p + &b * h)) - 2.0 * rep.value(&p) + rep.value(&(&p - &b * h))) / (h * h);
    assert!((hess[(0, 0)] - fd).abs() <= 1e-4);
    assert!((hess[(0, 0)] + 2.0).abs() <= 1e-4);
}

#[test]
fn zero_aperture_means_containment() {
    let e1 = Matrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]) / 2f64.sqrt();
    let e2 = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    assert!(subspace_aperture(&e1, &e2) <= 1e-12);
    let proj = &e2 * e2.transpose();
    for col in e1.column_iter() {
        assert!((&proj * col - col).norm() <= 1e-10);
    }
    let e3 = Matrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
    assert!((subspace_aperture(&e3, &e2) - 1.0).abs() <= 1e-12);
}
