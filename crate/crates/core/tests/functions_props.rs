use proptest::prelude::*;
use rand::Rng;
use saddlescape_core::functions::{builtin, saddle_abs, separable, BuiltinParams, CATALOG};
use saddlescape_core::geometry::SmoothFunction;
use saddlescape_core::hull::{hull_contains, min_norm_point};
use saddlescape_core::rng::substream;
use saddlescape_core::Vector;

fn seg_closest(a: &Vector, b: &Vector) -> Vector {
    let d = b - a;
    let t = if d.norm_squared() == 0.0 { 0.0 } else { (-a.dot(&d) / d.norm_squared()).clamp(0.0, 1.0) };
    a + d * t
}

fn origin_in_triangle(a: &Vector, b: &Vector, c: &Vector) -> bool {
    let cross = |p: &Vector, q: &Vector| p[0] * q[1] - p[1] * q[0];
    let s1 = cross(&(b - a), &(-a));
    let s2 = cross(&(c - b), &(-b));
    let s3 = cross(&(a - c), &(-c));
    (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
}

/// Planar minimum norm over the hull by enumerating vertices, edges and triangles.
fn brute_min_norm(points: &[Vector]) -> f64 {
    let mut best = points.iter().map(|p| p.norm()).fold(f64::INFINITY, f64::min);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(seg_closest(&points[i], &points[j]).norm());
            for k in j + 1..points.len() {
                if origin_in_triangle(&points[i], &points[j], &points[k]) {
                    best = 0.0;
                }
            }
        }
    }
    best
}

fn catalog_entry(name: &str) -> saddlescape_core::functions::PiecewiseSmoothFunction {
    let params = BuiltinParams { a: vec![-1.0], b: vec![1.0, 0.5] };
    builtin(name, &params).unwrap()
}

fn is_generic(x: &[f64]) -> bool {
    x.iter().all(|v| v.abs() > 1e-6)
}

proptest! {
    #[test]
    fn min_norm_matches_enumeration(raw in prop::collection::vec(-3.0f64..3.0, 2..12)) {
        let points: Vec<Vector> = raw.chunks_exact(2).map(Vector::from_row_slice).collect();
        prop_assume!(!points.is_empty());
        let mn = min_norm_point(&points);
        let brute = brute_min_norm(&points);
        prop_assert!((mn.point.norm() - brute).abs() <= 1e-9);
    }

    #[test]
    fn tilt_criticality_matches_hull_membership(
        x in prop::collection::vec(prop::sample::select(vec![-0.5, 0.0, 0.5]), 2),
        u in prop::collection::vec(-1.5f64..1.5, 2),
    ) {
        let f = saddle_abs();
        let x = Vector::from_vec(x);
        let u = Vector::from_vec(u);
        let tilted = f.tilt(&u).unwrap();
        let gens = f.clarke_generators(&x).generators;
        let critical = tilted.min_norm_subgradient(&x).norm() <= 1e-9;
        prop_assert_eq!(critical, hull_contains(&gens, &u, 1e-9));
    }

    #[test]
    fn continuity_across_boundaries(y in -2.0f64..2.0, a in 0.1f64..3.0) {
        let f = separable(&[a], &[1.0]).unwrap();
        let on = f.evaluate(&Vector::from_row_slice(&[y, 0.0])).unwrap();
        let above = f.evaluate(&Vector::from_row_slice(&[y, 1e-12])).unwrap();
        let below = f.evaluate(&Vector::from_row_slice(&[y, -1e-12])).unwrap();
        prop_assert!((on - above).abs() <= 1e-10 && (on - below).abs() <= 1e-10);
    }
}

#[test]
fn generators_match_gradients_off_boundaries() {
    let mut rng = substream(11, 0);
    for name in CATALOG {
        let f = catalog_entry(name);
        let d = f.dim();
        let mut checked = 0;
        while checked < 10_000 / CATALOG.len() {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            if !is_generic(&x) {
                continue;
            }
            let xv = Vector::from_vec(x);
            let set = f.clarke_generators(&xv);
            assert_eq!(set.len(), 1, "{name} at {xv}");
            let h = 1e-7;
            for i in 0..d {
                let mut e = Vector::zeros(d);
                e[i] = h;
                let fd = (f.evaluate(&(&xv + &e)).unwrap() - f.evaluate(&(&xv - &e)).unwrap()) / (2.0 * h);
                assert!((set.generators[0][i] - fd).abs() <= 1e-5, "{name} coordinate {i} at {xv}");
            }
            checked += 1;
        }
    }
}

#[test]
fn sampled_lipschitz_bound_holds() {
    let mut rng = substream(12, 0);
    for name in CATALOG {
        let f = catalog_entry(name);
        let center = Vector::zeros(f.dim());
        let l = f.lipschitz_bound_on(&center, 1.0, 4000, &mut substream(12, 1));
        for _ in 0..2000 {
            let x = saddlescape_core::rng::uniform_in_ball(&mut rng, &center, 1.0);
            let y = saddlescape_core::rng::uniform_in_ball(&mut rng, &center, 1.0);
            let gap = (f.evaluate(&x).unwrap() - f.evaluate(&y).unwrap()).abs();
            // sampled L can undershoot the true bound slightly near the ball edge
            assert!(gap <= 1.05 * l * (&x - &y).norm() + 1e-12, "{name}");
        }
    }
}

#[test]
fn polynomial_hessian_matches_differences() {
    let f = saddle_abs();
    let rep = f.representative().unwrap();
    let x = Vector::from_row_slice(&[0.3, -0.7]);
    let h = 1e-5;
    let hess = rep.hessian(&x);
    for j in 0..2 {
        let mut e = Vector::zeros(2);
        e[j] = h;
        let col = (rep.gradient(&(&x + &e)) - rep.gradient(&(&x - &e))) / (2.0 * h);
        for i in 0..2 {
            assert!((hess[(i, j)] - col[i]).abs() <= 1e-6);
        }
    }
}
