use proptest::prelude::*;
use saddlescape_core::center_stable::{
    lyapunov_solve, simulate_abstract, AbstractConfig, ConstructedSystem, DeltaSpec, ResidualSpec,
};
use saddlescape_core::functions::{Monomial, Polynomial};
use saddlescape_core::rng::{substream, uniform_in_ball};
use saddlescape_core::sgd::{NoiseModel, StepSchedule};
use saddlescape_core::{Matrix, Vector};

fn stable_matrix(entries: &[f64], d: usize, margin: f64) -> Matrix {
    let a = Matrix::from_row_slice(d, d, &entries[..d * d]);
    let top = a.clone().complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    a - Matrix::identity(d, d) * (top + margin)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn lyapunov_on_random_stable_matrices(
        d in 1usize..=5,
        entries in prop::collection::vec(-2.0f64..2.0, 25),
        margin in 0.1f64..2.0,
        x in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let j = stable_matrix(&entries, d, margin);
        let cert = lyapunov_solve(&j).unwrap();
        prop_assert!(cert.residual <= 1e-10);
        prop_assert!(cert.lambda_min > 0.0);
        let x = Vector::from_row_slice(&x[..d]);
        let lhs = x.dot(&(-(&cert.q * &j) * &x));
        prop_assert!((lhs - x.norm_squared()).abs() <= 1e-9 * (1.0 + x.norm_squared()));
    }
}

fn parabola_system() -> ConstructedSystem {
    let g = Polynomial::new(1, vec![Monomial::single(0.1, 0, 2.0)]).unwrap();
    ConstructedSystem::new(
        Matrix::from_element(1, 1, 1.0),
        Matrix::from_element(1, 1, -1.0),
        vec![g],
        DeltaSpec { scale: 0.05, cap: 1.0 },
    )
    .unwrap()
}

fn noisy_config(horizon: usize) -> AbstractConfig {
    AbstractConfig {
        schedule: StepSchedule::new(0.5, 0.7).unwrap(),
        noise: NoiseModel::SphereUniform { sigma: 0.5 },
        rho: ResidualSpec::Decaying { scale: 0.1 },
        rho_tilde: ResidualSpec::Decaying { scale: 0.1 },
        horizon,
        y0: Vector::from_row_slice(&[0.2, 0.004]),
    }
}

#[test]
fn graph_stays_invariant_from_twenty_starts() {
    let g = Polynomial::new(2, vec![Monomial::new(0.2, &[2.0, 0.0]), Monomial::new(-0.1, &[1.0, 1.0])]).unwrap();
    let sys = ConstructedSystem::new(
        Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.5]),
        Matrix::from_element(1, 1, -1.0),
        vec![g],
        DeltaSpec { scale: 0.05, cap: 1.0 },
    )
    .unwrap();
    let mut rng = substream(21, 0);
    let starts: Vec<Vector> = (0..20).map(|_| uniform_in_ball(&mut rng, &Vector::zeros(2), 0.5)).collect();
    assert!(sys.invariance_defect(&starts, 1.0, 1e-3) <= 1e-8);
}

#[test]
fn u_is_equivalent_to_the_euclidean_norm() {
    let sys = parabola_system();
    let run = simulate_abstract(&sys, &noisy_config(2000), 0.01, 1, 3).unwrap();
    let c = &run.certificate;
    for k in 0..run.u.len() {
        let w2: f64 = run.w(k).iter().map(|v| v * v).sum();
        let u2 = run.u[k] * run.u[k];
        assert!(c.lambda_min * w2 <= u2 * (1.0 + 1e-12) && u2 <= c.lambda_max * w2 * (1.0 + 1e-12));
    }
}

#[test]
fn abstract_runs_are_deterministic() {
    let sys = parabola_system();
    let a = simulate_abstract(&sys, &noisy_config(500), 0.01, 1, 17).unwrap();
    let b = simulate_abstract(&sys, &noisy_config(500), 0.01, 1, 17).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scalar_escape_time_fixture() {
    let sys = ConstructedSystem::linear_graph(Matrix::zeros(0, 0), Matrix::from_element(1, 1, -1.0), DeltaSpec::ZERO)
        .unwrap();
    let cfg = AbstractConfig {
        schedule: StepSchedule::new(1.0, 1.0).unwrap(),
        noise: NoiseModel::SphereUniform { sigma: 1.0 },
        rho: ResidualSpec::Zero,
        rho_tilde: ResidualSpec::Zero,
        horizon: 1000,
        y0: Vector::zeros(1),
    };
    let run = simulate_abstract(&sys, &cfg, 0.01, 10, 7).unwrap();
    // recorded value for this seed; U_10² already exceeds 0.01·χ_10
    assert_eq!(run.tau, Some(10));
    assert!(run.u[9] * run.u[9] >= 0.01 * run.chis[9]);
}
