// Solver and metric outputs checked against closed forms or independent
// dense linear algebra.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use phasefield::energy::EnergySpec;
use phasefield::field::{integrate, laplacian_neumann, mean, Field, Grid, Grid1D};
use phasefield::metric::{hneg1_norm, poisson_neumann_solve, MetricSpec, PoissonOperator};
use phasefield::network::SensorLayout;
use phasefield::sampler::{grf_sample, rbf_kernel, GrfConfig};
use phasefield::solver::{
    ch1d_reference_step, implicit_euler_residual, minmove_solve, minmove_step, relaxation_exact,
    rollout, MinMoveConfig, MinMoveStepper,
};

fn grid(n: usize, a: f64, b: f64) -> Grid {
    Grid::D1(Grid1D::new(n, a, b).unwrap())
}

fn sine(g: Grid) -> Field {
    Field::from_fn(g, |p| (PI * p[0]).sin()).unwrap()
}

/// Dense matrix of `laplacian_neumann`, built column by column.
fn laplacian_matrix(g: Grid) -> DMatrix<f64> {
    let n = g.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = laplacian_neumann(&Field::new(g, e).unwrap());
        for i in 0..n {
            m[(i, j)] = col.values()[i];
        }
    }
    m
}

#[test]
fn quadratic_l2_step_is_the_implicit_euler_update() {
    // ½k u² under L² with weight M: u_{k+1} = u_k / (1 + τ M k).
    let (k, tau, m) = (10.0, 1e-3, 2.0);
    let g = grid(101, -1.0, 1.0);
    let cfg = MinMoveConfig::new(tau, MetricSpec::l2(m).unwrap()).unwrap();
    let u0 = sine(g);
    let u1 = minmove_step(&cfg, &EnergySpec::quadratic(k).unwrap(), &u0).unwrap();
    for (a, b) in u1.values().iter().zip(u0.values()) {
        assert_relative_eq!(*a, b / (1.0 + tau * m * k), epsilon = 1e-12);
    }
}

#[test]
fn relaxation_trajectory_approaches_exponential_decay() {
    let (k, tau) = (10.0, 1e-3);
    let g = grid(101, -1.0, 1.0);
    let spec = EnergySpec::quadratic(k).unwrap();
    let mut st = MinMoveStepper {
        cfg: MinMoveConfig::new(tau, MetricSpec::l2(1.0).unwrap()).unwrap(),
        spec,
    };
    let u0 = sine(g);
    let traj = rollout(&mut st, &spec, &u0, 100).unwrap();
    let exact = relaxation_exact(k, &u0, 0.1).unwrap();
    let err = traj
        .last()
        .values()
        .iter()
        .zip(exact.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // Implicit Euler is first order: (1 + kτ)^{-n} vs e^{-knτ}.
    let predicted = (1.0 + k * tau).powi(-100) - (-k * 0.1f64).exp();
    assert!(err < 0.01 * exact.max_abs());
    assert_relative_eq!(err, predicted.abs(), max_relative = 1e-6);
    assert_eq!(traj.energy_increases(), 0);
}

#[test]
fn quadratic_hneg1_step_matches_a_dense_linear_solve() {
    // μ = k u, so (I − τ k/M · L) u_{k+1} = u_k with L the Neumann Laplacian.
    let (k, tau, m) = (3.0, 1e-3, 1.5);
    let g = grid(41, 0.0, 1.0);
    let u0 = Field::from_fn(g, |p| (2.0 * PI * p[0]).cos() + 0.3 * p[0]).unwrap();
    let cfg = MinMoveConfig::new(tau, MetricSpec::hneg1(m).unwrap()).unwrap();
    let u1 = minmove_step(&cfg, &EnergySpec::quadratic(k).unwrap(), &u0).unwrap();
    let a = DMatrix::identity(41, 41) - laplacian_matrix(g) * (tau * k / m);
    let x = a
        .lu()
        .solve(&DVector::from_column_slice(u0.values()))
        .unwrap();
    for (p, q) in u1.values().iter().zip(x.iter()) {
        assert_relative_eq!(*p, *q, epsilon = 1e-9);
    }
    assert_relative_eq!(mean(&u1), mean(&u0), epsilon = 1e-13);
}

#[test]
fn hneg1_norm_of_cosine_matches_closed_form() {
    // φ = −cos(πx)/π², so ∫ φ'² = 1/(2π²).
    let g = grid(201, 0.0, 1.0);
    let f = Field::from_fn(g, |p| (PI * p[0]).cos()).unwrap();
    let op = PoissonOperator::new(g.as_1d().unwrap()).unwrap();
    let spec = MetricSpec::hneg1(1.0).unwrap();
    let n2 = hneg1_norm(&spec, &op, &f).unwrap().powi(2);
    assert!((n2 - 1.0 / (2.0 * PI * PI)).abs() < 1e-3);
    // Integration by parts: ∫ |∇φ|² = −∫ φ f.
    let phi = poisson_neumann_solve(&op, &f).unwrap();
    let by_parts = -integrate(&phi.zip_with(&f, |a, b| a * b).unwrap());
    assert_relative_eq!(n2, by_parts, max_relative = 1e-10);
}

#[test]
fn poisson_solution_matches_analytic_potential() {
    let g = grid(401, 0.0, 1.0);
    let f = Field::from_fn(g, |p| (3.0 * PI * p[0]).cos()).unwrap();
    let op = PoissonOperator::new(g.as_1d().unwrap()).unwrap();
    let phi = poisson_neumann_solve(&op, &f).unwrap();
    let c = 1.0 / (9.0 * PI * PI);
    let pts = g.points();
    for (v, p) in phi.values().iter().zip(&pts) {
        assert!((v + c * (3.0 * PI * p[0]).cos()).abs() < 1e-5 * c.max(1.0));
    }
}

#[test]
fn cahn_hilliard_steps_satisfy_implicit_euler_and_conserve_mass() {
    let g = grid(64, 0.0, 1.0);
    let spec = EnergySpec::ginzburg_landau(0.05).unwrap();
    let cfg = MinMoveConfig::new(1e-4, MetricSpec::hneg1(1.0).unwrap()).unwrap();
    let mut u = Field::from_fn(g, |p| {
        0.1 * (4.0 * PI * p[0]).cos() + 0.05 * (PI * p[0]).sin()
    })
    .unwrap();
    let m0 = mean(&u);
    for _ in 0..5 {
        let (next, stats) = minmove_solve(&cfg, &spec, &u).unwrap();
        assert!(stats.converged);
        assert!(implicit_euler_residual(&cfg, &spec, &u, &next).unwrap() < 10.0 * cfg.tol);
        assert!(spec.total_energy(&next) <= spec.total_energy(&u));
        assert!((mean(&next) - m0).abs() < 1e-10);
        u = next;
    }
}

#[test]
fn reference_cahn_hilliard_tracks_linear_mode_decay() {
    // Near u = 0, μ ≈ −u/ε² − Δu, so a grid cosine mode is an eigenvector of
    // the linearized flow.
    let eps = 0.25;
    let g = grid(81, 0.0, 1.0);
    let q = 4.0 * PI;
    let amp = 1e-4;
    let u0 = Field::from_fn(g, |p| amp * (q * p[0]).cos()).unwrap();
    let tau = 5e-4;
    let u1 = ch1d_reference_step(eps, tau, &u0).unwrap();
    let proj = |u: &Field| {
        integrate(&u.zip_with(&u0, |a, b| a * b).unwrap()) / integrate(&u0.map(|v| v * v))
    };
    let observed = proj(&u1).ln() / tau;
    // rate = −q̂²(q̂² − 1/ε²) with the second-difference symbol
    // q̂² = (2 − 2cos(q dx))/dx².
    let dx = 1.0 / 80.0;
    let qh2 = (2.0 - 2.0 * (q * dx).cos()) / (dx * dx);
    let rate = -qh2 * (qh2 - 1.0 / (eps * eps));
    assert_relative_eq!(observed, rate, max_relative = 2e-3);
}

#[test]
fn grf_covariance_matches_the_kernel() {
    let layout = SensorLayout::new(grid(8, 0.0, 1.0));
    let l = 0.3;
    let s = grf_sample(&GrfConfig::new(l, 11), &layout, 20_000).unwrap();
    let pts = layout.grid.points();
    for i in 0..8 {
        for j in 0..8 {
            let c = s.column(i).dot(&s.column(j)) / s.nrows() as f64;
            assert!((c - rbf_kernel(l, &pts[i], &pts[j])).abs() < 0.04);
        }
    }
}
