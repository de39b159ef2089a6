//! Weighted L² and H⁻¹ inner products.
//!
//! The H⁻¹ product is defined through the Neumann Poisson problem
//! `Δφ = f`, `∂ₙφ = 0`, `∫φ = 0`. On a 1D grid the discrete problem is
//! `A φ = W f`, where `W` holds the trapezoid weights and
//!
//! ```text
//!            1  | -1   1             |
//!     A  =  --- |  1  -2   1          |
//!            dx |      ...  ...  ...  |
//!               |            1   -1   |
//! ```
//!
//! is the symmetric Neumann second-difference matrix. `A` has the constants
//! as its null space; the solve pins `φ₀ = 0`, runs a tridiagonal
//! elimination on the remaining rows and then removes the weighted mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{integrate, mean, weighted_sum, Field, Grid, Grid1D};

/// Relative tolerance for the zero-mean solvability condition.
pub const MEAN_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    L2,
    Hneg1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default = "unit_weight")]
    pub weight_m: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl MetricSpec {
    pub fn new(kind: MetricKind, weight_m: f64) -> Result<Self> {
        let s = Self { kind, weight_m };
        s.validate()?;
        Ok(s)
    }

    pub fn l2(weight_m: f64) -> Result<Self> {
        Self::new(MetricKind::L2, weight_m)
    }

    pub fn hneg1(weight_m: f64) -> Result<Self> {
        Self::new(MetricKind::Hneg1, weight_m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight_m.is_finite() && self.weight_m > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "metric weight must be positive, got {}",
                self.weight_m
            )));
        }
        Ok(())
    }

    fn expect(&self, kind: MetricKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidParameter(format!(
                "expected a {kind:?} metric, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Factorized Neumann Laplacian on a 1D grid.
#[derive(Clone, Debug)]
pub struct PoissonOperator {
    grid: Grid1D,
    weights: Vec<f64>,
    // Forward-elimination coefficients for the pinned (n-1)×(n-1) system.
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

/// Assembles and factorizes the Neumann operator for `grid`.
pub fn build_fd_matrix(grid: &Grid1D) -> PoissonOperator {
    PoissonOperator::new(grid).expect("the pinned Neumann system is nonsingular for n >= 3")
}

impl PoissonOperator {
    pub fn new(grid: &Grid1D) -> Result<Self> {
        let n = grid.n();
        let m = n - 1;
        let inv_dx = 1.0 / grid.dx();
        // Rows 1..n of A with column 0 removed.
        let diag = |i: usize| if i == n - 1 { -inv_dx } else { -2.0 * inv_dx };
        let off = inv_dx;
        let mut c_prime = vec![0.0; m];
        let mut denom = vec![0.0; m];
        for k in 0..m {
            let d = diag(k + 1) - if k > 0 { off * c_prime[k - 1] } else { 0.0 };
            if d == 0.0 || !d.is_finite() {
                return Err(Error::SingularSolve(format!("zero pivot at row {}", k + 1)));
            }
            denom[k] = d;
            c_prime[k] = off / d;
        }
        Ok(Self {
            grid: *grid,
            weights: grid.weights(),
            c_prime,
            denom,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The dense matrix `A` (for inspection and tests).
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.grid.n();
        let inv_dx = 1.0 / self.grid.dx();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            if i > 0 {
                a[i][i - 1] = inv_dx;
                a[i][i] -= inv_dx;
            }
            if i + 1 < n {
                a[i][i + 1] = inv_dx;
                a[i][i] -= inv_dx;
            }
        }
        a
    }

    /// `A v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let inv_dx = 1.0 / self.grid.dx();
        (0..n)
            .map(|i| {
                let mut s = 0.0;
                if i > 0 {
                    s += v[i - 1] - v[i];
                }
                if i + 1 < n {
                    s += v[i + 1] - v[i];
                }
                s * inv_dx
            })
            .collect()
    }

    /// Solves `Δφ = f` for a source with (numerically) zero mean. The source
    /// is projected to exactly zero mean first and `φ` is returned with zero
    /// weighted mean.
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n();
        if f.len() != n {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                f.len(),
                n
            )));
        }
        let measure = self.grid.measure();
        let m = weighted_sum(&self.weights, f) / measure;
        let scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m.abs() > MEAN_TOLERANCE * scale {
            return Err(Error::NonZeroMean { mean: m, scale });
        }
        // Right-hand side W(f - mean), rows 1..n.
        let rhs: Vec<f64> = (1..n).map(|i| self.weights[i] * (f[i] - m)).collect();
        let inv_dx = 1.0 / self.grid.dx();
        let mut y = vec![0.0; n - 1];
        for k in 0..n - 1 {
            let prev = if k > 0 { inv_dx * y[k - 1] } else { 0.0 };
            y[k] = (rhs[k] - prev) / self.denom[k];
        }
        for k in (0..n - 2).rev() {
            y[k] -= self.c_prime[k] * y[k + 1];
        }
        let mut phi = Vec::with_capacity(n);
        phi.push(0.0);
        phi.extend(y);
        let shift = weighted_sum(&self.weights, &phi) / measure;
        for p in &mut phi {
            *p -= shift;
        }
        Ok(phi)
    }

    /// `Σ_e dx · (Δa_e/dx)(Δb_e/dx)`: the discrete `∫ ∇a·∇b`.
    pub fn gradient_product(&self, a: &[f64], b: &[f64]) -> f64 {
        let dx = self.grid.dx();
        a.windows(2)
            .zip(b.windows(2))
            .map(|(p, q)| (p[1] - p[0]) * (q[1] - q[0]))
            .sum::<f64>()
            / dx
    }
}

fn check_pair(f: &Field, g: &Field) -> Result<()> {
    f.check_same_grid(g)
}

fn check_operator(op: &PoissonOperator, f: &Field) -> Result<()> {
    match f.grid() {
        Grid::D1(g) if g == op.grid() => Ok(()),
        other => Err(Error::GridMismatch(format!(
            "Poisson operator built for {:?}, field lives on {:?}",
            op.grid(),
            other
        ))),
    }
}

/// `∫ f g / M`.
pub fn l2_inner(spec: &MetricSpec, f: &Field, g: &Field) -> Result<f64> {
    spec.expect(MetricKind::L2)?;
    check_pair(f, g)?;
    let prod = f.zip_with(g, |a, b| a * b)?;
    Ok(integrate(&prod) / spec.weight_m)
}

pub fn l2_norm(spec: &MetricSpec, f: &Field) -> Result<f64> {
    Ok(l2_inner(spec, f, f)?.max(0.0).sqrt())
}

pub fn poisson_neumann_solve(op: &PoissonOperator, f: &Field) -> Result<Field> {
    check_operator(op, f)?;
    Ok(f.with_values(op.solve(f.values())?))
}

/// `∫ ∇φ_f · M ∇φ_g` with `Δφ = ·` solved under Neumann conditions.
pub fn hneg1_inner(spec: &MetricSpec, op: &PoissonOperator, f: &Field, g: &Field) -> Result<f64> {
    spec.expect(MetricKind::Hneg1)?;
    check_pair(f, g)?;
    check_operator(op, f)?;
    let pf = op.solve(f.values())?;
    let pg = op.solve(g.values())?;
    Ok(spec.weight_m * op.gradient_product(&pf, &pg))
}

pub fn hneg1_norm(spec: &MetricSpec, op: &PoissonOperator, f: &Field) -> Result<f64> {
    Ok(hneg1_inner(spec, op, f, f)?.max(0.0).sqrt())
}

/// Squared distance between two fields under `spec`. For H⁻¹ the difference
/// must have zero mean.
pub fn distance_squared(
    spec: &MetricSpec,
    op: Option<&PoissonOperator>,
    u: &Field,
    v: &Field,
) -> Result<f64> {
    let d = u.zip_with(v, |a, b| a - b)?;
    match spec.kind {
        MetricKind::L2 => l2_inner(spec, &d, &d),
        MetricKind::Hneg1 => {
            let op = op.ok_or_else(|| {
                Error::InvalidParameter("H⁻¹ distance needs a Poisson operator".into())
            })?;
            hneg1_inner(spec, op, &d, &d)
        }
    }
}

/// Removes the mean of `f` so that it becomes an admissible Poisson source.
pub fn project_mean_zero(f: &Field) -> Field {
    let m = mean(f);
    f.map(|v| v - m)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use nalgebra::{DMatrix, DVector, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::field::laplacian_neumann;

    fn unit(n: usize) -> Grid1D {
        Grid1D::new(n, 0.0, 1.0).unwrap()
    }

    fn cosine(n: usize, m: f64) -> Field {
        Field::from_fn(unit(n), |p| (m * PI * p[0]).cos()).unwrap()
    }

    #[test]
    fn l2_examples() {
        let g = Grid1D::new(201, -1.0, 1.0).unwrap();
        let one = Field::constant(g, 1.0);
        let m1 = MetricSpec::l2(1.0).unwrap();
        let m2 = MetricSpec::l2(2.0).unwrap();
        assert_eq!(l2_inner(&m1, &one, &one).unwrap(), 2.0);
        let s = Field::from_fn(g, |p| (PI * p[0]).sin()).unwrap();
        let c = Field::from_fn(g, |p| (PI * p[0]).cos()).unwrap();
        assert!(l2_inner(&m1, &s, &c).unwrap().abs() < 1e-6);
        let a = l2_inner(&m1, &s, &one.map(|_| 0.3)).unwrap();
        let b = l2_inner(&m2, &s, &one.map(|_| 0.3)).unwrap();
        assert!((b - 0.5 * a).abs() < 1e-15);
        assert_eq!(l2_norm(&m1, &one.map(|_| 0.0)).unwrap(), 0.0);
        assert!((l2_norm(&m1, &one).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((l2_norm(&m1, &s).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn wrong_metric_kind_is_rejected() {
        let f = cosine(11, 1.0);
        let h = MetricSpec::hneg1(1.0).unwrap();
        assert!(l2_inner(&h, &f, &f).is_err());
        let l = MetricSpec::l2(1.0).unwrap();
        let op = build_fd_matrix(&unit(11));
        assert!(hneg1_inner(&l, &op, &f, &f).is_err());
        assert!(MetricSpec::l2(0.0).is_err());
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let m = MetricSpec::l2(1.0).unwrap();
        assert!(matches!(
            l2_inner(&m, &cosine(11, 1.0), &cosine(12, 1.0)),
            Err(Error::GridMismatch(_))
        ));
        let op = build_fd_matrix(&unit(11));
        assert!(poisson_neumann_solve(&op, &cosine(12, 1.0)).is_err());
    }

    #[test]
    fn poisson_examples() {
        let op = build_fd_matrix(&unit(201));
        let zero = poisson_neumann_solve(&op, &Field::constant(unit(201), 0.0)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let f = cosine(201, 1.0);
        let phi = poisson_neumann_solve(&op, &f).unwrap();
        let err = phi
            .values()
            .iter()
            .zip(unit(201).nodes())
            .map(|(p, x)| (p + (PI * x).cos() / (PI * PI)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        assert!(mean(&phi).abs() < 1e-10);
        let lap = laplacian_neumann(&phi);
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-8);
        }

        assert!(matches!(
            poisson_neumann_solve(&op, &Field::constant(unit(201), 1.0)),
            Err(Error::NonZeroMean { .. })
        ));
    }

    #[test]
    fn hneg1_examples() {
        let op = build_fd_matrix(&unit(201));
        let m = MetricSpec::hneg1(1.0).unwrap();
        let zero = Field::constant(unit(201), 0.0);
        assert_eq!(hneg1_inner(&m, &op, &zero, &zero).unwrap(), 0.0);
        assert_eq!(hneg1_norm(&m, &op, &zero).unwrap(), 0.0);
        let c1 = cosine(201, 1.0);
        let c2 = cosine(201, 2.0);
        let v = hneg1_inner(&m, &op, &c1, &c1).unwrap();
        assert!((v - 1.0 / (2.0 * PI * PI)).abs() < 1e-3, "{v}");
        assert!(hneg1_inner(&m, &op, &c1, &c2).unwrap().abs() < 1e-4);
        let n = hneg1_norm(&m, &op, &c1).unwrap();
        assert!((n - 1.0 / (PI * 2f64.sqrt())).abs() < 5e-4);
        let scaled = hneg1_norm(&m, &op, &c1.map(|v| -3.5 * v)).unwrap();
        assert!((scaled - 3.5 * n).abs() <= 1e-12 * scaled);
    }

    #[test]
    fn operator_rows_sum_to_zero_and_symmetric() {
        let op = build_fd_matrix(&unit(3));
        let a = op.matrix();
        for (i, row) in a.iter().enumerate() {
            assert_eq!(row.iter().sum::<f64>(), 0.0);
            for j in 0..3 {
                assert_eq!(a[i][j], a[j][i]);
            }
        }
        assert_eq!(a[0][0], -1.0 / op.grid().dx());
    }

    /// H⁻¹ Gram matrix `G = W A⁺ W` restricted to mean-zero vectors, via a
    /// dense eigendecomposition of `A`.
    fn eigen_quadratic_form(op: &PoissonOperator, d: &[f64]) -> f64 {
        let n = d.len();
        let a = DMatrix::from_fn(n, n, |i, j| op.matrix()[i][j]);
        let eig = SymmetricEigen::new(a);
        let wd = DVector::from_iterator(n, d.iter().zip(op.weights()).map(|(a, w)| a * w));
        let mut s = 0.0;
        for k in 0..n {
            let lam = eig.eigenvalues[k];
            if lam.abs() < 1e-9 {
                continue;
            }
            let c = eig.eigenvectors.column(k).dot(&wd);
            s += -c * c / lam;
        }
        s
    }

    #[test]
    fn quadratic_form_positive_on_mean_zero_vectors() {
        for n in [3, 5, 8, 13] {
            let op = build_fd_matrix(&unit(n));
            let w = op.weights().to_vec();
            let mut d = vec![0.0; n];
            // (1, -1, 0, ...) adjusted for the trapezoid weights
            d[0] = 1.0;
            d[1] = -w[0] / w[1];
            let f = Field::new(unit(n), d.clone()).unwrap();
            let m = MetricSpec::hneg1(1.0).unwrap();
            let q = hneg1_inner(&m, &op, &f, &f).unwrap();
            let oracle = eigen_quadratic_form(&op, &d);
            assert!(q > 0.0);
            assert!(
                (q - oracle).abs() < 1e-10 * oracle.abs().max(1.0),
                "{q} vs {oracle}"
            );
        }
    }

    #[test]
    fn pinned_solve_matches_lagrange_augmented_dense_solve() {
        let n = 201;
        let op = build_fd_matrix(&unit(n));
        let f = cosine(n, 1.0);
        let w = op.weights().to_vec();
        let a = op.matrix();
        // [A w; wᵀ 0] [φ; λ] = [W f; 0]
        let aug = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
            (true, true) => a[i][j],
            (true, false) => w[i],
            (false, true) => w[j],
            (false, false) => 0.0,
        });
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = w[i] * f.values()[i];
        }
        let sol = aug.lu().solve(&rhs).unwrap();
        let phi = op.solve(f.values()).unwrap();
        for i in 0..n {
            assert!((sol[i] - phi[i]).abs() < 1e-10, "node {i}");
        }
    }

    #[test]
    fn discrete_duality() {
        // ⟨f, g⟩_{H⁻¹} = -∫ φ_f g
        let op = build_fd_matrix(&unit(201));
        let m = MetricSpec::hneg1(1.0).unwrap();
        let f = Field::from_fn(unit(201), |p| {
            (PI * p[0]).cos() + 0.5 * (3.0 * PI * p[0]).cos()
        })
        .unwrap();
        let g = Field::from_fn(unit(201), |p| (PI * p[0]).cos() - (2.0 * PI * p[0]).cos()).unwrap();
        let lhs = hneg1_inner(&m, &op, &f, &g).unwrap();
        let phi = poisson_neumann_solve(&op, &f).unwrap();
        let rhs = -crate::field::integrate(&phi.zip_with(&g, |a, b| a * b).unwrap());
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn bilinear_and_symmetric() {
        let n = 41;
        let op = build_fd_matrix(&unit(n));
        let h = MetricSpec::hneg1(1.7).unwrap();
        let l = MetricSpec::l2(0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut rand_field = || {
                let f = Field::new(
                    unit(n),
                    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                project_mean_zero(&f)
            };
            let (f, g, k) = (rand_field(), rand_field(), rand_field());
            let (a, b) = (0.7, -1.9);
            let comb = f.zip_with(&g, |p, q| a * p + b * q).unwrap();
            for (ip, name) in [
                (
                    &|x: &Field, y: &Field| hneg1_inner(&h, &op, x, y).unwrap() as f64,
                    "h",
                ),
                (
                    &|x: &Field, y: &Field| l2_inner(&l, x, y).unwrap() as f64,
                    "l2",
                ),
            ] as [(&dyn Fn(&Field, &Field) -> f64, &str); 2]
            {
                let lhs = ip(&comb, &k);
                let rhs = a * ip(&f, &k) + b * ip(&g, &k);
                assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{name}");
                let s1 = ip(&f, &g);
                let s2 = ip(&g, &f);
                assert!((s1 - s2).abs() <= 1e-10 * (1.0 + s1.abs()), "{name}");
                assert!(ip(&f, &f) > 0.0);
            }
        }
    }

    #[test]
    fn second_order_grid_convergence() {
        let m = MetricSpec::hneg1(1.0).unwrap();
        let norm_at = |n: usize| {
            let f =
                Field::from_fn(unit(n), |p| (PI * p[0]).cos() + (2.0 * PI * p[0]).cos()).unwrap();
            hneg1_norm(&m, &build_fd_matrix(&unit(n)), &f).unwrap()
        };
        let n = 21;
        let (a, b, c) = (norm_at(n), norm_at(2 * n - 1), norm_at(4 * n - 3));
        let coarse = (a - b).abs();
        let fine = (b - c).abs();
        assert!(
            coarse < 4.0 * fine * 1.25 && coarse > 4.0 * fine * 0.75,
            "{coarse} {fine}"
        );
    }
}
