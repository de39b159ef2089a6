//! Network-free time steppers: the minimizing-movement step solved over grid
//! values, the analytic relaxation solution, explicit finite-difference
//! references for Allen–Cahn and Cahn–Hilliard, and trajectory rollout.
//!
//! The minimizing-movement objective is
//! `J(u) = F(u) + d²(u, u_k) / 2τ`.
//! Writing `g` for its gradient with respect to the trapezoid-weighted inner
//! product (so `∂J/∂u_i = w_i g_i`):
//!
//! * L²: `g = δF/δu + (u − u_k)/(τM)`;
//! * H⁻¹: `g = δF/δu − (M/τ) φ`, with `Δφ = u − u_k`, restricted to
//!   mean-zero perturbations.
//!
//! The inner optimizer works in the metric's own inner product, where the
//! gradient of `J` is `G = M g` (L²) or `G = −Δg / M` (H⁻¹). `G` is exactly the
//! implicit-Euler residual, so its sup-norm is the stopping criterion.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::field::{integrate, laplacian_neumann, weighted_sum, Field, Grid};
use crate::metric::{MetricKind, MetricSpec, PoissonOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    #[default]
    Newton,
    Lbfgs,
    GradientDescent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMoveConfig {
    pub tau: f64,
    pub metric: MetricSpec,
    #[serde(default)]
    pub optimizer: InnerOptimizer,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    500
}

fn default_tol() -> f64 {
    1e-8
}

impl MinMoveConfig {
    pub fn new(tau: f64, metric: MetricSpec) -> Result<Self> {
        let c = Self {
            tau,
            metric,
            optimizer: InnerOptimizer::Newton,
            max_iter: default_max_iter(),
            tol: default_tol(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        self.metric.validate()
    }
}

/// Outcome of one inner solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMoveStats {
    pub iterations: usize,
    /// Sup-norm of the metric gradient (the implicit-Euler residual).
    pub gradient_norm: f64,
    pub objective: f64,
    pub converged: bool,
}

struct Eval {
    j: f64,
    g: Vec<f64>,
    nat: Vec<f64>,
}

struct Objective<'a> {
    spec: &'a EnergySpec,
    metric: MetricSpec,
    tau: f64,
    uk: &'a Field,
    w: Vec<f64>,
    op: Option<PoissonOperator>,
    lap: Option<DMatrix<f64>>,
    precond: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

// Largest grid for which the dense preconditioner is assembled.
const DENSE_LIMIT: usize = 1024;

/// Dense matrix of the reflected-ghost Laplacian.
fn laplacian_matrix(grid: Grid) -> DMatrix<f64> {
    let n = grid.len();
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = laplacian_neumann(&Field::new(grid, e.clone()).unwrap());
        for (i, v) in col.values().iter().enumerate() {
            m[(i, j)] = *v;
        }
        e[j] = 0.0;
    }
    m
}

impl<'a> Objective<'a> {
    fn new(cfg: &MinMoveConfig, spec: &'a EnergySpec, uk: &'a Field) -> Result<Self> {
        let grid = *uk.grid();
        let op = match cfg.metric.kind {
            MetricKind::L2 => None,
            MetricKind::Hneg1 => Some(PoissonOperator::new(grid.as_1d().map_err(|_| {
                Error::InvalidParameter("the H⁻¹ metric is implemented on 1D grids".into())
            })?)?),
        };
        let mut obj = Self {
            spec,
            metric: cfg.metric,
            tau: cfg.tau,
            uk,
            w: grid.weights(),
            op,
            lap: None,
            precond: None,
        };
        if grid.len() <= DENSE_LIMIT {
            let lap = laplacian_matrix(grid);
            obj.precond = Some(obj.linear_part(&lap).lu());
            obj.lap = Some(lap);
        }
        Ok(obj)
    }

    /// Metric-space Hessian of the part of `J` that is linear in `u`.
    fn linear_part(&self, lap: &DMatrix<f64>) -> DMatrix<f64> {
        let n = lap.nrows();
        let m = self.metric.weight_m;
        let c = match *self.spec {
            EnergySpec::Quadratic { k } => k,
            EnergySpec::GinzburgLandau { .. } => 0.0,
        };
        let kappa = 2.0 * self.spec.kappa();
        let id = DMatrix::<f64>::identity(n, n);
        match self.metric.kind {
            MetricKind::L2 => (&id * c - lap * kappa) * m + &id / self.tau,
            MetricKind::Hneg1 => (lap * (-c) + lap * lap * kappa) / m + &id / self.tau,
        }
    }

    /// Solves `(∂G/∂u) d = G`, the Newton system of the implicit-Euler residual.
    fn newton_direction(&self, u: &[f64], nat: &[f64]) -> Option<Vec<f64>> {
        let lap = self.lap.as_ref()?;
        let n = u.len();
        let m = self.metric.weight_m;
        let s = self.spec.bulk_scale();
        let kappa = 2.0 * self.spec.kappa();
        // Jacobian of δF/δu
        let mut hf = lap * (-kappa);
        for (i, &v) in u.iter().enumerate() {
            hf[(i, i)] += s * self.spec.bulk_density_second_deriv(v);
        }
        let mut jac = match self.metric.kind {
            MetricKind::L2 => hf * m,
            MetricKind::Hneg1 => -(lap * hf) / m,
        };
        for i in 0..n {
            jac[(i, i)] += 1.0 / self.tau;
        }
        let d = jac.lu().solve(&nalgebra::DVector::from_column_slice(nat))?;
        Some(d.as_slice().to_vec())
    }

    fn eval(&self, u: &[f64]) -> Result<Eval> {
        let field = self.uk.with_values(u.to_vec());
        let f = self.spec.total_energy(&field);
        let mu = self.spec.functional_derivative(&field);
        let delta: Vec<f64> = u.iter().zip(self.uk.values()).map(|(a, b)| a - b).collect();
        let m = self.metric.weight_m;
        let tau = self.tau;
        match self.metric.kind {
            MetricKind::L2 => {
                let d2 = integrate(&self.uk.with_values(delta.iter().map(|d| d * d).collect())) / m;
                let g: Vec<f64> = mu
                    .values()
                    .iter()
                    .zip(&delta)
                    .map(|(a, d)| a + d / (tau * m))
                    .collect();
                let nat = g.iter().map(|v| m * v).collect();
                Ok(Eval {
                    j: f + d2 / (2.0 * tau),
                    g,
                    nat,
                })
            }
            MetricKind::Hneg1 => {
                let op = self.op.as_ref().unwrap();
                let mut delta = delta;
                self.project(&mut delta);
                let phi = op.solve(&delta)?;
                let d2 = m * op.gradient_product(&phi, &phi);
                let g: Vec<f64> = mu
                    .values()
                    .iter()
                    .zip(&phi)
                    .map(|(a, p)| a - m / tau * p)
                    .collect();
                let lap = laplacian_neumann(&self.uk.with_values(g.clone()));
                let nat = lap.values().iter().map(|v| -v / m).collect();
                Ok(Eval {
                    j: f + d2 / (2.0 * tau),
                    g,
                    nat,
                })
            }
        }
    }

    /// Covector of `a`: `⟨a, b⟩ = dual(a) · b` in the metric inner product.
    fn dual(&self, a: &[f64]) -> Result<Vec<f64>> {
        let m = self.metric.weight_m;
        match self.metric.kind {
            MetricKind::L2 => Ok(a.iter().zip(&self.w).map(|(x, w)| x * w / m).collect()),
            MetricKind::Hneg1 => {
                let mut a = a.to_vec();
                self.project(&mut a);
                let phi = self.op.as_ref().unwrap().solve(&a)?;
                Ok(phi.iter().zip(&self.w).map(|(p, w)| -m * p * w).collect())
            }
        }
    }

    fn project(&self, v: &mut [f64]) {
        if self.metric.kind == MetricKind::Hneg1 {
            let mean = weighted_sum(&self.w, v) / self.w.iter().sum::<f64>();
            for x in v.iter_mut() {
                *x -= mean;
            }
        }
    }

    /// Initial inverse-Hessian guess applied to a metric gradient.
    fn h0(&self, v: &[f64], gamma: f64) -> Vec<f64> {
        let mut out = match &self.precond {
            Some(lu) => {
                let b = nalgebra::DVector::from_column_slice(v);
                match lu.solve(&b) {
                    Some(x) => x.as_slice().to_vec(),
                    None => v.iter().map(|x| gamma * x).collect(),
                }
            }
            None => v.iter().map(|x| gamma * x).collect(),
        };
        self.project(&mut out);
        out
    }
}

/// Size of the residual's individual terms times `1e-15`; a stalled
/// residual below it is rounding noise and counts as converged.
fn rounding_floor(cfg: &MinMoveConfig, spec: &EnergySpec, uk: &Field) -> f64 {
    let a = uk.max_abs().max(1.0);
    let lap: f64 = match uk.grid() {
        Grid::D1(g) => 4.0 / (g.dx() * g.dx()),
        Grid::D2(g) => 4.0 / (g.x.dx() * g.x.dx()) + 4.0 / (g.y.dx() * g.y.dx()),
    };
    let bulk = match *spec {
        EnergySpec::Quadratic { k } => k * a,
        EnergySpec::GinzburgLandau { .. } => spec.bulk_scale() * (a * a * a + a),
    };
    let mu = bulk + 2.0 * spec.kappa() * lap * a;
    let m = cfg.metric.weight_m;
    let drift = match cfg.metric.kind {
        MetricKind::L2 => m * mu,
        MetricKind::Hneg1 => lap * mu / m,
    };
    1e-15 * (a / cfg.tau + drift)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the minimizing-movement problem and reports how it went. The
/// returned field never has a larger objective than `u_k`.
pub fn minmove_solve(
    cfg: &MinMoveConfig,
    spec: &EnergySpec,
    uk: &Field,
) -> Result<(Field, MinMoveStats)> {
    cfg.validate()?;
    spec.validate()?;
    let obj = Objective::new(cfg, spec, uk)?;
    let mut u = uk.values().to_vec();
    let mut cur = obj.eval(&u)?;
    let j0 = cur.j;
    let optimizer = match (cfg.optimizer, &obj.lap) {
        (InnerOptimizer::Newton, None) => InnerOptimizer::Lbfgs,
        (o, _) => o,
    };
    let memory = if optimizer == InnerOptimizer::Lbfgs {
        12
    } else {
        0
    };
    // (s, y, dual(s), dual(y), 1/⟨s,y⟩)
    let mut hist: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut gamma = cfg.tau;
    let mut iterations = 0;
    let floor = rounding_floor(cfg, spec, uk);
    let mut best = sup(&cur.nat);
    let mut stalled = 0;
    while iterations < cfg.max_iter {
        let gn = sup(&cur.nat);
        if gn <= cfg.tol {
            break;
        }
        // on fine H⁻¹ grids rounding in −Δμ can sit above an absolute tol
        if gn < 0.9 * best {
            best = gn;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 && gn <= floor {
                break;
            }
        }
        iterations += 1;
        let mut accepted = None;
        // first the optimizer's own direction, then the preconditioned gradient
        for attempt in 0..2 {
            let dir = match (attempt, optimizer) {
                (0, InnerOptimizer::Newton) => obj.newton_direction(&u, &cur.nat),
                (0, InnerOptimizer::Lbfgs) if !hist.is_empty() => {
                    Some(lbfgs_direction(&obj, &hist, &cur.nat, gamma))
                }
                _ => None,
            };
            let dir = dir.unwrap_or_else(|| {
                hist.clear();
                obj.h0(&cur.nat, gamma)
            });
            let mut p: Vec<f64> = dir.iter().map(|v| -v).collect();
            obj.project(&mut p);
            let slope: f64 = obj
                .w
                .iter()
                .zip(&cur.g)
                .zip(&p)
                .map(|((w, g), d)| w * g * d)
                .sum();
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = 1.0;
            for _ in 0..60 {
                let trial: Vec<f64> = u.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
                let ev = obj.eval(&trial)?;
                if ev.j.is_finite() && ev.j <= j0 {
                    let armijo = ev.j <= cur.j + 1e-4 * alpha * slope;
                    // below the resolution of J only the residual can tell progress
                    let noisy = (alpha * slope).abs() <= 1e-12 * cur.j.abs() && sup(&ev.nat) < gn;
                    if armijo || noisy {
                        accepted = Some((trial, ev));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((trial, ev)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ev.nat.iter().zip(&cur.nat).map(|(a, b)| a - b).collect();
        u = trial;
        cur = ev;
        if memory > 0 {
            let ds = obj.dual(&s)?;
            let sy = dot(&ds, &y);
            if sy > 0.0 {
                let dy = obj.dual(&y)?;
                gamma = sy / dot(&dy, &y);
                hist.push((s, y, ds, dy, 1.0 / sy));
                if hist.len() > memory {
                    hist.remove(0);
                }
            }
        }
    }
    let gn = sup(&cur.nat);
    let stats = MinMoveStats {
        iterations,
        gradient_norm: gn,
        objective: cur.j,
        converged: gn <= cfg.tol.max(floor),
    };
    Ok((uk.with_values(u), stats))
}

type History = [(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)];

/// Two-loop recursion in the metric inner product; returns `H·G`.
fn lbfgs_direction(obj: &Objective, hist: &History, nat: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = nat.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (_, y, ds, _, rho) in hist.iter().rev() {
        let a = rho * dot(ds, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let mut r = obj.h0(&q, gamma);
    for ((s, _, _, dy, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(dy, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r
}

/// `argmin_u F(u) + d²(u, u_k)/2τ` to the configured tolerance.
pub fn minmove_step(cfg: &MinMoveConfig, spec: &EnergySpec, uk: &Field) -> Result<Field> {
    let (u, st) = minmove_solve(cfg, spec, uk)?;
    if !st.converged {
        return Err(Error::NonConvergence {
            iterations: st.iterations,
            gradient_norm: st.gradient_norm,
        });
    }
    Ok(u)
}

/// Sup-norm of `(u − u_k)/τ + ∇F(u)`, with `∇F = M δF/δu` for L² and
/// `∇F = −Δ(δF/δu)/M` for H⁻¹ (the gradient induced by the H⁻¹ product that
/// carries `M` as a weight).
pub fn implicit_euler_residual(
    cfg: &MinMoveConfig,
    spec: &EnergySpec,
    uk: &Field,
    u: &Field,
) -> Result<f64> {
    uk.check_same_grid(u)?;
    let mu = spec.functional_derivative(u);
    let m = cfg.metric.weight_m;
    let grad: Vec<f64> = match cfg.metric.kind {
        MetricKind::L2 => mu.values().iter().map(|v| m * v).collect(),
        MetricKind::Hneg1 => laplacian_neumann(&mu)
            .values()
            .iter()
            .map(|v| -v / m)
            .collect(),
    };
    let r: Vec<f64> = u
        .values()
        .iter()
        .zip(uk.values())
        .zip(&grad)
        .map(|((a, b), g)| (a - b) / cfg.tau + g)
        .collect();
    Ok(sup(&r))
}

/// `u0 · e^{−kt}`, the solution of `∂u/∂t = −k u`.
pub fn relaxation_exact(k: f64, u0: &Field, t: f64) -> Result<Field> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time must be non-negative, got {t}"
        )));
    }
    let decay = (-k * t).exp();
    Ok(u0.map(|v| v * decay))
}

/// Bound on `|u|` assumed when sizing explicit sub-steps.
fn amplitude_bound(u: &Field) -> f64 {
    1.2 * u.max_abs().max(1.0)
}

/// Number and size of explicit Allen–Cahn sub-steps covering `tau`.
pub fn ac_substeps(epsilon: f64, tau: f64, u: &Field) -> (usize, f64) {
    let lap_max: f64 = match u.grid() {
        Grid::D1(g) => 4.0 / (g.dx() * g.dx()),
        Grid::D2(g) => 4.0 / (g.x.dx() * g.x.dx()) + 4.0 / (g.y.dx() * g.y.dx()),
    };
    let b = amplitude_bound(u);
    let lambda = lap_max + (3.0 * b * b - 1.0).max(0.0) / (epsilon * epsilon);
    let n = (tau * lambda).ceil().max(1.0) as usize;
    (n, tau / n as f64)
}

/// Number and size of explicit Cahn–Hilliard sub-steps covering `tau`.
pub fn ch_substeps(epsilon: f64, tau: f64, u: &Field) -> Result<(usize, f64)> {
    let g = u.grid().as_1d()?;
    let l = 4.0 / (g.dx() * g.dx());
    let b = amplitude_bound(u);
    let lambda = l * l + l * (3.0 * b * b - 1.0).max(0.0) / (epsilon * epsilon);
    let n = (tau * lambda).ceil().max(1.0) as usize;
    Ok((n, tau / n as f64))
}

const BLOWUP: f64 = 10.0;

fn check_tau(epsilon: f64, tau: f64) -> Result<()> {
    if !(epsilon > 0.0 && tau > 0.0 && epsilon.is_finite() && tau.is_finite()) {
        return Err(Error::InvalidParameter(
            "epsilon and tau must be positive".into(),
        ));
    }
    Ok(())
}

/// Advances `∂u/∂t = −(f'(u)/ε² − Δu)` by `tau` with explicit Euler sub-steps.
pub fn ac_reference_step(epsilon: f64, tau: f64, uk: &Field) -> Result<Field> {
    check_tau(epsilon, tau)?;
    let spec = EnergySpec::GinzburgLandau { epsilon };
    let (n, dt) = ac_substeps(epsilon, tau, uk);
    let mut u = uk.clone();
    for _ in 0..n {
        let mu = spec.functional_derivative(&u);
        u = u.zip_with(&mu, |a, m| a - dt * m)?;
        let amax = u.max_abs();
        if !(amax <= BLOWUP) {
            return Err(Error::Unstable(amax));
        }
    }
    Ok(u)
}

/// Allen–Cahn reference on a 2D grid.
pub fn ac2d_reference_step(epsilon: f64, tau: f64, uk: &Field) -> Result<Field> {
    uk.grid().as_2d()?;
    ac_reference_step(epsilon, tau, uk)
}

/// Advances `∂u/∂t = Δ(f'(u)/ε² − Δu)` by `tau` on a 1D grid; both no-flux
/// conditions come from reflected ghost nodes in each Laplacian.
pub fn ch1d_reference_step(epsilon: f64, tau: f64, uk: &Field) -> Result<Field> {
    check_tau(epsilon, tau)?;
    let (n, dt) = ch_substeps(epsilon, tau, uk)?;
    let spec = EnergySpec::GinzburgLandau { epsilon };
    let mut u = uk.clone();
    for _ in 0..n {
        let lap_mu = laplacian_neumann(&spec.functional_derivative(&u));
        u = u.zip_with(&lap_mu, |a, l| a + dt * l)?;
        let amax = u.max_abs();
        if !(amax <= BLOWUP) {
            return Err(Error::Unstable(amax));
        }
    }
    Ok(u)
}

/// Anything that advances a field by one time step.
pub trait Stepper {
    fn step(&mut self, u: &Field) -> Result<Field>;
    fn tau(&self) -> f64;
}

pub struct MinMoveStepper {
    pub cfg: MinMoveConfig,
    pub spec: EnergySpec,
}

impl Stepper for MinMoveStepper {
    fn step(&mut self, u: &Field) -> Result<Field> {
        minmove_step(&self.cfg, &self.spec, u)
    }
    fn tau(&self) -> f64 {
        self.cfg.tau
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    AllenCahn,
    CahnHilliard,
}

pub struct ReferenceStepper {
    pub kind: ReferenceKind,
    pub epsilon: f64,
    pub tau: f64,
}

impl Stepper for ReferenceStepper {
    fn step(&mut self, u: &Field) -> Result<Field> {
        match self.kind {
            ReferenceKind::AllenCahn => ac_reference_step(self.epsilon, self.tau, u),
            ReferenceKind::CahnHilliard => ch1d_reference_step(self.epsilon, self.tau, u),
        }
    }
    fn tau(&self) -> f64 {
        self.tau
    }
}

/// Exact relaxation `u ↦ u·e^{−kτ}`.
pub struct RelaxationExactStepper {
    pub k: f64,
    pub tau: f64,
}

impl Stepper for RelaxationExactStepper {
    fn step(&mut self, u: &Field) -> Result<Field> {
        relaxation_exact(self.k, u, self.tau)
    }
    fn tau(&self) -> f64 {
        self.tau
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tau: f64,
    pub fields: Vec<Field>,
    pub energies: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        (0..self.fields.len())
            .map(|k| k as f64 * self.tau)
            .collect()
    }

    pub fn last(&self) -> &Field {
        self.fields.last().expect("a trajectory holds at least u0")
    }

    /// Number of steps where the energy went up.
    pub fn energy_increases(&self) -> usize {
        self.energies.windows(2).filter(|e| e[1] > e[0]).count()
    }

    /// Writes `t,energy` rows.
    pub fn write_energy_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,energy")?;
        for (t, e) in self.times().iter().zip(&self.energies) {
            writeln!(w, "{t},{e}")?;
        }
        Ok(())
    }

    /// Writes `energy.csv` and `step_XXXX.csv` field files into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_energy_csv(std::io::BufWriter::new(std::fs::File::create(
            dir.join("energy.csv"),
        )?))?;
        for (k, f) in self.fields.iter().enumerate() {
            f.write_csv(std::io::BufWriter::new(std::fs::File::create(
                dir.join(format!("step_{k:04}.csv")),
            )?))?;
        }
        Ok(())
    }
}

/// Iterates `stepper` from `u0`, recording `spec`'s energy after every step.
pub fn rollout(
    stepper: &mut dyn Stepper,
    spec: &EnergySpec,
    u0: &Field,
    n_steps: usize,
) -> Result<Trajectory> {
    let mut fields = vec![u0.clone()];
    let mut energies = vec![spec.total_energy(u0)];
    for _ in 0..n_steps {
        let next = stepper.step(fields.last().unwrap())?;
        let e = spec.total_energy(&next);
        if !e.is_finite() {
            return Err(Error::InvalidField("energy became non-finite".into()));
        }
        energies.push(e);
        fields.push(next);
    }
    Ok(Trajectory {
        tau: stepper.tau(),
        fields,
        energies,
    })
}
