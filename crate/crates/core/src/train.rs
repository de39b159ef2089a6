//! Energy-based losses `F(u_{k+1}) + d²(u_{k+1}, u_k)/2τ`, the DeepONet and
//! sequential-PINN trainers, and accuracy metrics.
//!
//! All losses are evaluated by trapezoid quadrature on a fixed node set (the
//! sensor grid for DeepONets). The gradient part of the Ginzburg–Landau
//! energy is either taken from the network's coordinate derivative
//! ([`GradientMode::Autodiff`]) or from cell-edge differences of nodal values
//! ([`GradientMode::Difference`], the same discretization as
//! [`EnergySpec::total_energy`]).
//!
//! Under the H⁻¹ metric the predicted field is shifted to carry the mean of
//! `u_k` exactly: `u = G − mean(G) + mean(u_k)`. The distance is only defined
//! for mean-zero differences, so without the shift the energy could be lowered
//! for free by moving the mean.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Var};
use crate::energy::EnergySpec;
use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::metric::{MetricKind, MetricSpec, PoissonOperator, MEAN_TOLERANCE};
use crate::network::{ModelTape, Network, NetworkSpec, SensorLayout};
use crate::sampler::Dataset;
use crate::solver::{ac_reference_step, ch1d_reference_step, minmove_step, MinMoveConfig, Stepper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Autodiff,
    Difference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub energy: EnergySpec,
    pub metric: MetricSpec,
    pub tau: f64,
    /// Quadrature nodes for both the energy and the distance integral.
    pub quadrature: Grid,
    #[serde(default)]
    pub gradient: GradientMode,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        self.metric.validate()?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.metric.kind == MetricKind::Hneg1 {
            self.quadrature.as_1d().map_err(|_| {
                Error::InvalidParameter("the H⁻¹ loss is implemented on 1D grids".into())
            })?;
        }
        Ok(())
    }

    fn conserved(&self) -> bool {
        self.metric.kind == MetricKind::Hneg1
    }
}

/// Constant matrices shared by every evaluation of one loss.
struct Quadrature {
    weights: Array2<f64>,
    normalized: Array2<f64>,
    edges: Option<(Array2<f64>, Array2<f64>)>,
    poisson: Option<(Array2<f64>, f64)>,
}

/// Edge-difference matrix `E` (nodes × edges) and per-edge coefficients `c`
/// with `Σ_e c_e (uE)_e² = dirichlet_energy(u)`.
fn edge_operator(grid: &Grid) -> (Array2<f64>, Array2<f64>) {
    let mut cols: Vec<(usize, usize, f64)> = Vec::new();
    match grid {
        Grid::D1(g) => {
            for i in 0..g.n() - 1 {
                cols.push((i, i + 1, 1.0 / (2.0 * g.dx())));
            }
        }
        Grid::D2(g) => {
            let (wx, wy) = (g.x.weights(), g.y.weights());
            for iy in 0..g.ny() {
                for ix in 0..g.nx() - 1 {
                    cols.push((
                        g.index(ix, iy),
                        g.index(ix + 1, iy),
                        wy[iy] / (2.0 * g.x.dx()),
                    ));
                }
            }
            for ix in 0..g.nx() {
                for iy in 0..g.ny() - 1 {
                    cols.push((
                        g.index(ix, iy),
                        g.index(ix, iy + 1),
                        wx[ix] / (2.0 * g.y.dx()),
                    ));
                }
            }
        }
    }
    let mut e = Array2::zeros((grid.len(), cols.len()));
    let mut c = Array2::zeros((cols.len(), 1));
    for (k, &(a, b, coef)) in cols.iter().enumerate() {
        e[[a, k]] = -1.0;
        e[[b, k]] = 1.0;
        c[[k, 0]] = coef;
    }
    (e, c)
}

/// `Q` with `Σ_e (δQ)_e² · M/dx = M ∫|∇φ|²` where `Δφ = δ` (δ mean-zero).
fn poisson_edge_map(op: &PoissonOperator) -> Result<Array2<f64>> {
    let n = op.grid().n();
    let w = op.weights();
    let total: f64 = w.iter().sum();
    let mut p = Array2::zeros((n, n));
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| f64::from(i == j) - w[j] / total).collect();
        let phi = op.solve(&col)?;
        for i in 0..n {
            p[[i, j]] = phi[i];
        }
    }
    // φ (row) = δ Pᵀ; edge differences of φ
    let mut d = Array2::zeros((n, n - 1));
    for e in 0..n - 1 {
        d[[e, e]] = -1.0;
        d[[e + 1, e]] = 1.0;
    }
    Ok(p.t().dot(&d))
}

impl Quadrature {
    fn new(cfg: &LossConfig, need_edges: bool) -> Result<Self> {
        let w = cfg.quadrature.weights();
        let n = w.len();
        let total: f64 = w.iter().sum();
        let weights = Array2::from_shape_vec((n, 1), w.clone()).unwrap();
        let normalized = weights.mapv(|v| v / total);
        let edges = need_edges.then(|| edge_operator(&cfg.quadrature));
        let poisson = if cfg.conserved() {
            let g = cfg.quadrature.as_1d()?;
            let op = PoissonOperator::new(g)?;
            Some((poisson_edge_map(&op)?, g.dx()))
        } else {
            None
        };
        Ok(Self {
            weights,
            normalized,
            edges,
            poisson,
        })
    }
}

/// Per-sample energy and scaled distance (both `B × 1`) of predicted fields
/// `u` against `uk`.
fn record_objective(
    tape: &mut Tape,
    cfg: &LossConfig,
    q: &Quadrature,
    u: Var,
    coord_grads: &[Var],
    uk: Var,
) -> (Var, Var) {
    let w = tape.constant(q.weights.clone());
    let bulk = match cfg.energy {
        EnergySpec::Quadratic { k } => {
            let sq = tape.square(u);
            tape.scale(sq, 0.5 * k)
        }
        EnergySpec::GinzburgLandau { epsilon } => {
            let sq = tape.square(u);
            let s = tape.add_scalar(sq, -1.0);
            let s2 = tape.square(s);
            tape.scale(s2, 0.25 / (epsilon * epsilon))
        }
    };
    let mut energy = tape.matmul(bulk, w);
    if cfg.energy.kappa() > 0.0 {
        let grad_term = match cfg.gradient {
            GradientMode::Autodiff => {
                let mut acc = tape.square(coord_grads[0]);
                for &g in &coord_grads[1..] {
                    let s = tape.square(g);
                    acc = tape.add(acc, s);
                }
                let dens = tape.scale(acc, cfg.energy.kappa());
                tape.matmul(dens, w)
            }
            GradientMode::Difference => {
                let (e, c) = q.edges.as_ref().expect("edge operator assembled");
                let e = tape.constant(e.clone());
                let c = tape.constant(c.clone());
                let diffs = tape.matmul(u, e);
                let sq = tape.square(diffs);
                tape.matmul(sq, c)
            }
        };
        energy = tape.add(energy, grad_term);
    }
    let delta = tape.sub(u, uk);
    let m = cfg.metric.weight_m;
    let distance = match &q.poisson {
        None => {
            let sq = tape.square(delta);
            let d = tape.matmul(sq, w);
            tape.scale(d, 1.0 / (m * 2.0 * cfg.tau))
        }
        Some((qmat, dx)) => {
            let qv = tape.constant(qmat.clone());
            let z = tape.matmul(delta, qv);
            let sq = tape.square(z);
            let ones = tape.constant(Array2::ones((qmat.ncols(), 1)));
            let d = tape.matmul(sq, ones);
            tape.scale(d, m / dx / (2.0 * cfg.tau))
        }
    };
    (energy, distance)
}

/// Value of a loss and its pieces, averaged over the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub energy: f64,
    pub distance: f64,
}

/// Recorded network loss, reusable across batches and parameter updates.
pub struct LossTape {
    pub cfg: LossConfig,
    pub model: ModelTape,
    uk: Var,
    mass: Option<Var>,
    /// Predicted fields, `B × N`, after the mean shift when conserved.
    pub field: Var,
    pub energy: Var,
    pub distance: Var,
    pub total: Var,
    normalized: Array2<f64>,
}

impl LossTape {
    pub fn new(cfg: &LossConfig, spec: &NetworkSpec) -> Result<Self> {
        cfg.validate()?;
        if let Some(m) = spec.sensor_count() {
            if m != cfg.quadrature.len() {
                return Err(Error::Shape(format!(
                    "branch takes {m} sensors but the quadrature has {} nodes",
                    cfg.quadrature.len()
                )));
            }
        }
        if spec.coord_dim() != cfg.quadrature.dim() {
            return Err(Error::Shape(
                "network coordinate dimension differs from the grid".into(),
            ));
        }
        let need_grad = cfg.energy.kappa() > 0.0 && cfg.gradient == GradientMode::Autodiff;
        let q = Quadrature::new(cfg, cfg.gradient == GradientMode::Difference)?;
        let mut model = ModelTape::new(spec, need_grad)?;
        let coords = SensorLayout::new(cfg.quadrature).coords();
        model.set_coords(&coords)?;
        let tape = &mut model.tape;
        let uk = tape.input_cols(cfg.quadrature.len());
        let (field, mass) = if cfg.conserved() {
            let wn = tape.constant(q.normalized.clone());
            let gm = tape.matmul(model.output, wn);
            let neg = tape.scale(gm, -1.0);
            let centred = tape.broadcast_add(model.output, neg);
            let mass = tape.input_cols(1);
            (tape.broadcast_add(centred, mass), Some(mass))
        } else {
            (model.output, None)
        };
        let grads = model.coord_grads.clone();
        let (energy, distance) = record_objective(&mut model.tape, cfg, &q, field, &grads, uk);
        let tape = &mut model.tape;
        let per = tape.add(energy, distance);
        let total = tape.mean(per);
        Ok(Self {
            cfg: cfg.clone(),
            model,
            uk,
            mass,
            field,
            energy,
            distance,
            total,
            normalized: q.normalized,
        })
    }

    /// Loads the batch of current fields `uk` (rows), which also feed the branch.
    pub fn set_batch(&mut self, uk: &Array2<f64>) -> Result<()> {
        self.model.set_sensors(uk)?;
        self.model.tape.set(self.uk, uk.clone())?;
        if let Some(m) = self.mass {
            self.model.tape.set(m, uk.dot(&self.normalized))?;
        }
        Ok(())
    }

    /// Evaluates the loss at `params`.
    pub fn evaluate(&mut self, params: &[Array2<f64>]) -> Result<LossValue> {
        self.model.set_params(params)?;
        self.model.tape.forward()?;
        let t = &self.model.tape;
        let b = t.value(self.energy)?.nrows() as f64;
        Ok(LossValue {
            total: t.scalar(self.total)?,
            energy: t.value(self.energy)?.sum() / b,
            distance: t.value(self.distance)?.sum() / b,
        })
    }

    /// Loss and its parameter gradient at `params`.
    pub fn value_and_grad(
        &mut self,
        params: &[Array2<f64>],
    ) -> Result<(LossValue, Vec<Array2<f64>>)> {
        let v = self.evaluate(params)?;
        let g = self.model.tape.backward(self.total, None)?;
        Ok((v, self.model.param_grads(&g)?))
    }

    /// Predicted fields from the last evaluation.
    pub fn prediction(&self) -> Result<Array2<f64>> {
        Ok(self.model.tape.value(self.field)?.clone())
    }
}

/// The loss as a function of free nodal values `u_{k+1}` (no network).
/// The gradient term always uses edge differences here.
pub struct NodalLoss {
    tape: Tape,
    u: Var,
    uk: Var,
    energy: Var,
    distance: Var,
    total: Var,
}

impl NodalLoss {
    pub fn new(cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = LossConfig {
            gradient: GradientMode::Difference,
            ..cfg.clone()
        };
        let q = Quadrature::new(&cfg, true)?;
        let mut tape = Tape::new();
        let n = cfg.quadrature.len();
        let u = tape.input_cols(n);
        let uk = tape.input_cols(n);
        let (energy, distance) = record_objective(&mut tape, &cfg, &q, u, &[], uk);
        let per = tape.add(energy, distance);
        let total = tape.mean(per);
        Ok(Self {
            tape,
            u,
            uk,
            energy,
            distance,
            total,
        })
    }

    /// Loss value and gradient with respect to `u_next` (rows are samples).
    pub fn value_and_grad(
        &mut self,
        u_next: &Array2<f64>,
        uk: &Array2<f64>,
    ) -> Result<(LossValue, Array2<f64>)> {
        if u_next.dim() != uk.dim() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                u_next.dim(),
                uk.dim()
            )));
        }
        self.tape.set(self.u, u_next.clone())?;
        self.tape.set(self.uk, uk.clone())?;
        self.tape.forward()?;
        let b = u_next.nrows() as f64;
        let v = LossValue {
            total: self.tape.scalar(self.total)?,
            energy: self.tape.value(self.energy)?.sum() / b,
            distance: self.tape.value(self.distance)?.sum() / b,
        };
        let g = self.tape.backward(self.total, None)?;
        Ok((v, g.get_or_zeros(self.u, u_next.dim())))
    }
}

fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap()
}

/// Relaxation loss on nodal values: `∫ ½k u² + ∫ (u − u_k)²/(2τM)`, with
/// its gradient with respect to `u_next`.
pub fn loss_relax(cfg: &LossConfig, u_next: &[f64], u_k: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !matches!(cfg.energy, EnergySpec::Quadratic { .. }) || cfg.metric.kind != MetricKind::L2 {
        return Err(Error::InvalidParameter(
            "the relaxation loss uses the quadratic energy and L²".into(),
        ));
    }
    if u_next.len() != cfg.quadrature.len() || u_k.len() != cfg.quadrature.len() {
        return Err(Error::Shape(
            "values do not match the quadrature layout".into(),
        ));
    }
    let mut l = NodalLoss::new(cfg)?;
    let (v, g) = l.value_and_grad(&row(u_next), &row(u_k))?;
    Ok((v.total, g.into_raw_vec_and_offset().0))
}

/// Allen–Cahn loss of a network on a batch of current fields (rows).
pub fn loss_allen_cahn(
    cfg: &LossConfig,
    net: &Network,
    u_k: &Array2<f64>,
) -> Result<(LossValue, Vec<Array2<f64>>)> {
    if !matches!(cfg.energy, EnergySpec::GinzburgLandau { .. }) || cfg.metric.kind != MetricKind::L2
    {
        return Err(Error::InvalidParameter(
            "the Allen–Cahn loss uses the Ginzburg–Landau energy and L²".into(),
        ));
    }
    network_loss(cfg, net, u_k)
}

/// Cahn–Hilliard loss of a network on a batch of current fields (rows).
pub fn loss_cahn_hilliard(
    cfg: &LossConfig,
    net: &Network,
    u_k: &Array2<f64>,
) -> Result<(LossValue, Vec<Array2<f64>>)> {
    if !matches!(cfg.energy, EnergySpec::GinzburgLandau { .. })
        || cfg.metric.kind != MetricKind::Hneg1
    {
        return Err(Error::InvalidParameter(
            "the Cahn–Hilliard loss uses the Ginzburg–Landau energy and H⁻¹".into(),
        ));
    }
    network_loss(cfg, net, u_k)
}

/// Any configured loss of a network; a PINN takes a single row `u_k`.
pub fn network_loss(
    cfg: &LossConfig,
    net: &Network,
    u_k: &Array2<f64>,
) -> Result<(LossValue, Vec<Array2<f64>>)> {
    let mut lt = LossTape::new(cfg, &net.spec)?;
    lt.set_batch(u_k)?;
    let out = lt.value_and_grad(&net.params)?;
    if cfg.conserved() {
        check_conservation(&lt, u_k)?;
    }
    Ok(out)
}

/// The mean shift must leave `u_{k+1} − u_k` with zero mean.
fn check_conservation(lt: &LossTape, u_k: &Array2<f64>) -> Result<()> {
    let pred = lt.prediction()?;
    let means = (&pred - u_k).dot(&lt.normalized);
    let scale = pred
        .iter()
        .chain(u_k.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1.0);
    for &m in means.iter() {
        if m.abs() > MEAN_TOLERANCE * scale {
            return Err(Error::NonZeroMean { mean: m, scale });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Learning rate reached at the last epoch by exponential decay; `None`
    /// keeps `lr` constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
    /// Mini-batch size; 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sweeps over the whole PINN sequence.
    #[serde(default = "one")]
    pub rounds: usize,
    /// Epochs fitting the first PINN to the initial condition.
    #[serde(default)]
    pub prefit_epochs: usize,
    /// Held-out evaluation cadence in epochs (0: only at the end).
    #[serde(default)]
    pub eval_every: usize,
    /// Checkpoint cadence in epochs (0: none).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_lr() -> f64 {
    1e-3
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            lr_final: None,
            batch_size: 0,
            seed,
            rounds: 1,
            prefit_epochs: epochs,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.rounds == 0 {
            return Err(Error::InvalidParameter(
                "epochs and rounds must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if let Some(f) = self.lr_final {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "final learning rate must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(f) if self.epochs > 1 => {
                self.lr * (f / self.lr).powf(epoch as f64 / (self.epochs - 1) as f64)
            }
            _ => self.lr,
        }
    }
}

/// `1 − SS_res/SS_tot`, pooled over every node of every sample.
pub fn r2_score(pred: &[Field], truth: &[Field]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        p.check_same_grid(t)?;
    }
    let p: Vec<f64> = pred
        .iter()
        .flat_map(|f| f.values().iter().copied())
        .collect();
    let t: Vec<f64> = truth
        .iter()
        .flat_map(|f| f.values().iter().copied())
        .collect();
    r2_values(&p, &t)
}

pub fn r2_values(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape(
            "r² needs equally many, non-empty values".into(),
        ));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse_values(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len().max(1) as f64
}

/// Ground-truth one-step maps used to score trained steppers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Oracle {
    MinMove {
        config: MinMoveConfig,
        energy: EnergySpec,
    },
    AllenCahn {
        epsilon: f64,
        tau: f64,
    },
    CahnHilliard {
        epsilon: f64,
        tau: f64,
    },
}

impl Oracle {
    pub fn step(&self, u: &Field) -> Result<Field> {
        match self {
            Oracle::MinMove { config, energy } => minmove_step(config, energy, u),
            Oracle::AllenCahn { epsilon, tau } => ac_reference_step(*epsilon, *tau, u),
            Oracle::CahnHilliard { epsilon, tau } => ch1d_reference_step(*epsilon, *tau, u),
        }
    }

    /// One oracle step for every row of `inputs`.
    pub fn targets(&self, grid: Grid, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(inputs.dim());
        for (i, r) in inputs.rows().into_iter().enumerate() {
            let next = self.step(&Field::new(grid, r.to_vec())?)?;
            out.row_mut(i)
                .assign(&ndarray::ArrayView1::from(next.values()));
        }
        Ok(out)
    }
}

/// Held-out inputs with their oracle targets.
#[derive(Clone, Debug)]
pub struct Holdout {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_mse: Option<f64>,
    pub test_r2: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,test_mse,test_r2")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{}",
                r.epoch,
                r.train_loss,
                opt(r.test_mse),
                opt(r.test_r2)
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// A trained DeepONet used as an explicit time stepper.
#[derive(Clone, Debug)]
pub struct OnetStepper {
    pub net: Network,
    pub grid: Grid,
    pub tau: f64,
    /// Shift predictions to the input's mean (conserved dynamics).
    pub conserve_mean: bool,
}

impl OnetStepper {
    pub fn new(net: Network, loss: &LossConfig) -> Self {
        Self {
            net,
            grid: loss.quadrature,
            tau: loss.tau,
            conserve_mean: loss.conserved(),
        }
    }

    /// Predictions for every row of `inputs`.
    pub fn predict_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let coords = SensorLayout::new(self.grid).coords();
        let mut out = Array2::zeros(inputs.dim());
        let chunk = 256;
        for start in (0..inputs.nrows()).step_by(chunk) {
            let end = (start + chunk).min(inputs.nrows());
            let x = inputs.slice(ndarray::s![start..end, ..]).to_owned();
            let mut p = self.net.predict(&coords, Some(&x))?;
            if self.conserve_mean {
                let w = self.grid.weights();
                let total: f64 = w.iter().sum();
                let wn =
                    Array2::from_shape_vec((w.len(), 1), w.iter().map(|v| v / total).collect())
                        .unwrap();
                let shift = x.dot(&wn) - p.dot(&wn);
                p += &shift;
            }
            out.slice_mut(ndarray::s![start..end, ..]).assign(&p);
        }
        Ok(out)
    }

    /// Held-out MSE and r² against oracle targets.
    pub fn score(&self, holdout: &Holdout) -> Result<(f64, f64)> {
        let p = self.predict_batch(&holdout.inputs)?;
        let pv = p.as_slice().unwrap();
        let tv = holdout.targets.as_standard_layout().to_owned();
        let tv = tv.as_slice().unwrap();
        Ok((mse_values(pv, tv), r2_values(pv, tv)?))
    }
}

impl Stepper for OnetStepper {
    fn step(&mut self, u: &Field) -> Result<Field> {
        if *u.grid() != self.grid {
            return Err(Error::GridMismatch(
                "field grid differs from the sensor grid".into(),
            ));
        }
        let p = self.predict_batch(&row(u.values()))?;
        Field::new(self.grid, p.row(0).to_vec())
    }

    fn tau(&self) -> f64 {
        self.tau
    }
}

pub type CheckpointHook<'a> = dyn FnMut(usize, &Network) -> Result<()> + 'a;

/// Mini-batch Adam on the mean loss over `train`'s samples.
pub fn train_deeponet(
    net: Network,
    train: &Dataset,
    holdout: Option<&Holdout>,
    loss: &LossConfig,
    cfg: &TrainConfig,
    mut checkpoint: Option<&mut CheckpointHook>,
) -> Result<(Network, History)> {
    cfg.validate()?;
    if train.layout.grid != loss.quadrature {
        return Err(Error::GridMismatch(
            "dataset sensors differ from the loss quadrature".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let mut lt = LossTape::new(loss, &net.spec)?;
    let mut params = net.params.clone();
    let mut adam = AdamState::new(&params);
    let mut adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train.len();
    let bs = if cfg.batch_size == 0 {
        n
    } else {
        cfg.batch_size.min(n)
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        adam_cfg.lr = cfg.lr_at(epoch - 1);
        let mut sum = 0.0;
        for chunk in order.chunks(bs) {
            let batch = train.samples.select(Axis(0), chunk);
            lt.set_batch(&batch)?;
            let (v, grads) = lt.value_and_grad(&params)?;
            if !v.total.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    loss: v.total,
                });
            }
            sum += v.total * chunk.len() as f64;
            adam_step(&mut params, &grads, &mut adam, &adam_cfg)?;
        }
        let mut rec = EpochRecord {
            epoch,
            train_loss: sum / n as f64,
            test_mse: None,
            test_r2: None,
        };
        let eval_now = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        if let (Some(h), true) = (holdout, eval_now) {
            let stepper = OnetStepper::new(
                Network::from_params(net.spec.clone(), params.clone())?,
                loss,
            );
            let (mse, r2) = stepper.score(h)?;
            rec.test_mse = Some(mse);
            rec.test_r2 = Some(r2);
        }
        history.records.push(rec);
        if let Some(hook) = checkpoint.as_deref_mut() {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                hook(
                    epoch,
                    &Network::from_params(net.spec.clone(), params.clone())?,
                )?;
            }
        }
    }
    Ok((Network::from_params(net.spec, params)?, history))
}

/// Initial condition and loss for a sequence of PINN sub-networks.
#[derive(Clone, Debug)]
pub struct PinnProblem {
    pub loss: LossConfig,
    pub net: NetworkSpec,
    /// Initial field on the quadrature grid.
    pub u0: Field,
}

#[derive(Clone, Debug)]
pub struct PinnSequence {
    /// `networks[0]` represents the initial condition; `networks[k]` is step `k`.
    pub networks: Vec<Network>,
    /// Predictions at the quadrature nodes with the loss's energy per step.
    pub trajectory: crate::solver::Trajectory,
    /// Final loss of each step's sub-network.
    pub losses: Vec<f64>,
}

/// Builds the prediction tape for a PINN: `u = G` or the mean-shifted `G`.
fn pinn_prediction(lt: &mut LossTape, params: &[Array2<f64>]) -> Result<Array2<f64>> {
    lt.evaluate(params)?;
    lt.prediction()
}

/// Fits `net` to `target` values at the quadrature nodes by mean squared error.
fn prefit(
    spec: &NetworkSpec,
    params: &mut Vec<Array2<f64>>,
    grid: Grid,
    target: &[f64],
    mass: Option<f64>,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut model = ModelTape::new(spec, false)?;
    model.set_coords(&SensorLayout::new(grid).coords())?;
    let tape = &mut model.tape;
    let t = tape.input_cols(target.len());
    let mut out = model.output;
    if mass.is_some() {
        let w = grid.weights();
        let total: f64 = w.iter().sum();
        let wn = tape.constant(
            Array2::from_shape_vec((w.len(), 1), w.iter().map(|v| v / total).collect()).unwrap(),
        );
        let gm = tape.matmul(out, wn);
        let neg = tape.scale(gm, -1.0);
        out = tape.broadcast_add(out, neg);
        let m = tape.input_cols(1);
        tape.set(m, Array2::from_elem((1, 1), mass.unwrap()))?;
        out = tape.broadcast_add(out, m);
    }
    let d = tape.sub(out, t);
    let sq = tape.square(d);
    let loss = tape.mean(sq);
    tape.set(t, row(target))?;
    let mut adam = AdamState::new(params);
    let acfg = AdamConfig::with_lr(cfg.lr);
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..=cfg.prefit_epochs {
        model.set_params(params)?;
        model.tape.forward()?;
        let l = model.tape.scalar(loss)?;
        if !l.is_finite() {
            return Err(Error::Divergence { epoch, loss: l });
        }
        if l < best.0 {
            best = (l, params.clone());
        }
        if epoch == cfg.prefit_epochs {
            break;
        }
        let g = model.tape.backward(loss, None)?;
        let grads = model.param_grads(&g)?;
        adam_step(params, &grads, &mut adam, &acfg)?;
    }
    *params = best.1;
    Ok(())
}

/// Adam from `start` on one sub-network loss, returning the best iterate.
fn train_step_network(
    lt: &mut LossTape,
    start: Vec<Array2<f64>>,
    cfg: &TrainConfig,
) -> Result<(Vec<Array2<f64>>, f64)> {
    let mut params = start;
    let mut adam = AdamState::new(&params);
    let mut acfg = AdamConfig::with_lr(cfg.lr);
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..=cfg.epochs {
        acfg.lr = cfg.lr_at(epoch);
        let (v, grads) = lt.value_and_grad(&params)?;
        if !v.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: v.total,
            });
        }
        if v.total < best.0 {
            best = (v.total, params.clone());
        }
        if epoch == cfg.epochs {
            break;
        }
        adam_step(&mut params, &grads, &mut adam, &acfg)?;
    }
    Ok((best.1, best.0))
}

/// Trains one sub-network per time step, each warm-started from its
/// predecessor and fed the predecessor's prediction as `u_k`.
///
/// The predecessor's parameters are always a candidate with loss `F(u_k)`,
/// and the best iterate is kept, so the recorded energies never increase.
pub fn train_pinn_sequence(
    problem: &PinnProblem,
    n_steps: usize,
    cfg: &TrainConfig,
) -> Result<PinnSequence> {
    cfg.validate()?;
    let grid = problem.loss.quadrature;
    if *problem.u0.grid() != grid {
        return Err(Error::GridMismatch(
            "initial condition must live on the quadrature grid".into(),
        ));
    }
    if !matches!(problem.net, NetworkSpec::Pinn { .. }) {
        return Err(Error::InvalidParameter(
            "a PINN sequence needs coordinate networks".into(),
        ));
    }
    let mut lt = LossTape::new(&problem.loss, &problem.net)?;
    let mass = problem
        .loss
        .conserved()
        .then(|| crate::field::mean(&problem.u0));
    let mut p0 = Network::init(problem.net.clone(), cfg.seed)?.params;
    prefit(&problem.net, &mut p0, grid, problem.u0.values(), mass, cfg)?;

    let u0_row = row(problem.u0.values());
    let mut nets: Vec<Vec<Array2<f64>>> = vec![p0];
    let mut losses = vec![0.0; n_steps];
    for round in 0..cfg.rounds {
        for k in 1..=n_steps {
            let prev = nets[k - 1].clone();
            // a PINN ignores u_k except for the carried mean, which every step shares
            lt.set_batch(&u0_row)?;
            let u_prev = pinn_prediction(&mut lt, &prev)?;
            lt.set_batch(&u_prev)?;
            // candidates: the predecessor (loss F(u_k)) and last round's own network
            let mut start = prev.clone();
            if round > 0 {
                let own = nets[k].clone();
                if lt.evaluate(&own)?.total < lt.evaluate(&prev)?.total {
                    start = own;
                }
            }
            let (best, loss) = train_step_network(&mut lt, start, cfg)?;
            losses[k - 1] = loss;
            if round == 0 {
                nets.push(best);
            } else {
                nets[k] = best;
            }
        }
    }

    let mut fields = Vec::with_capacity(n_steps + 1);
    let mut energies = Vec::with_capacity(n_steps + 1);
    let mut u_prev = u0_row.clone();
    for p in &nets {
        lt.set_batch(&u_prev)?;
        let v = lt.evaluate(p)?;
        let pred = lt.prediction()?;
        energies.push(v.energy);
        fields.push(Field::new(grid, pred.row(0).to_vec())?);
        u_prev = pred;
    }
    let networks = nets
        .into_iter()
        .map(|p| Network::from_params(problem.net.clone(), p))
        .collect::<Result<Vec<_>>>()?;
    Ok(PinnSequence {
        networks,
        trajectory: crate::solver::Trajectory {
            tau: problem.loss.tau,
            fields,
            energies,
        },
        losses,
    })
}
