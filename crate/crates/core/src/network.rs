//! Coordinate networks (PINN), MLP/CNN branch networks and their DeepONet
//! combination `G(x, u) = Σ_k b_k(u) t_k(x) + b₀`.
//!
//! Parameters are a flat list of matrices. For a DeepONet the order is the
//! branch layers, then the trunk layers, then `b₀` as a 1×1 matrix; each layer
//! contributes its weight followed by its bias. Dense weights are
//! `fan_in × fan_out` (inputs are row vectors); convolution weights are
//! `filters × (channels·k·k)` with a `1 × filters` bias.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ConvGeom, Gradients, Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::field::{Grid, Grid1D, Grid2D};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

/// Fully connected network with activated hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let s = Self { widths, activation };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::InvalidParameter(
                "an MLP needs input, at least one hidden layer and output".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidParameter(
                "layer widths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.widths
            .windows(2)
            .flat_map(|w| [(w[0], w[1]), (1, w[1])])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Convolutional branch: conv layers (activated), flatten, linear dense output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<ConvLayerSpec>,
    pub dense_out: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl CnnSpec {
    pub fn geometries(&self) -> Result<Vec<ConvGeom>> {
        if self.layers.is_empty() || self.dense_out == 0 {
            return Err(Error::InvalidParameter(
                "a CNN needs conv layers and a dense output".into(),
            ));
        }
        let (mut c, mut h, mut w) = (self.channels, self.height, self.width);
        let mut out = Vec::new();
        for l in &self.layers {
            if l.filters == 0 {
                return Err(Error::InvalidParameter(
                    "filter count must be positive".into(),
                ));
            }
            let g = ConvGeom::new(c, h, w, l.kernel, l.stride, Padding::Valid)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            (c, h, w) = (l.filters, g.out_h, g.out_w);
            out.push(g);
        }
        Ok(out)
    }

    pub fn input_width(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Width of the flattened feature map fed to the dense layer.
    pub fn flat_width(&self) -> Result<usize> {
        let g = self.geometries()?;
        let last = g.last().unwrap();
        Ok(self.layers.last().unwrap().filters * last.out_positions())
    }

    fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut s = Vec::new();
        for (l, g) in self.layers.iter().zip(self.geometries()?) {
            s.push((l.filters, g.patch_len()));
            s.push((1, l.filters));
        }
        s.push((self.flat_width()?, self.dense_out));
        s.push((1, self.dense_out));
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchSpec {
    Mlp(MlpSpec),
    Cnn(CnnSpec),
}

impl BranchSpec {
    pub fn input_width(&self) -> usize {
        match self {
            BranchSpec::Mlp(m) => m.input_width(),
            BranchSpec::Cnn(c) => c.input_width(),
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            BranchSpec::Mlp(m) => m.output_width(),
            BranchSpec::Cnn(c) => c.dense_out,
        }
    }

    fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        match self {
            BranchSpec::Mlp(m) => {
                m.validate()?;
                Ok(m.shapes())
            }
            BranchSpec::Cnn(c) => c.shapes(),
        }
    }
}

/// Architecture of a trainable time-stepper.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Coordinate network with scalar output.
    Pinn {
        net: MlpSpec,
    },
    DeepOnet {
        branch: BranchSpec,
        trunk: MlpSpec,
    },
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        self.param_shapes().map(|_| ())
    }

    /// Shapes of the flat parameter list.
    pub fn param_shapes(&self) -> Result<Vec<(usize, usize)>> {
        match self {
            NetworkSpec::Pinn { net } => {
                net.validate()?;
                if net.output_width() != 1 {
                    return Err(Error::InvalidParameter("a PINN has a scalar output".into()));
                }
                Ok(net.shapes())
            }
            NetworkSpec::DeepOnet { branch, trunk } => {
                trunk.validate()?;
                if branch.output_width() != trunk.output_width() {
                    return Err(Error::InvalidParameter(format!(
                        "branch width {} differs from trunk width {}",
                        branch.output_width(),
                        trunk.output_width()
                    )));
                }
                let mut s = branch.shapes()?;
                s.extend(trunk.shapes());
                s.push((1, 1));
                Ok(s)
            }
        }
    }

    /// Shapes together with initialization roles.
    pub fn param_roles(&self) -> Result<Vec<((usize, usize), ParamRole)>> {
        let shapes = self.param_shapes()?;
        let mut kernels = Vec::new();
        if let NetworkSpec::DeepOnet {
            branch: BranchSpec::Cnn(c),
            ..
        } = self
        {
            kernels = c.layers.iter().map(|l| l.kernel * l.kernel).collect();
        }
        let b0 = self.latent_width().is_some();
        Ok(shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let role = if i % 2 == 1 || (b0 && i + 1 == shapes.len()) {
                    ParamRole::Bias
                } else if i / 2 < kernels.len() {
                    // filters × (channels·k·k): fan-out spreads over the kernel window
                    ParamRole::Weight {
                        fan_in: c,
                        fan_out: r * kernels[i / 2],
                    }
                } else {
                    ParamRole::Weight {
                        fan_in: r,
                        fan_out: c,
                    }
                };
                ((r, c), role)
            })
            .collect())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|(r, c)| r * c).sum())
    }

    pub fn coord_dim(&self) -> usize {
        match self {
            NetworkSpec::Pinn { net } => net.input_width(),
            NetworkSpec::DeepOnet { trunk, .. } => trunk.input_width(),
        }
    }

    /// Number of sensor values the branch consumes; `None` for a PINN.
    pub fn sensor_count(&self) -> Option<usize> {
        match self {
            NetworkSpec::Pinn { .. } => None,
            NetworkSpec::DeepOnet { branch, .. } => Some(branch.input_width()),
        }
    }

    /// Latent width `p`.
    pub fn latent_width(&self) -> Option<usize> {
        match self {
            NetworkSpec::Pinn { .. } => None,
            NetworkSpec::DeepOnet { trunk, .. } => Some(trunk.output_width()),
        }
    }

    /// Relaxation DeepONet: 100 sensors, branch 2×100, trunk 3×100, p = 100.
    pub fn relaxation(activation: Activation) -> Self {
        NetworkSpec::DeepOnet {
            branch: BranchSpec::Mlp(MlpSpec {
                widths: vec![100, 100, 100, 100],
                activation,
            }),
            trunk: MlpSpec {
                widths: vec![1, 100, 100, 100, 100],
                activation,
            },
        }
    }

    /// Allen–Cahn DeepONet: 28×28 image branch, trunk 3×120 on 2D coordinates.
    pub fn allen_cahn(activation: Activation) -> Self {
        NetworkSpec::DeepOnet {
            branch: BranchSpec::Cnn(CnnSpec {
                channels: 1,
                height: 28,
                width: 28,
                layers: vec![
                    ConvLayerSpec {
                        filters: 32,
                        kernel: 3,
                        stride: 1,
                    },
                    ConvLayerSpec {
                        filters: 6,
                        kernel: 3,
                        stride: 3,
                    },
                ],
                dense_out: 120,
                activation,
            }),
            trunk: MlpSpec {
                widths: vec![2, 120, 120, 120, 120],
                activation,
            },
        }
    }

    /// Cahn–Hilliard DeepONet: 40 sensors, branch 2×40, trunk 3×40, p = 40.
    pub fn cahn_hilliard(activation: Activation) -> Self {
        NetworkSpec::DeepOnet {
            branch: BranchSpec::Mlp(MlpSpec {
                widths: vec![40, 40, 40, 40],
                activation,
            }),
            trunk: MlpSpec {
                widths: vec![1, 40, 40, 40, 40],
                activation,
            },
        }
    }

    /// Sequential-PINN sub-network: two hidden layers of 20.
    pub fn pinn_1d(activation: Activation) -> Self {
        NetworkSpec::Pinn {
            net: MlpSpec {
                widths: vec![1, 20, 20, 1],
                activation,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

/// Ordered sensor locations, always the nodes of a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub grid: Grid,
}

impl SensorLayout {
    pub fn new(grid: Grid) -> Self {
        Self { grid }
    }

    /// 100 sensors on [−1, 1].
    pub fn relaxation() -> Self {
        Self::new(Grid::D1(Grid1D::new(100, -1.0, 1.0).unwrap()))
    }

    /// 40 sensors on [0, 1].
    pub fn cahn_hilliard() -> Self {
        Self::new(Grid::D1(Grid1D::new(40, 0.0, 1.0).unwrap()))
    }

    /// 28×28 sensors on [−1, 1]².
    pub fn allen_cahn() -> Self {
        Self::new(Grid::D2(
            Grid2D::new(28, 28, (-1.0, 1.0), (-1.0, 1.0)).unwrap(),
        ))
    }

    pub fn count(&self) -> usize {
        self.grid.len()
    }

    /// Sensor coordinates as an `count × dim` matrix.
    pub fn coords(&self) -> Array2<f64> {
        let d = self.grid.dim();
        let pts = self.grid.points();
        Array2::from_shape_fn((pts.len(), d), |(i, j)| pts[i][j])
    }
}

/// Architecture plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Array2<f64>>,
}

fn glorot(
    rng: &mut ChaCha8Rng,
    shape: (usize, usize),
    fan_in: usize,
    fan_out: usize,
) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

impl Network {
    /// Glorot-uniform weights, zero biases and `b₀ = 0`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_roles()?
            .into_iter()
            .map(|(shape, role)| match role {
                ParamRole::Weight { fan_in, fan_out } => glorot(&mut rng, shape, fan_in, fan_out),
                ParamRole::Bias => Array2::zeros(shape),
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Array2<f64>>) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.dim()) {
            return Err(Error::Shape(
                "parameter list does not match the architecture".into(),
            ));
        }
        if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn b0(&self) -> Option<f64> {
        self.spec
            .latent_width()
            .map(|_| self.params.last().unwrap()[[0, 0]])
    }

    /// Predictions `B × N` for `B` input fields (rows of `sensors`) at the
    /// `N` coordinates (rows of `coords`). A PINN ignores `sensors` and
    /// returns one row.
    pub fn predict(
        &self,
        coords: &Array2<f64>,
        sensors: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>> {
        let mut mt = ModelTape::new(&self.spec, false)?;
        mt.load(self, coords, sensors)?;
        mt.tape.forward()?;
        Ok(mt.tape.value(mt.output)?.clone())
    }

    /// Predictions plus `∂G/∂x_j` for every coordinate direction `j`.
    pub fn predict_with_gradient(
        &self,
        coords: &Array2<f64>,
        sensors: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let mut mt = ModelTape::new(&self.spec, true)?;
        mt.load(self, coords, sensors)?;
        mt.tape.forward()?;
        let grads = mt
            .coord_grads
            .iter()
            .map(|&g| mt.tape.value(g).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok((mt.tape.value(mt.output)?.clone(), grads))
    }

    /// `G(x, u)` at a single coordinate.
    pub fn forward_point(&self, x: &[f64], sensors: Option<&[f64]>) -> Result<f64> {
        let (c, s) = self.point_inputs(x, sensors)?;
        Ok(self.predict(&c, s.as_ref())?[[0, 0]])
    }

    /// `∂G/∂x` at a single coordinate.
    pub fn coordinate_gradient(&self, x: &[f64], sensors: Option<&[f64]>) -> Result<Vec<f64>> {
        let (c, s) = self.point_inputs(x, sensors)?;
        let (_, g) = self.predict_with_gradient(&c, s.as_ref())?;
        Ok(g.iter().map(|gj| gj[[0, 0]]).collect())
    }

    fn point_inputs(
        &self,
        x: &[f64],
        sensors: Option<&[f64]>,
    ) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let c = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        let s = sensors
            .map(|u| Array2::from_shape_vec((1, u.len()), u.to_vec()))
            .transpose()
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok((c, s))
    }
}

/// A recorded network evaluation that losses can extend.
pub struct ModelTape {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub sensors: Option<Var>,
    pub coords: Var,
    /// One-hot coordinate directions, `N × d` each, seeding the tangents.
    pub directions: Vec<Var>,
    /// `B × N` predictions.
    pub output: Var,
    /// `B × N` coordinate derivatives, one per direction (empty unless requested).
    pub coord_grads: Vec<Var>,
    coord_dim: usize,
    sensor_count: Option<usize>,
}

fn activate(tape: &mut Tape, z: Var, act: Activation) -> Var {
    match act {
        Activation::Tanh => tape.tanh(z),
        Activation::Relu => tape.relu(z),
        Activation::Identity => z,
    }
}

/// Records an MLP on `x` (rows are points). When `tangents` is non-empty,
/// also propagates each forward tangent `dX` through the layers and returns
/// the output tangents. ReLU uses slope 0 at the kink.
pub fn mlp_with_tangents(
    tape: &mut Tape,
    spec: &MlpSpec,
    params: &[Var],
    x: Var,
    tangents: &[Var],
) -> (Var, Vec<Var>) {
    let layers = spec.widths.len() - 1;
    let mut h = x;
    let mut dh: Vec<Var> = tangents.to_vec();
    for l in 0..layers {
        let (w, b) = (params[2 * l], params[2 * l + 1]);
        let z = tape.matmul(h, w);
        let z = tape.broadcast_add(z, b);
        let dz: Vec<Var> = dh.iter().map(|&d| tape.matmul(d, w)).collect();
        if l + 1 == layers {
            return (z, dz);
        }
        h = activate(tape, z, spec.activation);
        dh = match spec.activation {
            Activation::Identity => dz,
            Activation::Tanh => {
                let sq = tape.square(h);
                let neg = tape.scale(sq, -1.0);
                let slope = tape.add_scalar(neg, 1.0);
                dz.iter().map(|&d| tape.mul(slope, d)).collect()
            }
            Activation::Relu => {
                if dz.is_empty() {
                    dz
                } else {
                    let mask = tape.step(z);
                    dz.iter().map(|&d| tape.mul(mask, d)).collect()
                }
            }
        };
    }
    unreachable!("MLP has at least one layer")
}

fn cnn(tape: &mut Tape, spec: &CnnSpec, params: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    let geoms = spec.geometries()?;
    for (i, g) in geoms.into_iter().enumerate() {
        let z = tape.conv2d(h, params[2 * i], params[2 * i + 1], g);
        h = activate(tape, z, spec.activation);
    }
    let n = spec.layers.len();
    let z = tape.matmul(h, params[2 * n]);
    Ok(tape.broadcast_add(z, params[2 * n + 1]))
}

impl ModelTape {
    pub fn new(spec: &NetworkSpec, coordinate_gradient: bool) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let mut tape = Tape::new();
        let params: Vec<Var> = shapes.iter().map(|_| tape.input()).collect();
        let d = spec.coord_dim();
        let coords = tape.input_cols(d);
        let directions: Vec<Var> = if coordinate_gradient {
            (0..d).map(|_| tape.input_cols(d)).collect()
        } else {
            Vec::new()
        };
        let (sensors, output, coord_grads) = match spec {
            NetworkSpec::Pinn { net } => {
                let (y, dy) = mlp_with_tangents(&mut tape, net, &params, coords, &directions);
                let out = tape.transpose(y);
                let grads = dy.into_iter().map(|g| tape.transpose(g)).collect();
                (None, out, grads)
            }
            NetworkSpec::DeepOnet { branch, trunk } => {
                let s = tape.input_cols(branch.input_width());
                let nb = match branch {
                    BranchSpec::Mlp(m) => m.shapes().len(),
                    BranchSpec::Cnn(c) => c.shapes()?.len(),
                };
                let bparams = &params[..nb];
                let tparams = &params[nb..params.len() - 1];
                let b0 = params[params.len() - 1];
                let bo = match branch {
                    BranchSpec::Mlp(m) => mlp_with_tangents(&mut tape, m, bparams, s, &[]).0,
                    BranchSpec::Cnn(c) => cnn(&mut tape, c, bparams, s)?,
                };
                let (t, dt) = mlp_with_tangents(&mut tape, trunk, tparams, coords, &directions);
                let tt = tape.transpose(t);
                let g = tape.matmul(bo, tt);
                let out = tape.broadcast_add(g, b0);
                let grads = dt
                    .into_iter()
                    .map(|d| {
                        let dtt = tape.transpose(d);
                        tape.matmul(bo, dtt)
                    })
                    .collect();
                (Some(s), out, grads)
            }
        };
        Ok(Self {
            tape,
            params,
            sensors,
            coords,
            directions,
            output,
            coord_grads,
            coord_dim: d,
            sensor_count: spec.sensor_count(),
        })
    }

    pub fn set_params(&mut self, params: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (&v, p) in self.params.iter().zip(params) {
            self.tape.set(v, p.clone())?;
        }
        Ok(())
    }

    pub fn set_coords(&mut self, coords: &Array2<f64>) -> Result<()> {
        if coords.ncols() != self.coord_dim {
            return Err(Error::Shape(format!(
                "coordinates have {} columns, network expects {}",
                coords.ncols(),
                self.coord_dim
            )));
        }
        self.tape.set(self.coords, coords.clone())?;
        for j in 0..self.directions.len() {
            let e = Array2::from_shape_fn(coords.dim(), |(_, c)| if c == j { 1.0 } else { 0.0 });
            self.tape.set(self.directions[j], e)?;
        }
        Ok(())
    }

    pub fn set_sensors(&mut self, sensors: &Array2<f64>) -> Result<()> {
        match (self.sensors, self.sensor_count) {
            (Some(v), Some(m)) => {
                if sensors.ncols() != m {
                    return Err(Error::Shape(format!(
                        "{} sensor values given, layout has {}",
                        sensors.ncols(),
                        m
                    )));
                }
                self.tape.set(v, sensors.clone())
            }
            _ => Ok(()),
        }
    }

    pub fn load(
        &mut self,
        net: &Network,
        coords: &Array2<f64>,
        sensors: Option<&Array2<f64>>,
    ) -> Result<()> {
        self.set_params(&net.params)?;
        self.set_coords(coords)?;
        match (self.sensors.is_some(), sensors) {
            (true, Some(s)) => self.set_sensors(s),
            (true, None) => Err(Error::Shape("a DeepONet needs sensor values".into())),
            (false, _) => Ok(()),
        }
    }

    /// Parameter adjoints in parameter order.
    pub fn param_grads(&self, g: &Gradients) -> Result<Vec<Array2<f64>>> {
        self.params
            .iter()
            .map(|&v| Ok(g.get_or_zeros(v, self.tape.value(v)?.dim())))
            .collect()
    }
}

const MAGIC: &[u8; 8] = b"PFNETCK1";

/// Metadata stored ahead of a checkpoint's weight payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub sensors: Option<SensorLayout>,
    pub shapes: Vec<(usize, usize)>,
    pub sha256: String,
}

/// Checkpoint layout: 8-byte magic `PFNETCK1`, header length as u64 LE, the
/// JSON header, then every parameter in order, row-major, as f64 LE. The
/// header's `sha256` is the hex digest of the payload bytes.
pub fn write_checkpoint(
    path: &Path,
    net: &Network,
    seed: u64,
    sensors: Option<SensorLayout>,
) -> Result<()> {
    let mut payload = Vec::with_capacity(8 * net.param_count());
    for p in &net.params {
        for v in p.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        spec: net.spec.clone(),
        seed,
        sensors,
        shapes: net.params.iter().map(|p| p.dim()).collect(),
        sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(json.len() as u64).to_le_bytes())?;
    f.write_all(&json)?;
    f.write_all(&payload)?;
    f.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Network, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("missing checkpoint magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Corrupt("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..hend])?;
    let payload = &bytes[hend..];
    if hex(&Sha256::digest(payload)) != header.sha256 {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    let total: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
    if payload.len() != 8 * total {
        return Err(Error::Corrupt(
            "payload length does not match shapes".into(),
        ));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let params = header
        .shapes
        .iter()
        .map(|&s| Array2::from_shape_simple_fn(s, || vals.next().unwrap()))
        .collect();
    let net = Network::from_params(header.spec.clone(), params)?;
    Ok((net, header))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
