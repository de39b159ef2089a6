//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records a static expression graph once; it can then be
//! re-evaluated with new input values ([`Tape::forward`]) and differentiated
//! ([`Tape::backward`]) any number of times. Every value is a 2D `f64` matrix;
//! rows are batch entries or sample points. Shapes are resolved when the tape
//! is evaluated, so one tape serves any batch size.
//!
//! Derivatives of network outputs with respect to their coordinate inputs are
//! not obtained by differentiating twice. They are built explicitly as
//! forward tangents out of ordinary tape operations (see
//! `network::mlp_with_tangents`) and the tape then differentiates through them.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// `tanh` via `exp`, about twice as fast as libm and within a few ulp.
/// Near zero `expm1` keeps full relative precision.
#[inline]
fn fast_tanh(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let e = (2.0 * x).exp_m1();
        e / (e + 2.0)
    } else {
        1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
    }
}

/// Geometry of a 2D cross-correlation over `channels × height × width`
/// images flattened channel-major into one row per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_channels == 0 {
            return Err(Error::Shape(
                "kernel, stride and channels must be positive".into(),
            ));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if in_h < kernel || in_w < kernel {
                    return Err(Error::Shape(format!(
                        "kernel {kernel} larger than input {in_h}x{in_w}"
                    )));
                }
                (
                    (in_h - kernel) / stride + 1,
                    (in_w - kernel) / stride + 1,
                    0,
                    0,
                )
            }
            Padding::Same => {
                let oh = in_h.div_ceil(stride);
                let ow = in_w.div_ceil(stride);
                let ph = ((oh - 1) * stride + kernel).saturating_sub(in_h);
                let pw = ((ow - 1) * stride + kernel).saturating_sub(in_w);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::Shape("convolution output is empty".into()));
        }
        Ok(Self {
            in_channels,
            in_h,
            in_w,
            kernel,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input offset for a patch entry, or `None` when it falls in the padding.
    fn source(&self, oy: usize, ox: usize, c: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        if iy >= self.in_h || ix >= self.in_w {
            return None;
        }
        Some(c * self.in_h * self.in_w + iy * self.in_w + ix)
    }

    /// Row-major `(position, patch entry)` gather table; padding maps to `usize::MAX`.
    fn gather(&self) -> Vec<usize> {
        let k = self.kernel;
        let mut idx = Vec::with_capacity(self.out_positions() * self.patch_len());
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for c in 0..self.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            idx.push(self.source(oy, ox, c, ky, kx).unwrap_or(usize::MAX));
                        }
                    }
                }
            }
        }
        idx
    }

    /// Patches stacked sample-major: rows `s*pos..(s+1)*pos` belong to sample `s`.
    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let b = x.nrows();
        let idx = self.gather();
        let x = x.as_standard_layout();
        let mut cols = Array2::zeros((b * self.out_positions(), self.patch_len()));
        let dst = cols.as_slice_mut().expect("fresh array is contiguous");
        for (s, xs) in x.rows().into_iter().enumerate() {
            let xs = xs.to_slice().expect("standard layout");
            let out = &mut dst[s * idx.len()..(s + 1) * idx.len()];
            for (o, &src) in out.iter_mut().zip(&idx) {
                if src != usize::MAX {
                    *o = xs[src];
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, batch: usize) -> Array2<f64> {
        let idx = self.gather();
        let dcols = dcols.as_standard_layout();
        let src = dcols.as_slice().expect("standard layout");
        let mut dx = Array2::zeros((batch, self.in_len()));
        for (s, mut xs) in dx.rows_mut().into_iter().enumerate() {
            let xs = xs.as_slice_mut().expect("fresh array is contiguous");
            let part = &src[s * idx.len()..(s + 1) * idx.len()];
            for (&v, &t) in part.iter().zip(&idx) {
                if t != usize::MAX {
                    xs[t] += v;
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input {
        cols: Option<usize>,
    },
    Const(Array2<f64>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + b` with `b` of shape 1×1, 1×m or n×1 broadcast over `a`.
    BroadcastAdd(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Relu(Var),
    /// `1[x > 0]`, treated as a constant by the backward pass.
    Step(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Input { .. } | Op::Const(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::BroadcastAdd(a, b)
            | Op::MatMul(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Step(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
        }
    }
}

/// Recorded expression graph.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Option<Array2<f64>>>,
    // im2col buffers kept from the forward pass of each convolution.
    cache: Vec<Option<Array2<f64>>>,
    evaluated: bool,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`; `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v`, zeros of `shape` when `v` does not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn shape_err(what: &str, a: &Array2<f64>, b: &Array2<f64>) -> Error {
    Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim()))
}

fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    match shape {
        s if s == g.dim() => g.clone(),
        (1, 1) => Array2::from_elem((1, 1), g.sum()),
        (1, m) if m == g.ncols() => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
        (n, 1) if n == g.nrows() => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
        _ => unreachable!("shapes validated during forward"),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op) -> Var {
        if let Some(p) = op.parents().into_iter().max() {
            assert!(p.0 < self.ops.len(), "operand from another tape");
        }
        self.ops.push(op);
        self.values.push(None);
        self.cache.push(None);
        self.evaluated = false;
        Var(self.ops.len() - 1)
    }

    /// Input with any shape.
    pub fn input(&mut self) -> Var {
        self.push(Op::Input { cols: None })
    }

    /// Input whose column count is fixed; rows are free.
    pub fn input_cols(&mut self, cols: usize) -> Var {
        self.push(Op::Input { cols: Some(cols) })
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::BroadcastAdd(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::AddScalar(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn step(&mut self, a: Var) -> Var {
        self.push(Op::Step(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        self.push(Op::Conv2d { x, w, b, geom })
    }

    /// Sets the value of an input node.
    pub fn set(&mut self, v: Var, value: Array2<f64>) -> Result<()> {
        match self.ops.get(v.0) {
            Some(Op::Input { cols }) => {
                if let Some(c) = cols {
                    if value.ncols() != *c {
                        return Err(Error::Shape(format!(
                            "input {} expects {} columns, got {}",
                            v.0,
                            c,
                            value.ncols()
                        )));
                    }
                }
                self.values[v.0] = Some(value);
                self.evaluated = false;
                Ok(())
            }
            _ => Err(Error::Shape(format!("node {} is not an input", v.0))),
        }
    }

    pub fn value(&self, v: Var) -> Result<&Array2<f64>> {
        self.values
            .get(v.0)
            .and_then(|x| x.as_ref())
            .ok_or(Error::NotEvaluated)
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let a = self.value(v)?;
        if a.dim() != (1, 1) {
            return Err(Error::Shape(format!(
                "expected a scalar, got {:?}",
                a.dim()
            )));
        }
        Ok(a[[0, 0]])
    }

    /// Sets `feeds`, evaluates the tape and returns clones of `outputs`.
    pub fn eval(
        &mut self,
        feeds: Vec<(Var, Array2<f64>)>,
        outputs: &[Var],
    ) -> Result<Vec<Array2<f64>>> {
        for (v, x) in feeds {
            self.set(v, x)?;
        }
        self.forward()?;
        outputs.iter().map(|&o| self.value(o).cloned()).collect()
    }

    /// Evaluates every node in recording order.
    pub fn forward(&mut self) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.ops.len() {
            let out = match &self.ops[i] {
                Op::Input { .. } => {
                    if self.values[i].is_none() {
                        return Err(Error::Shape(format!("input {i} has no value")));
                    }
                    continue;
                }
                Op::Const(c) => c.clone(),
                Op::Add(a, b) => {
                    let (x, y) = (self.v(*a), self.v(*b));
                    if x.dim() != y.dim() {
                        return Err(shape_err("add", x, y));
                    }
                    x + y
                }
                Op::Sub(a, b) => {
                    let (x, y) = (self.v(*a), self.v(*b));
                    if x.dim() != y.dim() {
                        return Err(shape_err("sub", x, y));
                    }
                    x - y
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.v(*a), self.v(*b));
                    if x.dim() != y.dim() {
                        return Err(shape_err("mul", x, y));
                    }
                    x * y
                }
                Op::BroadcastAdd(a, b) => {
                    let (x, y) = (self.v(*a), self.v(*b));
                    let ok = matches!(y.dim(), (1, 1))
                        || y.dim() == (1, x.ncols())
                        || y.dim() == (x.nrows(), 1)
                        || y.dim() == x.dim();
                    if !ok {
                        return Err(shape_err("broadcast_add", x, y));
                    }
                    x + y
                }
                Op::Scale(a, c) => self.v(*a) * *c,
                Op::AddScalar(a, c) => self.v(*a) + *c,
                Op::MatMul(a, b) => {
                    let (x, y) = (self.v(*a), self.v(*b));
                    if x.ncols() != y.nrows() {
                        return Err(shape_err("matmul", x, y));
                    }
                    x.dot(y)
                }
                Op::Transpose(a) => self.v(*a).t().to_owned(),
                Op::Tanh(a) => self.v(*a).mapv(fast_tanh),
                Op::Relu(a) => self.v(*a).mapv(|z| z.max(0.0)),
                Op::Step(a) => self.v(*a).mapv(|z| if z > 0.0 { 1.0 } else { 0.0 }),
                Op::Square(a) => self.v(*a).mapv(|z| z * z),
                Op::Sum(a) => Array2::from_elem((1, 1), self.v(*a).sum()),
                Op::Mean(a) => {
                    let x = self.v(*a);
                    Array2::from_elem((1, 1), x.sum() / x.len() as f64)
                }
                Op::Conv2d { x, w, b, geom } => {
                    let (xv, wv, bv) = (self.v(*x), self.v(*w), self.v(*b));
                    if xv.ncols() != geom.in_len() {
                        return Err(Error::Shape(format!(
                            "conv input has {} columns, geometry needs {}",
                            xv.ncols(),
                            geom.in_len()
                        )));
                    }
                    if wv.ncols() != geom.patch_len() || bv.dim() != (1, wv.nrows()) {
                        return Err(shape_err("conv weights/bias", wv, bv));
                    }
                    let cols = geom.im2col(xv);
                    let batch = xv.nrows();
                    let pos = geom.out_positions();
                    let filters = wv.nrows();
                    let mut out = Array2::zeros((batch, filters * pos));
                    for (s, mut row) in out.rows_mut().into_iter().enumerate() {
                        let cs = cols.slice(s![s * pos..(s + 1) * pos, ..]);
                        let mut ys = row
                            .view_mut()
                            .into_shape_with_order((filters, pos))
                            .expect("row is contiguous");
                        ys.assign(&bv.t());
                        general_mat_mul(1.0, wv, &cs.t(), 1.0, &mut ys);
                    }
                    self.cache[i] = Some(cols);
                    out
                }
            };
            self.values[i] = Some(out);
        }
        self.evaluated = true;
        Ok(())
    }

    fn v(&self, v: Var) -> &Array2<f64> {
        self.values[v.0]
            .as_ref()
            .expect("operand evaluated before use")
    }

    /// Propagates `seed` (ones when `None`) backwards from `output`.
    pub fn backward(&self, output: Var, seed: Option<Array2<f64>>) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let out_val = self.value(output)?;
        let seed = seed.unwrap_or_else(|| Array2::ones(out_val.dim()));
        if seed.dim() != out_val.dim() {
            return Err(shape_err("seed", &seed, out_val));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.ops.len()];
        adj[output.0] = Some(seed);

        fn acc(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Input { .. } | Op::Const(_) | Op::Step(_) => {}
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, &g * self.v(*b));
                    acc(&mut adj, *b, &g * self.v(*a));
                }
                Op::BroadcastAdd(a, b) => {
                    acc(&mut adj, *b, reduce_to(&g, self.v(*b).dim()));
                    acc(&mut adj, *a, g.clone());
                }
                Op::Scale(a, c) => acc(&mut adj, *a, &g * *c),
                Op::AddScalar(a, _) => acc(&mut adj, *a, g.clone()),
                Op::MatMul(a, b) => {
                    acc(&mut adj, *a, g.dot(&self.v(*b).t()));
                    acc(&mut adj, *b, self.v(*a).t().dot(&g));
                }
                Op::Transpose(a) => acc(&mut adj, *a, g.t().to_owned()),
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(self.v(Var(i)))
                        .for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(self.v(*a)).for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(&mut adj, *a, d);
                }
                Op::Square(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(self.v(*a))
                        .for_each(|d, &z| *d *= 2.0 * z);
                    acc(&mut adj, *a, d);
                }
                Op::Sum(a) => {
                    let x = self.v(*a);
                    acc(&mut adj, *a, Array2::from_elem(x.dim(), g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let x = self.v(*a);
                    acc(
                        &mut adj,
                        *a,
                        Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64),
                    );
                }
                Op::Conv2d { x, w, b, geom } => {
                    let cols = self.cache[i].as_ref().expect("conv evaluated");
                    let wv = self.v(*w);
                    let batch = self.v(*x).nrows();
                    let pos = geom.out_positions();
                    let filters = wv.nrows();
                    let g = g.as_standard_layout();
                    let mut dw = Array2::zeros(wv.dim());
                    let mut db = Array2::zeros((1, filters));
                    let mut dcols = Array2::zeros(cols.dim());
                    for s in 0..batch {
                        let gs = g
                            .row(s)
                            .into_shape_with_order((filters, pos))
                            .expect("row is contiguous");
                        let cs = cols.slice(s![s * pos..(s + 1) * pos, ..]);
                        general_mat_mul(1.0, &gs, &cs, 1.0, &mut dw);
                        db += &gs.sum_axis(Axis(1)).insert_axis(Axis(0));
                        let mut ds = dcols.slice_mut(s![s * pos..(s + 1) * pos, ..]);
                        general_mat_mul(1.0, &gs.t(), wv, 0.0, &mut ds);
                    }
                    acc(&mut adj, *w, dw);
                    acc(&mut adj, *b, db);
                    acc(&mut adj, *x, geom.col2im(&dcols, batch));
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Array2<f64>]) -> Self {
        Self {
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if p.dim() != g.dim() {
            return Err(shape_err("adam", p, g));
        }
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn scalar(x: f64) -> Array2<f64> {
        Array2::from_elem((1, 1), x)
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(sum of output)/d(input) for every entry of
    /// every listed input.
    fn fd_check(tape: &mut Tape, out: Var, inputs: &[Var], tol: f64) {
        tape.forward().unwrap();
        let grads = tape.backward(out, None).unwrap();
        let h = 1e-6;
        for &v in inputs {
            let base = tape.value(v).unwrap().clone();
            let ad = grads.get_or_zeros(v, base.dim());
            for idx in 0..base.len() {
                let (r, c) = (idx / base.ncols(), idx % base.ncols());
                let mut p = base.clone();
                p[[r, c]] += h;
                tape.set(v, p).unwrap();
                tape.forward().unwrap();
                let fp = tape.value(out).unwrap().sum();
                let mut m = base.clone();
                m[[r, c]] -= h;
                tape.set(v, m).unwrap();
                tape.forward().unwrap();
                let fm = tape.value(out).unwrap().sum();
                let fd = (fp - fm) / (2.0 * h);
                let a = ad[[r, c]];
                let denom = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (a - fd).abs() / denom < tol,
                    "node {} [{r},{c}]: ad {a} fd {fd}",
                    v.0
                );
            }
            tape.set(v, base).unwrap();
        }
        tape.forward().unwrap();
    }

    #[test]
    fn identity_and_product() {
        let mut t = Tape::new();
        let x = t.input();
        let out = t.eval(vec![(x, array![[1.5, -2.0]])], &[x]).unwrap();
        assert_eq!(out[0], array![[1.5, -2.0]]);

        let mut t = Tape::new();
        let x = t.input();
        let y = t.input();
        let p = t.mul(x, y);
        t.set(x, scalar(3.0)).unwrap();
        t.set(y, scalar(4.0)).unwrap();
        t.forward().unwrap();
        assert_eq!(t.scalar(p).unwrap(), 12.0);
        let g = t.backward(p, None).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 4.0);
        assert_eq!(g.get(y).unwrap()[[0, 0]], 3.0);
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 5e-3 + 1e-4;
            let (a, b) = (fast_tanh(x), x.tanh());
            assert!(
                (a - b).abs() <= 4.0 * f64::EPSILON * b.abs(),
                "{x}: {a} vs {b}"
            );
        }
        assert_eq!(fast_tanh(800.0), 1.0);
        assert_eq!(fast_tanh(-800.0), -1.0);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.input();
        let y = t.tanh(x);
        t.set(x, scalar(0.0)).unwrap();
        t.forward().unwrap();
        assert_eq!(t.backward(y, None).unwrap().get(x).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut t = Tape::new();
        let x = t.input();
        let y = t.square(x);
        assert!(matches!(t.backward(y, None), Err(Error::NotEvaluated)));
        t.set(x, scalar(2.0)).unwrap();
        assert!(matches!(t.backward(y, None), Err(Error::NotEvaluated)));
        t.forward().unwrap();
        assert!(t.backward(y, None).is_ok());
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.input_cols(3);
        assert!(t.set(a, Array2::zeros((2, 2))).is_err());
        let b = t.input();
        let c = t.matmul(a, b);
        t.set(a, Array2::zeros((2, 3))).unwrap();
        t.set(b, Array2::zeros((2, 2))).unwrap();
        assert!(matches!(t.forward(), Err(Error::Shape(_))));
        let _ = c;
    }

    #[test]
    fn zero_weight_mlp_outputs_bias() {
        let mut t = Tape::new();
        let x = t.input();
        let w1 = t.input();
        let b1 = t.input();
        let w2 = t.input();
        let b2 = t.input();
        let z1 = t.matmul(x, w1);
        let z1 = t.broadcast_add(z1, b1);
        let h1 = t.tanh(z1);
        let z2 = t.matmul(h1, w2);
        let y = t.broadcast_add(z2, b2);
        let out = t
            .eval(
                vec![
                    (x, array![[0.3, -0.7], [5.0, 2.0]]),
                    (w1, Array2::zeros((2, 4))),
                    (b1, Array2::zeros((1, 4))),
                    (w2, Array2::zeros((4, 3))),
                    (b2, array![[1.0, -2.0, 0.5]]),
                ],
                &[y],
            )
            .unwrap();
        assert_eq!(out[0], array![[1.0, -2.0, 0.5], [1.0, -2.0, 0.5]]);
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let a = t.input();
        let b = t.input();
        let c = t.input();
        let row = t.input();
        let col = t.input();
        let s = t.add(a, b);
        let d = t.sub(s, c);
        let m = t.mul(d, a);
        let sq = t.square(m);
        let sc = t.scale(sq, 0.7);
        let sh = t.add_scalar(sc, -0.2);
        let th = t.tanh(sh);
        let r = t.relu(d);
        let st = t.step(a);
        let gated = t.mul(r, st);
        let e = t.add(th, gated);
        let e = t.broadcast_add(e, row);
        let e = t.broadcast_add(e, col);
        let et = t.transpose(e);
        let prod = t.matmul(et, a);
        let total = t.mean(prod);
        let s2 = t.sum(e);
        let out = t.add(total, s2);
        for (v, (r_, c_)) in [
            (a, (4, 3)),
            (b, (4, 3)),
            (c, (4, 3)),
            (row, (1, 3)),
            (col, (4, 1)),
        ] {
            t.set(v, random(&mut rng, r_, c_)).unwrap();
        }
        fd_check(&mut t, out, &[a, b, c, row, col], 1e-5);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (stride, padding) in [
            (1, Padding::Valid),
            (2, Padding::Valid),
            (3, Padding::Same),
            (1, Padding::Same),
        ] {
            let geom = ConvGeom::new(2, 7, 6, 3, stride, padding).unwrap();
            let mut t = Tape::new();
            let x = t.input_cols(geom.in_len());
            let w = t.input();
            let b = t.input();
            let y = t.conv2d(x, w, b, geom);
            let y2 = t.square(y);
            let out = t.sum(y2);
            t.set(x, random(&mut rng, 3, geom.in_len())).unwrap();
            t.set(w, random(&mut rng, 4, geom.patch_len())).unwrap();
            t.set(b, random(&mut rng, 1, 4)).unwrap();
            fd_check(&mut t, out, &[x, w, b], 1e-5);
        }
    }

    #[test]
    fn conv_matches_direct_cross_correlation() {
        let geom = ConvGeom::new(1, 5, 5, 3, 1, Padding::Valid).unwrap();
        assert_eq!((geom.out_h, geom.out_w), (3, 3));
        let img = Array2::from_shape_fn((1, 25), |(_, i)| i as f64);
        let ker = Array2::from_shape_fn((1, 9), |(_, i)| if i == 4 { 1.0 } else { 0.0 });
        let mut t = Tape::new();
        let x = t.input();
        let w = t.input();
        let b = t.input();
        let y = t.conv2d(x, w, b, geom);
        let out = t
            .eval(vec![(x, img), (w, ker), (b, scalar(0.5))], &[y])
            .unwrap();
        // centre tap picks the interior pixels
        let expect: Vec<f64> = [6, 7, 8, 11, 12, 13, 16, 17, 18]
            .iter()
            .map(|&v| v as f64 + 0.5)
            .collect();
        assert_eq!(out[0].row(0).to_vec(), expect);
        let same = ConvGeom::new(1, 28, 28, 3, 3, Padding::Valid).unwrap();
        assert_eq!((same.out_h, same.out_w), (9, 9));
    }

    #[test]
    fn backward_is_linear_in_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let x = t.input();
        let w = t.input();
        let z = t.matmul(x, w);
        let y = t.tanh(z);
        t.set(x, random(&mut rng, 5, 3)).unwrap();
        t.set(w, random(&mut rng, 3, 2)).unwrap();
        t.forward().unwrap();
        let s1 = random(&mut rng, 5, 2);
        let s2 = random(&mut rng, 5, 2);
        let (a, b) = (0.3, -1.7);
        let g1 = t.backward(y, Some(s1.clone())).unwrap();
        let g2 = t.backward(y, Some(s2.clone())).unwrap();
        let g = t.backward(y, Some(&s1 * a + &s2 * b)).unwrap();
        for v in [x, w] {
            let lhs = g.get(v).unwrap();
            let rhs = g1.get(v).unwrap() * a + g2.get(v).unwrap() * b;
            for (p, q) in lhs.iter().zip(rhs.iter()) {
                assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut t = Tape::new();
            let x = t.input();
            let w = t.input();
            let z = t.matmul(x, w);
            let y = t.tanh(z);
            let o = t.sum(y);
            t.set(x, random(&mut rng, 64, 30)).unwrap();
            t.set(w, random(&mut rng, 30, 20)).unwrap();
            t.forward().unwrap();
            let g = t.backward(o, None).unwrap();
            g.get(w).unwrap().clone()
        };
        let a = build();
        let b = build();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[scalar(0.0)], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p[0][[0, 0]], 1.0);
        assert_eq!(st.step, 1);

        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[scalar(1.0)], &mut st, &AdamConfig::default()).unwrap();
        assert!((1.0 - p[0][[0, 0]] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..100 {
            let g = vec![&p[0] * 2.0];
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        assert!(p[0][[0, 0]].abs() < 0.1, "{}", p[0][[0, 0]]);
    }

    #[test]
    fn adam_rejects_bad_input() {
        let mut p = vec![scalar(1.0)];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[scalar(1.0)], &mut st, &AdamConfig::with_lr(0.0)).is_err());
        assert!(adam_step(&mut p, &[], &mut st, &AdamConfig::default()).is_err());
    }
}
