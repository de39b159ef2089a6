//! Scalar fields on uniform 1D and 2D grids.
//!
//! Differential operators use ghost-node reflection (`u[-1] = u[1]`) at every
//! boundary, which enforces a zero normal derivative. Integrals use the
//! trapezoid rule on the grid nodes. The same boundary treatment is shared by
//! [`gradient_neumann`], [`laplacian_neumann`] and [`dirichlet_energy`] so that
//! the discrete Laplacian is exactly the variational derivative of the
//! discrete gradient energy (up to the trapezoid weights).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform node set on `[a, b]`, both endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Grid1DRepr")]
pub struct Grid1D {
    n: usize,
    a: f64,
    b: f64,
}

#[derive(Deserialize)]
struct Grid1DRepr {
    n: usize,
    a: f64,
    b: f64,
}

impl TryFrom<Grid1DRepr> for Grid1D {
    type Error = Error;
    fn try_from(r: Grid1DRepr) -> Result<Self> {
        Grid1D::new(r.n, r.a, r.b)
    }
}

impl Grid1D {
    pub fn new(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes, got {n}"
            )));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::InvalidGrid(format!(
                "endpoints must satisfy a < b, got [{a}, {b}]"
            )));
        }
        Ok(Self { n, a, b })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n - 1 {
            self.b
        } else {
            self.a + i as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.n];
        w[0] = 0.5 * dx;
        w[self.n - 1] = 0.5 * dx;
        w
    }

    pub fn measure(&self) -> f64 {
        self.b - self.a
    }
}

/// Tensor product of two [`Grid1D`] node sets. Node `(ix, iy)` is stored at
/// flat index `iy * nx + ix`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, (ax, bx): (f64, f64), (ay, by): (f64, f64)) -> Result<Self> {
        Ok(Self {
            x: Grid1D::new(nx, ax, bx)?,
            y: Grid1D::new(ny, ay, by)?,
        })
    }

    pub fn nx(&self) -> usize {
        self.x.n()
    }

    pub fn ny(&self) -> usize {
        self.y.n()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    pub fn weights(&self) -> Vec<f64> {
        let wx = self.x.weights();
        let wy = self.y.weights();
        let mut w = Vec::with_capacity(wx.len() * wy.len());
        for &b in &wy {
            for &a in &wx {
                w.push(a * b);
            }
        }
        w
    }

    pub fn measure(&self) -> f64 {
        self.x.measure() * self.y.measure()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Grid {
    #[serde(rename = "1d")]
    D1(Grid1D),
    #[serde(rename = "2d")]
    D2(Grid2D),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::D1(g) => g.n(),
            Grid::D2(g) => g.nx() * g.ny(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        match self {
            Grid::D1(_) => 1,
            Grid::D2(_) => 2,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            Grid::D1(g) => g.weights(),
            Grid::D2(g) => g.weights(),
        }
    }

    pub fn measure(&self) -> f64 {
        match self {
            Grid::D1(g) => g.measure(),
            Grid::D2(g) => g.measure(),
        }
    }

    /// Node coordinates, one `Vec` of length [`Grid::dim`] per node.
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            Grid::D1(g) => g.nodes().into_iter().map(|x| vec![x]).collect(),
            Grid::D2(g) => {
                let xs = g.x.nodes();
                let ys = g.y.nodes();
                let mut pts = Vec::with_capacity(xs.len() * ys.len());
                for &y in &ys {
                    for &x in &xs {
                        pts.push(vec![x, y]);
                    }
                }
                pts
            }
        }
    }

    pub fn as_1d(&self) -> Result<&Grid1D> {
        match self {
            Grid::D1(g) => Ok(g),
            Grid::D2(_) => Err(Error::GridMismatch("expected a 1D grid".into())),
        }
    }

    pub fn as_2d(&self) -> Result<&Grid2D> {
        match self {
            Grid::D2(g) => Ok(g),
            Grid::D1(_) => Err(Error::GridMismatch("expected a 2D grid".into())),
        }
    }
}

impl From<Grid1D> for Grid {
    fn from(g: Grid1D) -> Self {
        Grid::D1(g)
    }
}

impl From<Grid2D> for Grid {
    fn from(g: Grid2D) -> Self {
        Grid::D2(g)
    }
}

/// Node values of a scalar field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr")]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct FieldRepr {
    grid: Grid,
    values: Vec<f64>,
}

impl TryFrom<FieldRepr> for Field {
    type Error = Error;
    fn try_from(r: FieldRepr) -> Result<Self> {
        Field::new(r.grid, r.values)
    }
}

impl Field {
    pub fn new(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: impl Into<Grid>, c: f64) -> Self {
        let grid = grid.into();
        Self {
            values: vec![c; grid.len()],
            grid,
        }
    }

    /// Samples `f` at every node. `f` receives the node coordinates.
    pub fn from_fn(grid: impl Into<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let grid = grid.into();
        let values = grid.points().iter().map(|p| f(p)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid, new values. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            self.values.len(),
            "value count must match the grid"
        );
        Self {
            grid: self.grid,
            values,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with a header: `x,value` in 1D, `x,y,value` in 2D.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.grid {
            Grid::D1(_) => writeln!(w, "x,value")?,
            Grid::D2(_) => writeln!(w, "x,y,value")?,
        }
        for (p, v) in self.grid.points().iter().zip(&self.values) {
            match p.as_slice() {
                [x] => writeln!(w, "{x},{v}")?,
                [x, y] => writeln!(w, "{x},{y},{v}")?,
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn gradient_1d(v: &[f64], dx: f64, out: &mut [f64]) {
    let n = v.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * dx);
    }
}

fn laplacian_1d(v: &[f64], dx: f64, out: &mut [f64]) {
    let n = v.len();
    let h2 = dx * dx;
    out[0] = 2.0 * (v[1] - v[0]) / h2;
    out[n - 1] = 2.0 * (v[n - 2] - v[n - 1]) / h2;
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
    }
}

/// Gradient components: central differences inside, normal component zero on
/// the boundary.
pub fn gradient_neumann(f: &Field) -> Vec<Field> {
    match &f.grid {
        Grid::D1(g) => {
            let mut out = vec![0.0; g.n()];
            gradient_1d(&f.values, g.dx(), &mut out);
            vec![f.with_values(out)]
        }
        Grid::D2(g) => {
            let (nx, ny) = (g.nx(), g.ny());
            let mut gx = vec![0.0; nx * ny];
            let mut gy = vec![0.0; nx * ny];
            let mut line = vec![0.0; nx.max(ny)];
            let mut dline = vec![0.0; nx.max(ny)];
            for iy in 0..ny {
                let row = &f.values[iy * nx..(iy + 1) * nx];
                gradient_1d(row, g.x.dx(), &mut dline[..nx]);
                gx[iy * nx..(iy + 1) * nx].copy_from_slice(&dline[..nx]);
            }
            for ix in 0..nx {
                for iy in 0..ny {
                    line[iy] = f.values[g.index(ix, iy)];
                }
                gradient_1d(&line[..ny], g.y.dx(), &mut dline[..ny]);
                for iy in 0..ny {
                    gy[g.index(ix, iy)] = dline[iy];
                }
            }
            vec![f.with_values(gx), f.with_values(gy)]
        }
    }
}

/// Second-difference Laplacian with reflected ghost nodes.
pub fn laplacian_neumann(f: &Field) -> Field {
    match &f.grid {
        Grid::D1(g) => {
            let mut out = vec![0.0; g.n()];
            laplacian_1d(&f.values, g.dx(), &mut out);
            f.with_values(out)
        }
        Grid::D2(g) => {
            let (nx, ny) = (g.nx(), g.ny());
            let mut out = vec![0.0; nx * ny];
            let mut line = vec![0.0; nx.max(ny)];
            let mut dline = vec![0.0; nx.max(ny)];
            for iy in 0..ny {
                laplacian_1d(
                    &f.values[iy * nx..(iy + 1) * nx],
                    g.x.dx(),
                    &mut dline[..nx],
                );
                out[iy * nx..(iy + 1) * nx].copy_from_slice(&dline[..nx]);
            }
            for ix in 0..nx {
                for iy in 0..ny {
                    line[iy] = f.values[g.index(ix, iy)];
                }
                laplacian_1d(&line[..ny], g.y.dx(), &mut dline[..ny]);
                for iy in 0..ny {
                    out[g.index(ix, iy)] += dline[iy];
                }
            }
            f.with_values(out)
        }
    }
}

/// Discrete `∫ ½|∇u|²` built from cell-edge differences.
///
/// Its gradient with respect to node `i` is `-w_i · laplacian_neumann(u)_i`
/// with `w` the trapezoid weights.
pub fn dirichlet_energy(f: &Field) -> f64 {
    fn edges_1d(v: &[f64], dx: f64) -> f64 {
        v.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum::<f64>() / (2.0 * dx)
    }
    match &f.grid {
        Grid::D1(g) => edges_1d(&f.values, g.dx()),
        Grid::D2(g) => {
            let (nx, ny) = (g.nx(), g.ny());
            let wx = g.x.weights();
            let wy = g.y.weights();
            let mut total = 0.0;
            for iy in 0..ny {
                total += wy[iy] * edges_1d(&f.values[iy * nx..(iy + 1) * nx], g.x.dx());
            }
            let mut line = vec![0.0; ny];
            for ix in 0..nx {
                for iy in 0..ny {
                    line[iy] = f.values[g.index(ix, iy)];
                }
                total += wx[ix] * edges_1d(&line, g.y.dx());
            }
            total
        }
    }
}

/// Trapezoid rule (tensor-product in 2D).
pub fn integrate(f: &Field) -> f64 {
    // Sum with unit interior weights first and scale once at the end, so that
    // integer-valued sums (e.g. constants) stay exact.
    fn half_ends(v: &[f64]) -> f64 {
        let n = v.len();
        v[1..n - 1].iter().sum::<f64>() + 0.5 * (v[0] + v[n - 1])
    }
    match &f.grid {
        Grid::D1(g) => g.measure() * half_ends(&f.values) / (g.n() - 1) as f64,
        Grid::D2(g) => {
            let nx = g.nx();
            let rows: Vec<f64> = f.values.chunks(nx).map(half_ends).collect();
            g.measure() * half_ends(&rows) / ((nx - 1) * (g.ny() - 1)) as f64
        }
    }
}

pub(crate) fn weighted_sum(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn mean(f: &Field) -> f64 {
    integrate(f) / f.grid.measure()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn line(n: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> Field {
        Field::from_fn(Grid1D::new(n, a, b).unwrap(), |p| f(p[0])).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(2, 0.0, 1.0).is_err());
        assert!(Grid1D::new(3, 1.0, 1.0).is_err());
        let g = Grid1D::new(101, -1.0, 1.0).unwrap();
        assert_eq!(g.node(0), -1.0);
        assert_eq!(g.node(100), 1.0);
        assert!((g.dx() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn field_rejects_bad_values() {
        let g = Grid1D::new(3, 0.0, 1.0).unwrap();
        assert!(Field::new(g, vec![0.0; 4]).is_err());
        assert!(Field::new(g, vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn constants_have_exactly_zero_derivatives() {
        let g1 = Grid1D::new(17, -1.0, 1.0).unwrap();
        let g2 = Grid2D::new(9, 7, (-1.0, 1.0), (0.0, 3.0)).unwrap();
        for f in [Field::constant(g1, 0.37), Field::constant(g2, -1.3)] {
            for c in gradient_neumann(&f) {
                assert!(c.values().iter().all(|&v| v == 0.0));
            }
            assert!(laplacian_neumann(&f).values().iter().all(|&v| v == 0.0));
            assert_eq!(dirichlet_energy(&f), 0.0);
        }
    }

    #[test]
    fn gradient_of_linear_is_exact() {
        let f = line(101, -1.0, 1.0, |x| x);
        let g = &gradient_neumann(&f)[0];
        for i in 1..100 {
            assert!(
                (g.values()[i] - 1.0).abs() < 1e-12,
                "node {i}: {}",
                g.values()[i]
            );
        }
        assert_eq!(g.values()[0], 0.0);
        assert_eq!(g.values()[100], 0.0);
    }

    #[test]
    fn gradient_of_sine_is_second_order() {
        let f = line(201, -1.0, 1.0, |x| (PI * x).sin());
        let g = &gradient_neumann(&f)[0];
        let grid = Grid1D::new(201, -1.0, 1.0).unwrap();
        let err = (1..200)
            .map(|i| (g.values()[i] - PI * (PI * grid.node(i)).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn gradient_2d_components() {
        let g = Grid2D::new(21, 11, (-1.0, 1.0), (0.0, 1.0)).unwrap();
        let f = Field::from_fn(g, |p| 2.0 * p[0] - 3.0 * p[1]).unwrap();
        let gr = gradient_neumann(&f);
        for iy in 0..11 {
            for ix in 0..21 {
                let i = g.index(ix, iy);
                let ex = if ix == 0 || ix == 20 { 0.0 } else { 2.0 };
                let ey = if iy == 0 || iy == 10 { 0.0 } else { -3.0 };
                assert!((gr[0].values()[i] - ex).abs() < 1e-12);
                assert!((gr[1].values()[i] - ey).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_of_quadratic_is_exact_inside() {
        let f = line(101, -1.0, 1.0, |x| x * x);
        let l = laplacian_neumann(&f);
        for i in 1..100 {
            assert!((l.values()[i] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_of_cosine() {
        let grid = Grid1D::new(201, -1.0, 1.0).unwrap();
        let f = line(201, -1.0, 1.0, |x| (PI * x).cos());
        let l = laplacian_neumann(&f);
        let err = (1..200)
            .map(|i| (l.values()[i] + PI * PI * (PI * grid.node(i)).cos()).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn laplacian_2d_separable() {
        let g = Grid2D::new(41, 41, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let f = Field::from_fn(g, |p| (PI * p[0]).cos() * (PI * p[1]).cos()).unwrap();
        let l = laplacian_neumann(&f);
        let err = l
            .values()
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a + 2.0 * PI * PI * b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn integrals() {
        assert_eq!(integrate(&line(11, -1.0, 1.0, |_| 1.0)), 2.0);
        assert!((integrate(&line(101, 0.0, 1.0, |x| x)) - 0.5).abs() < 1e-15);
        let s = integrate(&line(201, -1.0, 1.0, |x| (PI * x).sin().powi(2)));
        assert!((s - 1.0).abs() < 1e-4);
        let g2 = Grid2D::new(5, 9, (-1.0, 1.0), (-1.0, 1.0)).unwrap();
        assert!((integrate(&Field::constant(g2, 1.0)) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn means() {
        assert!((mean(&line(11, -1.0, 1.0, |_| 3.5)) - 3.5).abs() < 1e-15);
        assert!(mean(&line(101, -1.0, 1.0, |x| x)).abs() < 1e-12);
        assert!(mean(&line(201, 0.0, 1.0, |x| (4.0 * PI * x).cos())).abs() < 1e-6);
    }

    #[test]
    fn integration_by_parts() {
        // Both fields satisfy a zero-flux boundary condition on [0, 1].
        let f = line(201, 0.0, 1.0, |x| {
            (PI * x).cos() + 0.3 * (2.0 * PI * x).cos()
        });
        let g = line(201, 0.0, 1.0, |x| x * x * (1.0 - 2.0 * x / 3.0));
        let lhs = integrate(&g.zip_with(&laplacian_neumann(&f), |a, b| a * b).unwrap());
        let gf = &gradient_neumann(&f)[0];
        let gg = &gradient_neumann(&g)[0];
        let rhs = -integrate(&gf.zip_with(gg, |a, b| a * b).unwrap());
        assert!((lhs - rhs).abs() < 1e-2, "{lhs} vs {rhs}");
    }

    #[test]
    fn dirichlet_energy_of_sine() {
        // ½∫ (π cos πx)² over [-1, 1] = π²/2
        let f = line(401, -1.0, 1.0, |x| (PI * x).sin());
        assert!((dirichlet_energy(&f) - PI * PI / 2.0).abs() < 1e-3);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let f = line(33, -1.0, 1.0, |x| (7.3 * x).sin() / 3.0 + 1e-17 * x);
        let back = Field::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(f.grid(), back.grid());
        for (a, b) in f.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let g2 = Grid2D::new(4, 3, (-1.0, 1.0), (0.0, 0.5)).unwrap();
        let f2 = Field::from_fn(g2, |p| p[0] * 0.1 + p[1] / 3.0).unwrap();
        assert_eq!(Field::from_json(&f2.to_json().unwrap()).unwrap(), f2);
    }

    #[test]
    fn json_schema_is_validated() {
        let bad = r#"{"grid":{"kind":"1d","n":3,"a":0.0,"b":1.0},"values":[1.0,2.0]}"#;
        assert!(Field::from_json(bad).is_err());
        let bad_grid = r#"{"grid":{"kind":"1d","n":2,"a":0.0,"b":1.0},"values":[1.0,2.0]}"#;
        assert!(Field::from_json(bad_grid).is_err());
    }

    #[test]
    fn csv_layout() {
        let g2 = Grid2D::new(3, 3, (0.0, 1.0), (0.0, 1.0)).unwrap();
        let f = Field::constant(g2, 2.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], "x,y,value");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[2], "0.5,0,2");
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        proptest! {
            #[test]
            fn integrate_is_linear(
                a in -5.0f64..5.0,
                b in -5.0f64..5.0,
                xs in proptest::collection::vec(-3.0f64..3.0, 25),
                ys in proptest::collection::vec(-3.0f64..3.0, 25),
            ) {
                let g = Grid1D::new(25, -1.0, 2.0).unwrap();
                let f = Field::new(g, xs).unwrap();
                let h = Field::new(g, ys).unwrap();
                let combo = f.zip_with(&h, |p, q| a * p + b * q).unwrap();
                let lhs = integrate(&combo);
                let rhs = a * integrate(&f) + b * integrate(&h);
                let scale = 1.0 + lhs.abs().max(rhs.abs());
                prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
            }

            #[test]
            fn laplacian_is_weighted_energy_gradient(xs in proptest::collection::vec(-2.0f64..2.0, 12)) {
                // d/du_i of dirichlet_energy equals -w_i * lap(u)_i; the energy
                // is quadratic so a central difference is exact up to rounding.
                let g = Grid1D::new(12, 0.0, 1.5).unwrap();
                let u = Field::new(g, xs).unwrap();
                let lap = laplacian_neumann(&u);
                let w = g.weights();
                for i in 0..12 {
                    let h = 1e-4;
                    let mut up = u.values().to_vec();
                    let mut dn = u.values().to_vec();
                    up[i] += h;
                    dn[i] -= h;
                    let fd = (dirichlet_energy(&u.with_values(up)) - dirichlet_energy(&u.with_values(dn))) / (2.0 * h);
                    prop_assert!((fd + w[i] * lap.values()[i]).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }
}
