//! Mean-zero Gaussian random fields with an RBF covariance, and the
//! train/test datasets built from them.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{Field, Grid};
use crate::network::{hex, SensorLayout};

pub const MAX_JITTER: f64 = 1e-6;
const MIN_JITTER: f64 = 1e-10;

/// `exp(−|x1 − x2|² / 2l²)`.
pub fn rbf_kernel(l: f64, x1: &[f64], x2: &[f64]) -> f64 {
    let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * l * l)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfConfig {
    pub length_scale: f64,
    #[serde(default = "one")]
    pub variance: f64,
    #[serde(default = "min_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn min_jitter() -> f64 {
    MIN_JITTER
}

impl GrfConfig {
    pub fn new(length_scale: f64, seed: u64) -> Self {
        Self {
            length_scale,
            variance: 1.0,
            jitter: MIN_JITTER,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::InvalidParameter("variance must be positive".into()));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::InvalidParameter(
                "jitter must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Cholesky factor of the covariance on a fixed set of points.
#[derive(Clone, Debug)]
pub struct GrfSampler {
    factor: Array2<f64>,
    /// Diagonal regularization that made the factorization succeed.
    pub jitter: f64,
}

impl GrfSampler {
    pub fn new(cfg: &GrfConfig, layout: &SensorLayout) -> Result<Self> {
        cfg.validate()?;
        let pts = layout.grid.points();
        let n = pts.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            cfg.variance * rbf_kernel(cfg.length_scale, &pts[i], &pts[j])
        });
        let mut jitter = cfg.jitter;
        loop {
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter * cfg.variance;
            }
            if let Some(ch) = kj.cholesky() {
                let l = ch.l();
                let factor = Array2::from_shape_fn((n, n), |(i, j)| l[(i, j)]);
                return Ok(Self { factor, jitter });
            }
            jitter = (jitter * 10.0).max(MIN_JITTER);
            if jitter > MAX_JITTER * (1.0 + 1e-9) {
                return Err(Error::Factorization(MAX_JITTER));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// `count` samples as rows; each is `L z` with `z` standard normal.
    pub fn sample(&self, rng: &mut ChaCha8Rng, count: usize) -> Array2<f64> {
        let n = self.dim();
        let z = Array2::from_shape_simple_fn((count, n), || StandardNormal.sample(rng));
        z.dot(&self.factor.t())
    }
}

/// `count` GRF draws on the layout, as rows of a matrix.
pub fn grf_sample(cfg: &GrfConfig, layout: &SensorLayout, count: usize) -> Result<Array2<f64>> {
    let s = GrfSampler::new(cfg, layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(s.sample(&mut rng, count))
}

/// Same draws as [`grf_sample`], wrapped as fields.
pub fn grf_fields(cfg: &GrfConfig, grid: Grid, count: usize) -> Result<Vec<Field>> {
    let m = grf_sample(cfg, &SensorLayout::new(grid), count)?;
    rows_to_fields(grid, &m)
}

pub fn rows_to_fields(grid: Grid, m: &Array2<f64>) -> Result<Vec<Field>> {
    m.rows()
        .into_iter()
        .map(|r| Field::new(grid, r.to_vec()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub layout: SensorLayout,
    /// One sample per row, values at the sensors.
    pub samples: Array2<f64>,
    pub split: Split,
}

impl Dataset {
    pub fn new(layout: SensorLayout, samples: Array2<f64>, split: Split) -> Result<Self> {
        if samples.ncols() != layout.count() {
            return Err(Error::Shape(format!(
                "{} values per sample for {} sensors",
                samples.ncols(),
                layout.count()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite sample value".into()));
        }
        Ok(Self {
            layout,
            samples,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn field(&self, i: usize) -> Field {
        Field::new(self.layout.grid, self.samples.row(i).to_vec()).expect("validated samples")
    }
}

/// Draws `total` samples with `seed` and splits them; the first
/// `round(total·train_fraction)` draws form the training set.
pub fn make_dataset(
    cfg: &GrfConfig,
    layout: &SensorLayout,
    total: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let all = grf_sample(&GrfConfig { seed, ..*cfg }, layout, total)?;
    let n_train = ((total as f64) * train_fraction).round() as usize;
    let train = all.slice(ndarray::s![..n_train, ..]).to_owned();
    let test = all.slice(ndarray::s![n_train.., ..]).to_owned();
    Ok((
        Dataset::new(*layout, train, Split::Train)?,
        Dataset::new(*layout, test, Split::Test)?,
    ))
}

/// Mean of squared second differences over all samples and interior nodes
/// (both axes in 2D). Smaller means smoother.
pub fn mean_sq_second_difference(layout: &SensorLayout, samples: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut add = |a: f64, b: f64, c: f64| {
        let d = a - 2.0 * b + c;
        total += d * d;
        count += 1;
    };
    for row in samples.rows() {
        match &layout.grid {
            Grid::D1(g) => {
                for i in 1..g.n() - 1 {
                    add(row[i - 1], row[i], row[i + 1]);
                }
            }
            Grid::D2(g) => {
                let (nx, ny) = (g.nx(), g.ny());
                for iy in 0..ny {
                    for ix in 1..nx - 1 {
                        let k = iy * nx + ix;
                        add(row[k - 1], row[k], row[k + 1]);
                    }
                }
                for iy in 1..ny - 1 {
                    for ix in 0..nx {
                        let k = iy * nx + ix;
                        add(row[k - nx], row[k], row[k + nx]);
                    }
                }
            }
        }
    }
    total / count.max(1) as f64
}

/// Dataset manifest stored next to the raw sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub layout: SensorLayout,
    pub split: Split,
    pub count: usize,
    pub sensors: usize,
    pub grf: Option<GrfConfig>,
    /// Sample file name, relative to the manifest.
    pub data: String,
    pub sha256: String,
}

/// Writes `<stem>.json` and `<stem>.f64` (row-major little-endian samples).
pub fn save_dataset(
    dir: &Path,
    stem: &str,
    ds: &Dataset,
    grf: Option<GrfConfig>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(8 * ds.samples.len());
    for v in ds.samples.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let data = format!("{stem}.f64");
    std::fs::File::create(dir.join(&data))?.write_all(&bytes)?;
    let manifest = DatasetManifest {
        layout: ds.layout,
        split: ds.split,
        count: ds.len(),
        sensors: ds.layout.count(),
        grf,
        data,
        sha256: hex(&Sha256::digest(&bytes)),
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

pub fn load_dataset(manifest_path: &Path) -> Result<(Dataset, DatasetManifest)> {
    let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = std::fs::read(dir.join(&m.data))?;
    if hex(&Sha256::digest(&bytes)) != m.sha256 {
        return Err(Error::Corrupt(format!("{} checksum mismatch", m.data)));
    }
    if bytes.len() != 8 * m.count * m.sensors || m.sensors != m.layout.count() {
        return Err(Error::Corrupt(
            "sample file size does not match manifest".into(),
        ));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let samples = Array2::from_shape_vec((m.count, m.sensors), vals)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok((Dataset::new(m.layout, samples, m.split)?, m))
}
