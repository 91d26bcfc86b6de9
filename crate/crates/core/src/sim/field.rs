use std::io::Read;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};
use crate::gp::{read_dataset_csv, train, GpPosterior, Hyperparams, TrainOptions};

/// Settings of the synthetic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundTruthConfig {
    pub constant_mean: f64,
    pub signal_variance: f64,
    pub length_scale: f64,
    /// Node spacing of the stored grid, in meters.
    pub resolution: f64,
    /// Fit the field to scattered readings instead of drawing it.
    pub csv_path: Option<String>,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self { constant_mean: 20.0, signal_variance: 100.0, length_scale: 12.0, resolution: 1.0, csv_path: None }
    }
}

/// Field values on a regular grid covering the domain, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthField {
    domain: Rect,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    // values[ix * ny + iy]
    values: Vec<f64>,
    seed: u64,
}

fn axis(lo: f64, hi: f64, resolution: f64) -> (usize, f64) {
    let cells = ((hi - lo) / resolution).round().max(1.0) as usize;
    (cells + 1, (hi - lo) / cells as f64)
}

// Symmetric square root factor `V sqrt(max(L, 0))` of a 1-D kernel matrix.
fn kernel_root(n: usize, step: f64, length_scale: f64) -> DMatrix<f64> {
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as f64 - j as f64) * step;
        (-0.5 * d * d / (length_scale * length_scale)).exp()
    });
    let eig = SymmetricEigen::new(k);
    let mut root = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        root.column_mut(j).scale_mut(s);
    }
    root
}

/// Draws a field from the GP prior on a grid over `domain`.
///
/// The squared-exponential kernel factorizes over the two axes, so the draw
/// is `mean + sigma_f Rx Z Ry^T` with `Rx Rx^T = Kx` and `Ry Ry^T = Ky`.
pub fn generate_ground_truth(seed: u64, cfg: &GroundTruthConfig, domain: &Rect) -> Result<GroundTruthField> {
    if !(cfg.resolution > 0.0) || !(cfg.signal_variance >= 0.0) || !(cfg.length_scale > 0.0) {
        return Err(Error::InvalidInput("ground-truth parameters out of range".into()));
    }
    let (nx, dx) = axis(domain.x_min, domain.x_max, cfg.resolution);
    let (ny, dy) = axis(domain.y_min, domain.y_max, cfg.resolution);
    if nx < 20 || ny < 20 {
        return Err(Error::InvalidInput(format!("ground-truth grid {nx}x{ny} is coarser than 20x20")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(nx, ny, |_, _| StandardNormal.sample(&mut rng));
    let rx = kernel_root(nx, dx, cfg.length_scale);
    let ry = kernel_root(ny, dy, cfg.length_scale);
    let draw = rx * z * ry.transpose();
    let sf = cfg.signal_variance.sqrt();
    let values = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .map(|(i, j)| cfg.constant_mean + sf * draw[(i, j)])
        .collect();
    Ok(GroundTruthField { domain: *domain, nx, ny, dx, dy, values, seed })
}

impl GroundTruthField {
    /// Fits a GP to `x,y,value` readings and stores its posterior mean on the grid.
    pub fn from_csv<R: Read>(reader: R, domain: &Rect, resolution: f64, init: &Hyperparams) -> Result<Self> {
        let data = read_dataset_csv(reader)?;
        if data.len() < 3 {
            return Err(Error::InsufficientData { needed: 3, got: data.len() });
        }
        data.check_domain(domain)?;
        let hyper = train(&data, init, &TrainOptions::default())?;
        let gp = GpPosterior::new(&data, &hyper)?;
        let (nx, dx) = axis(domain.x_min, domain.x_max, resolution);
        let (ny, dy) = axis(domain.y_min, domain.y_max, resolution);
        let nodes: Vec<Point> = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| Point::new(domain.x_min + i as f64 * dx, domain.y_min + j as f64 * dy)))
            .collect();
        let (values, _) = gp.predict_marginals(&nodes);
        Ok(Self { domain: *domain, nx, ny, dx, dy, values, seed: 0 })
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn node(&self, ix: usize, iy: usize) -> (Point, f64) {
        let p = Point::new(self.domain.x_min + ix as f64 * self.dx, self.domain.y_min + iy as f64 * self.dy);
        (p, self.values[ix * self.ny + iy])
    }

    /// Bilinear interpolation; exact at grid nodes.
    pub fn value_at(&self, s: &Point) -> Result<f64> {
        if !self.domain.contains(s, 1e-9) {
            return Err(Error::OutOfDomain { x: s.x, y: s.y });
        }
        let fx = ((s.x - self.domain.x_min) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((s.y - self.domain.y_min) / self.dy).clamp(0.0, (self.ny - 1) as f64);
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let v = |i: usize, j: usize| self.values[i * self.ny + j];
        Ok((1.0 - tx) * (1.0 - ty) * v(ix, iy)
            + tx * (1.0 - ty) * v(ix + 1, iy)
            + (1.0 - tx) * ty * v(ix, iy + 1)
            + tx * ty * v(ix + 1, iy + 1))
    }
}

/// Noisy reading `field(s) + e`, `e ~ N(0, noise_sd^2)`.
pub fn measure<R: Rng + ?Sized>(field: &GroundTruthField, s: &Point, noise_sd: f64, rng: &mut R) -> Result<f64> {
    let value = field.value_at(s)?;
    if noise_sd == 0.0 {
        return Ok(value);
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(value + noise.sample(rng))
}
