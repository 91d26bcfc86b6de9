use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    /// Mean of the log posterior variances.
    pub alpv: f64,
    pub rmse: f64,
    /// Largest absolute error.
    pub mae: f64,
}

/// Grid metrics from posterior means and variances against the truth.
pub fn metrics(pred_mean: &[f64], pred_var: &[f64], truth: &[f64]) -> Result<FieldMetrics> {
    let n = truth.len();
    if pred_mean.len() != n || pred_var.len() != n || n == 0 {
        return Err(Error::InvalidInput("metric inputs must be nonempty and of equal length".into()));
    }
    let mut log_var = 0.0;
    let mut sq = 0.0;
    let mut mae = 0.0f64;
    for i in 0..n {
        log_var += pred_var[i].ln();
        let e = pred_mean[i] - truth[i];
        sq += e * e;
        mae = mae.max(e.abs());
    }
    Ok(FieldMetrics { alpv: log_var / n as f64, rmse: (sq / n as f64).sqrt(), mae })
}

/// Cell centers of a grid with spacing `resolution` over `domain`; a 40 x 30
/// domain at 1 m gives 1200 points.
pub fn eval_grid(domain: &Rect, resolution: f64) -> Vec<Point> {
    let nx = (domain.width() / resolution).round().max(1.0) as usize;
    let ny = (domain.height() / resolution).round().max(1.0) as usize;
    let (sx, sy) = (domain.width() / nx as f64, domain.height() / ny as f64);
    (0..nx)
        .flat_map(|i| {
            (0..ny).map(move |j| Point::new(domain.x_min + (i as f64 + 0.5) * sx, domain.y_min + (j as f64 + 0.5) * sy))
        })
        .collect()
}
