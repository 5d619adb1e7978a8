//! Silhouette signed distance fields and the pose-consistency prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthImage;

/// Per-pixel signed Euclidean distance, row-major, negative inside the
/// silhouette.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SignedDistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Added to `e⁴` in the prior denominator.
    pub epsilon: f64,
    /// Divide the Frobenius norm by `√(width·height)`.
    pub normalize: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            normalize: true,
        }
    }
}

/// Exact signed distance field of the unmasked pixels. Pixels beyond the
/// image border count as background.
pub fn silhouette_sdf(image: &DepthImage) -> Result<SignedDistanceField> {
    silhouette_sdf_from_mask(image.width(), image.height(), &image.silhouette())
}

pub fn silhouette_sdf_from_mask(width: usize, height: usize, mask: &[bool]) -> Result<SignedDistanceField> {
    Error::check_len(width * height, mask.len())?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("mask must be non-empty"));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptySilhouette);
    }
    // One ring of padding is enough: the nearest outside pixel to any
    // interior pixel lies on it.
    let (pw, ph) = (width + 2, height + 2);
    let mut to_background = vec![f64::INFINITY; pw * ph];
    let mut to_silhouette = vec![f64::INFINITY; pw * ph];
    for r in 0..ph {
        for c in 0..pw {
            let inside = r >= 1 && r <= height && c >= 1 && c <= width && mask[(r - 1) * width + c - 1];
            if inside {
                to_silhouette[r * pw + c] = 0.0;
            } else {
                to_background[r * pw + c] = 0.0;
            }
        }
    }
    squared_edt(&mut to_background, pw, ph);
    squared_edt(&mut to_silhouette, pw, ph);

    let mut values = Vec::with_capacity(width * height);
    for r in 1..=height {
        for c in 1..=width {
            let i = r * pw + c;
            values.push(if mask[(r - 1) * width + c - 1] {
                -to_background[i].sqrt()
            } else {
                to_silhouette[i].sqrt()
            });
        }
    }
    Ok(SignedDistanceField { width, height, values })
}

/// In-place squared Euclidean distance transform (Felzenszwalb and
/// Huttenlocher): columns first, then rows.
fn squared_edt(grid: &mut [f64], width: usize, height: usize) {
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], row, &mut v, &mut z);
    }
}

/// Lower envelope of parabolas rooted at the finite samples of `f`.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= z[k as usize] {
                k -= 1;
            } else {
                k += 1;
                v[k as usize] = q;
                z[k as usize] = s;
                z[k as usize + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for q in 0..n {
        let qf = q as f64;
        while z[j + 1] < qf {
            j += 1;
        }
        let d = q as f64 - v[j] as f64;
        out[q] = d * d + f[v[j]];
    }
}

/// Silhouette discrepancy `e_R` with the default configuration.
pub fn depth_error(observed: &DepthImage, predicted: &DepthImage) -> Result<f64> {
    depth_error_with(observed, predicted, &PriorConfig::default())
}

pub fn depth_error_with(observed: &DepthImage, predicted: &DepthImage, cfg: &PriorConfig) -> Result<f64> {
    Error::check_len(observed.width(), predicted.width())?;
    Error::check_len(observed.height(), predicted.height())?;
    field_error(&silhouette_sdf(observed)?, &silhouette_sdf(predicted)?, cfg)
}

/// Frobenius distance between two precomputed fields.
pub fn field_error(a: &SignedDistanceField, b: &SignedDistanceField, cfg: &PriorConfig) -> Result<f64> {
    Error::check_len(a.width, b.width)?;
    Error::check_len(a.height, b.height)?;
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm = sum.sqrt();
    Ok(if cfg.normalize {
        norm / ((a.width * a.height) as f64).sqrt()
    } else {
        norm
    })
}

/// `1 / (e⁴ + ε)`.
pub fn prior_density(e: f64) -> Result<f64> {
    prior_density_with(e, PriorConfig::default().epsilon)
}

pub fn prior_density_with(e: f64, epsilon: f64) -> Result<f64> {
    if !(e >= 0.0) {
        return Err(Error::invalid(format!("error score must be non-negative, got {e}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("prior epsilon must be positive"));
    }
    Ok(1.0 / (e.powi(4) + epsilon))
}
