//! Benchmark metrics: mean geodesic error with a normal-approximation 95%
//! interval, gross-error rate and azimuth/elevation bin accuracy.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{angular_error, RotVec, ViewAngles};

/// Errors above this many degrees count as gross.
pub const GROSS_ERROR_DEG: f64 = 15.0;
pub const AZIMUTH_BINS: [usize; 4] = [4, 8, 12, 24];
pub const ELEVATION_BINS: [usize; 3] = [4, 6, 12];

pub const CSV_HEADER: &str =
    "method,n_samples,mean_err_deg,ci95_deg,gross_rate,runtime_s,azb4,azb8,azb12,azb24,elb4,elb6,elb12";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub count: usize,
    pub mean_error_deg: f64,
    pub ci95_deg: f64,
    pub gross_rate: f64,
    pub azimuth_accuracy: [f64; 4],
    pub elevation_accuracy: [f64; 3],
}

/// Uniform bin of an azimuth in `(−π, π]`.
pub fn azimuth_bin(azimuth: f64, bins: usize) -> usize {
    let width = 2.0 * PI / bins as f64;
    (((azimuth + PI) / width).floor() as isize).rem_euclid(bins as isize) as usize
}

/// Uniform bin of an elevation in `[−π/2, π/2]`.
pub fn elevation_bin(elevation: f64, bins: usize) -> usize {
    let width = PI / bins as f64;
    (((elevation + PI / 2.0) / width).floor().max(0.0) as usize).min(bins - 1)
}

pub fn compute_metrics(predictions: &[RotVec], truth: &[RotVec]) -> Result<Metrics> {
    Error::check_len(truth.len(), predictions.len())?;
    if truth.is_empty() {
        return Err(Error::Empty("metric inputs"));
    }
    let n = truth.len() as f64;
    let errors: Vec<f64> = predictions.iter().zip(truth).map(|(p, t)| angular_error(t, p)).collect();
    let mean = errors.iter().sum::<f64>() / n;
    let ci95 = if errors.len() > 1 {
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    let gross = errors.iter().filter(|&&e| e > GROSS_ERROR_DEG).count() as f64 / n;

    let angles: Vec<(ViewAngles, ViewAngles)> = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| (ViewAngles::from_rotvec(p), ViewAngles::from_rotvec(t)))
        .collect();
    let mut azimuth_accuracy = [0.0; 4];
    for (acc, &b) in azimuth_accuracy.iter_mut().zip(&AZIMUTH_BINS) {
        let hits = angles
            .iter()
            .filter(|(p, t)| azimuth_bin(p.azimuth, b) == azimuth_bin(t.azimuth, b))
            .count();
        *acc = hits as f64 / n;
    }
    let mut elevation_accuracy = [0.0; 3];
    for (acc, &b) in elevation_accuracy.iter_mut().zip(&ELEVATION_BINS) {
        let hits = angles
            .iter()
            .filter(|(p, t)| elevation_bin(p.elevation, b) == elevation_bin(t.elevation, b))
            .count();
        *acc = hits as f64 / n;
    }
    Ok(Metrics {
        count: errors.len(),
        mean_error_deg: mean,
        ci95_deg: ci95,
        gross_rate: gross,
        azimuth_accuracy,
        elevation_accuracy,
    })
}

/// One CSV row: a method at a sample budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub n_samples: usize,
    pub metrics: Metrics,
    /// Mean wall-clock seconds per view.
    pub runtime_s: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.n_samples, m.mean_error_deg, m.ci95_deg, m.gross_rate, r.runtime_s
        );
        for v in m.azimuth_accuracy.iter().chain(&m.elevation_accuracy) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Gnuplot script drawing mean error against sample count, one line with
/// error bars per method.
pub fn gnuplot_script(csv_name: &str, methods: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key top right");
    let _ = writeln!(s, "set logscale x");
    let _ = writeln!(s, "set xlabel 'samples'");
    let _ = writeln!(s, "set ylabel 'mean angular error (deg)'");
    let plots: Vec<String> = methods
        .iter()
        .map(|m| {
            format!(
                "'{csv_name}' using (strcol(1) eq '{m}' ? $2 : 1/0):3:4 with yerrorlines title '{m}'"
            )
        })
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
