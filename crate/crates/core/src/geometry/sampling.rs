use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rotation::{quaternion_to_rotvec, RotVec, ViewAngles};

/// Roll standard deviation for training views: 99% of the mass within ±25°.
pub const ROLL_SIGMA_DEG: f64 = 25.0 / 2.576;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseMode {
    /// Uniform azimuth and elevation, small Gaussian roll.
    TrainingView,
    /// Haar-uniform over the rotation group.
    Uniform,
}

pub fn sample_pose<R: Rng + ?Sized>(mode: PoseMode, rng: &mut R) -> RotVec {
    match mode {
        PoseMode::TrainingView => sample_view_angles(rng).to_rotvec(),
        PoseMode::Uniform => sample_uniform(rng),
    }
}

pub fn sample_view_angles<R: Rng + ?Sized>(rng: &mut R) -> ViewAngles {
    let roll = Normal::new(0.0, ROLL_SIGMA_DEG.to_radians()).expect("valid sigma");
    // (-π, π]
    let azimuth = PI - 2.0 * PI * rng.random::<f64>();
    let elevation = rng.random_range(-PI / 2.0..=PI / 2.0);
    ViewAngles {
        azimuth,
        elevation,
        roll: roll.sample(rng),
    }
}

/// Shoemake's uniform quaternion construction.
fn sample_uniform<R: Rng + ?Sized>(rng: &mut R) -> RotVec {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    quaternion_to_rotvec([b * c3, a * s2, a * c2, b * s3])
}
