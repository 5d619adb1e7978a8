//! Axis-angle rotations, the Rodrigues map and geodesic distance.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-angle rotation vector (unit axis scaled by the angle in radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotVec(pub [f64; 3]);

/// 3×3 rotation matrix mapping object coordinates into camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotVec {
    pub const IDENTITY: RotVec = RotVec([0.0; 3]);

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self([v.x, v.y, v.z])
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn angle(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Equivalent rotation vector with `‖r‖ ≤ π`. At exactly π the
    /// representative whose first nonzero component is positive is chosen.
    pub fn canonical(&self) -> RotVec {
        let v = self.to_vector();
        let theta = v.norm();
        if theta == 0.0 || !theta.is_finite() {
            return *self;
        }
        let axis = v / theta;
        let wrapped = theta.rem_euclid(2.0 * PI);
        let mut out = if wrapped > PI {
            -axis * (2.0 * PI - wrapped)
        } else {
            axis * wrapped
        };
        if (out.norm() - PI).abs() < 1e-12 {
            if let Some(first) = out.iter().find(|c| c.abs() > 1e-12) {
                if *first < 0.0 {
                    out = -out;
                }
            }
        }
        RotVec::from_vector(&out)
    }

    /// Parses `"rx,ry,rz"` (radians).
    pub fn parse(s: &str) -> Result<RotVec> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("pose '{s}' must be rx,ry,rz")));
        }
        let mut r = [0.0; 3];
        for (dst, p) in r.iter_mut().zip(&parts) {
            *dst = p
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad pose component '{p}'")))?;
        }
        let r = RotVec(r);
        if !r.is_finite() {
            return Err(Error::invalid("pose components must be finite"));
        }
        Ok(r)
    }
}

impl std::ops::Neg for RotVec {
    type Output = RotVec;

    fn neg(self) -> RotVec {
        RotVec([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    /// Log map back to a canonical rotation vector.
    pub fn to_rotvec(&self) -> RotVec {
        let [w, x, y, z] = matrix_to_quaternion(&self.0);
        quaternion_to_rotvec([w, x, y, z])
    }

    /// Rotation angle in radians, robust near 0 and π.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let cos = (m.trace() - 1.0) / 2.0;
        let sin = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
            .norm()
            / 2.0;
        sin.atan2(cos)
    }
}

/// Rodrigues map `R = I + sinθ K + (1 − cosθ) K²`.
pub fn rotvec_to_matrix(r: &RotVec) -> Result<RotationMatrix> {
    if !r.is_finite() {
        return Err(Error::invalid("rotation vector must be finite"));
    }
    Ok(rodrigues(&r.to_vector()))
}

pub(crate) fn rodrigues(v: &Vector3<f64>) -> RotationMatrix {
    let theta2 = v.norm_squared();
    let k = Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0);
    // sinθ/θ and (1 − cosθ)/θ² with series near zero.
    let (a, b) = if theta2 < 1e-8 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    RotationMatrix(Matrix3::identity() + k * a + k * k * b)
}

/// Geodesic distance between two rotations, in degrees, in `[0, 180]`.
pub fn angular_error(a: &RotVec, b: &RotVec) -> f64 {
    let ra = rodrigues(&a.to_vector());
    let rb = rodrigues(&b.to_vector());
    ra.transpose().mul(&rb).angle().to_degrees()
}

/// Shepperd's method; returns (w, x, y, z) with w ≥ 0.
fn matrix_to_quaternion(m: &Matrix3<f64>) -> [f64; 4] {
    let tr = m.trace();
    let q = if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
        let s = (1.0 + tr).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    [sign * q[0] / n, sign * q[1] / n, sign * q[2] / n, sign * q[3] / n]
}

pub(crate) fn quaternion_to_rotvec(q: [f64; 4]) -> RotVec {
    let [mut w, mut x, mut y, mut z] = q;
    if w < 0.0 {
        w = -w;
        x = -x;
        y = -y;
        z = -z;
    }
    let vn = (x * x + y * y + z * z).sqrt();
    if vn == 0.0 {
        return RotVec::IDENTITY;
    }
    let angle = 2.0 * vn.atan2(w);
    let s = angle / vn;
    RotVec([x * s, y * s, z * s]).canonical()
}

pub(crate) fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub(crate) fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Viewpoint parameters of a pose. The object's vertical axis is its y axis;
/// `R = Rz(roll) · Rx(elevation) · Ry(azimuth)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewAngles {
    /// Radians in `(-π, π]`.
    pub azimuth: f64,
    /// Radians in `[-π/2, π/2]`.
    pub elevation: f64,
    pub roll: f64,
}

impl ViewAngles {
    pub fn to_matrix(&self) -> RotationMatrix {
        RotationMatrix(rot_z(self.roll) * rot_x(self.elevation) * rot_y(self.azimuth))
    }

    pub fn to_rotvec(&self) -> RotVec {
        self.to_matrix().to_rotvec()
    }

    pub fn from_matrix(r: &RotationMatrix) -> Self {
        let m = &r.0;
        let elevation = m[(2, 1)].clamp(-1.0, 1.0).asin();
        let mut azimuth = (-m[(2, 0)]).atan2(m[(2, 2)]);
        let roll = (-m[(0, 1)]).atan2(m[(1, 1)]);
        if azimuth <= -PI {
            azimuth += 2.0 * PI;
        }
        Self {
            azimuth,
            elevation,
            roll,
        }
    }

    pub fn from_rotvec(r: &RotVec) -> Self {
        Self::from_matrix(&rodrigues(&r.to_vector()))
    }
}

/// The half-turn about the object's vertical axis.
pub fn vertical_flip() -> RotationMatrix {
    RotationMatrix(Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0))
}

/// `R · F`: the pose of an object first flipped about its own vertical axis.
pub fn compose_vertical_flip(r: &RotVec) -> Result<RotVec> {
    Ok(rotvec_to_matrix(r)?.mul(&vertical_flip()).to_rotvec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent quaternion implementation used as the oracle.
    fn quat_from_rotvec(r: &RotVec) -> [f64; 4] {
        let th = r.angle();
        if th == 0.0 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        let s = (th / 2.0).sin() / th;
        [(th / 2.0).cos(), r.0[0] * s, r.0[1] * s, r.0[2] * s]
    }

    fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    }

    fn quat_rotate(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
        let qc = [q[0], -q[1], -q[2], -q[3]];
        let p = quat_mul(quat_mul(q, [0.0, v[0], v[1], v[2]]), qc);
        [p[1], p[2], p[3]]
    }

    fn random_rotvec(rng: &mut ChaCha8Rng) -> RotVec {
        RotVec([
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
        ])
    }

    #[test]
    fn identity_and_half_turn() {
        let i = rotvec_to_matrix(&RotVec::IDENTITY).unwrap();
        assert_eq!(i.0, Matrix3::identity());
        let h = rotvec_to_matrix(&RotVec::new(0.0, 0.0, PI)).unwrap();
        let want = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((h.0 - want).amax() < 1e-12);
        assert!(rotvec_to_matrix(&RotVec::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn rodrigues_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let r = random_rotvec(&mut rng);
            let m = rotvec_to_matrix(&r).unwrap().0;
            let q = quat_from_rotvec(&r);
            for j in 0..3 {
                let mut e = [0.0; 3];
                e[j] = 1.0;
                let col = quat_rotate(q, e);
                for i in 0..3 {
                    assert!((m[(i, j)] - col[i]).abs() < 1e-9);
                }
            }
        }
        // Small angles take the series branch.
        let r = RotVec::new(1e-5, -2e-5, 3e-6);
        let m = rotvec_to_matrix(&r).unwrap().0;
        let col = quat_rotate(quat_from_rotvec(&r), [0.0, 1.0, 0.0]);
        for i in 0..3 {
            assert!((m[(i, 1)] - col[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn angular_error_examples() {
        let a = RotVec::new(0.3, -0.2, 1.0);
        assert_eq!(angular_error(&a, &a), 0.0);
        let e = angular_error(&RotVec::new(0.0, 0.0, PI / 2.0), &RotVec::new(0.0, 0.0, -PI / 2.0));
        assert!((e - 180.0).abs() < 1e-9);
    }

    #[test]
    fn angular_error_matches_quaternion_log() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let a = random_rotvec(&mut rng);
            let b = random_rotvec(&mut rng);
            let qa = quat_from_rotvec(&a);
            let qb = quat_from_rotvec(&b);
            let rel = quat_mul([qa[0], -qa[1], -qa[2], -qa[3]], qb);
            let vn = (rel[1] * rel[1] + rel[2] * rel[2] + rel[3] * rel[3]).sqrt();
            let want = (2.0 * vn.atan2(rel[0].abs())).to_degrees();
            assert!((angular_error(&a, &b) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn canonical_form() {
        let r = RotVec::new(0.0, 0.0, 1.5 * PI).canonical();
        assert!((r.0[2] + 0.5 * PI).abs() < 1e-12);
        let r = RotVec::new(0.0, -PI, 0.0).canonical();
        assert_eq!(r.0[1], PI);
        let r = RotVec::new(0.1, 7.0, -0.4);
        assert!(r.canonical().angle() <= PI);
        assert!(angular_error(&r, &r.canonical()) < 1e-6);
    }

    #[test]
    fn log_map_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let r = random_rotvec(&mut rng);
            let back = rotvec_to_matrix(&r).unwrap().to_rotvec();
            assert!(back.angle() <= PI + 1e-12);
            assert!(angular_error(&r, &back) < 1e-6);
        }
        // Near the half-turn boundary.
        let r = RotVec::new(0.0, PI - 1e-9, 0.0);
        assert!(angular_error(&r, &rotvec_to_matrix(&r).unwrap().to_rotvec()) < 1e-6);
    }

    #[test]
    fn view_angles_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let v = ViewAngles {
                azimuth: rng.random_range(-3.1..3.1),
                elevation: rng.random_range(-1.5..1.5),
                roll: rng.random_range(-1.0..1.0),
            };
            let back = ViewAngles::from_rotvec(&v.to_rotvec());
            assert!((back.azimuth - v.azimuth).abs() < 1e-9);
            assert!((back.elevation - v.elevation).abs() < 1e-9);
            assert!((back.roll - v.roll).abs() < 1e-9);
        }
    }

    #[test]
    fn vertical_flip_shifts_azimuth_by_half_turn() {
        let v = ViewAngles { azimuth: 0.4, elevation: 0.3, roll: -0.1 };
        let flipped = ViewAngles::from_rotvec(&compose_vertical_flip(&v.to_rotvec()).unwrap());
        assert!((flipped.azimuth - (0.4 - PI)).abs() < 1e-9);
        assert!((flipped.elevation - 0.3).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn inverse_is_negation(x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0) {
            let r = RotVec::new(x, y, z);
            let p = rotvec_to_matrix(&r).unwrap().mul(&rotvec_to_matrix(&-r).unwrap());
            prop_assert!((p.0 - Matrix3::identity()).amax() < 1e-9);
            let m = rotvec_to_matrix(&r).unwrap().0;
            prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn angular_error_is_a_metric(
            a in prop::array::uniform3(-4.0f64..4.0),
            b in prop::array::uniform3(-4.0f64..4.0),
            c in prop::array::uniform3(-4.0f64..4.0),
        ) {
            let (a, b, c) = (RotVec(a), RotVec(b), RotVec(c));
            let ab = angular_error(&a, &b);
            prop_assert!((ab - angular_error(&b, &a)).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(ab <= angular_error(&a, &c) + angular_error(&c, &b) + 1e-6);
        }
    }
}
