use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{Quat, Vec3};

/// Rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Quat,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), rotation: Quat::identity() }
    }

    pub fn new(translation: Vec3, rotation: Quat) -> Self {
        Self { translation, rotation }
    }

    /// Builds a pose from a raw `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(translation: Vec3, wxyz: [f64; 4]) -> Self {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        Self { translation, rotation: UnitQuaternion::from_quaternion(q) }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { translation, rotation: Quat::identity() }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        Self { translation: Vec3::zeros(), rotation: quat_exp(&(axis.normalize() * angle)) }
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: applying the result equals applying `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose { translation: -(inv * self.translation), rotation: inv }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Applies a world-frame tangent increment `[dt; dω]`: the translation is
    /// shifted by `dt` and the rotation is pre-multiplied by `exp(dω)`, i.e.
    /// the body rotates about its own origin around a world-frame axis.
    pub fn retract(&self, tangent: &[f64; 6]) -> Pose {
        let dt = Vec3::new(tangent[0], tangent[1], tangent[2]);
        let dw = Vec3::new(tangent[3], tangent[4], tangent[5]);
        Pose { translation: self.translation + dt, rotation: quat_exp(&dw) * self.rotation }
    }
}

/// Exponential map from an axis-angle vector to a unit quaternion.
pub fn quat_exp(w: &Vec3) -> Quat {
    let theta = w.norm();
    let half = 0.5 * theta;
    let (s, c) = if theta < 1e-8 {
        // sin(θ/2)/θ ≈ 1/2 - θ²/48
        (0.5 - theta * theta / 48.0, 1.0 - theta * theta / 8.0)
    } else {
        (half.sin() / theta, half.cos())
    };
    UnitQuaternion::new_normalize(Quaternion::new(c, s * w.x, s * w.y, s * w.z))
}

/// Logarithm map: axis-angle vector with angle in `[0, π]`.
pub fn quat_log(q: &Quat) -> Vec3 {
    let mut q = *q.quaternion();
    if q.w < 0.0 {
        q = -q;
    }
    let v = Vec3::new(q.i, q.j, q.k);
    let s = v.norm();
    if s < 1e-12 {
        return 2.0 * v;
    }
    let theta = 2.0 * s.atan2(q.w);
    v * (theta / s)
}
