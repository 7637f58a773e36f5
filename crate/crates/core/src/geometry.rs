//! Rotation helpers shared by the body model, cameras and the motion prior.
//!
//! Axis-angle vectors are the exponential coordinates of SO(3). The ground
//! plane is XY with +Z up; planar transforms act as yaw about +Z followed by a
//! horizontal translation and never touch the vertical coordinate.

use libm::{atan2, cos, sin, sqrt};
use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const PI: f64 = core::f64::consts::PI;

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
pub fn norm3(v: &Vec3) -> f64 {
    sqrt(v.x * v.x + v.y * v.y + v.z * v.z)
}

/// Rodrigues coefficients `a = sin θ/θ`, `b = (1 − cos θ)/θ²` and their
/// radial derivatives divided by θ: `da/dθ / θ`, `db/dθ / θ`.
fn rodrigues_coeffs(theta2: f64) -> (f64, f64, f64, f64) {
    if theta2 < 1e-8 {
        let t2 = theta2;
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let c1 = -1.0 / 3.0 + t2 / 30.0;
        let c2 = -1.0 / 12.0 + t2 / 180.0;
        (a, b, c1, c2)
    } else {
        let t = sqrt(theta2);
        let (s, c) = (sin(t), cos(t));
        let a = s / t;
        let b = (1.0 - c) / theta2;
        let c1 = (t * c - s) / (theta2 * t);
        let c2 = (t * s - 2.0 * (1.0 - c)) / (theta2 * theta2);
        (a, b, c1, c2)
    }
}

/// Exponential map from axis-angle to a rotation matrix.
pub fn exp_so3(v: &Vec3) -> Mat3 {
    let (a, b, _, _) = rodrigues_coeffs(v.norm_squared());
    let k = skew(v);
    Mat3::identity() + k * a + k * k * b
}

/// Exponential map together with the partial derivatives `∂R/∂v_k`.
pub fn exp_so3_with_partials(v: &Vec3) -> (Mat3, [Mat3; 3]) {
    let (a, b, c1, c2) = rodrigues_coeffs(v.norm_squared());
    let k = skew(v);
    let k2 = k * k;
    let r = Mat3::identity() + k * a + k2 * b;
    let mut partials = [Mat3::zeros(); 3];
    for (i, d) in partials.iter_mut().enumerate() {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        let ek = skew(&e);
        *d = ek * a + (ek * k + k * ek) * b + k * (c1 * v[i]) + k2 * (c2 * v[i]);
    }
    (r, partials)
}

/// Logarithm map, returning the axis-angle vector with norm in `[0, π]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * norm3(&w);
    let c = 0.5 * (r.trace() - 1.0);
    let theta = atan2(s, c);
    if theta < 1e-7 {
        return w * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if PI - theta > 1e-4 {
        return w * (theta / (2.0 * sin(theta)));
    }
    // Near π the antisymmetric part vanishes; recover the axis from R + I.
    let b = (r + Mat3::identity()) * 0.5;
    let mut k = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(k, k)] {
            k = i;
        }
    }
    let mut axis = Vec3::new(b[(0, k)], b[(1, k)], b[(2, k)]) / sqrt(b[(k, k)].max(1e-300));
    axis /= norm3(&axis);
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Re-express an axis-angle vector with its angle in `(−π, π]`.
pub fn wrap_axis_angle(v: &Vec3) -> Vec3 {
    if norm3(v) <= PI {
        *v
    } else {
        log_so3(&exp_so3(v))
    }
}

/// Geodesic distance between two rotations, `arccos((tr(AᵀB) − 1)/2)`, computed
/// via `atan2` for accuracy near 0 and π.
pub fn geodesic_angle(a: &Mat3, b: &Mat3) -> f64 {
    let d = a.transpose() * b;
    let w = Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]);
    atan2(0.5 * norm3(&w), 0.5 * (d.trace() - 1.0))
}

#[inline]
pub fn rot_z(yaw: f64) -> Mat3 {
    let (s, c) = (sin(yaw), cos(yaw));
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[inline]
pub fn rot_z_derivative(yaw: f64) -> Mat3 {
    let (s, c) = (sin(yaw), cos(yaw));
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

#[inline]
pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = (sin(angle), cos(angle));
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

#[inline]
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = (sin(angle), cos(angle));
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Minimum horizontal length of the forward axis for a defined heading.
pub const HEADING_EPS: f64 = 1e-6;

/// Heading (yaw about +Z) of a body frame whose forward axis is its local +Y.
///
/// Yaw 0 means facing world +Y; the forward direction is `(−sin ψ, cos ψ)`.
pub fn heading_of(rot: &Mat3) -> Option<f64> {
    let (fx, fy) = (rot[(0, 1)], rot[(1, 1)]);
    if sqrt(fx * fx + fy * fy) < HEADING_EPS {
        None
    } else {
        Some(atan2(-fx, fy))
    }
}

/// Ground-plane pose of a body frame: root ground projection plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Anchor {
    pub fn from_root(pos: &Vec3, rot: &Mat3) -> Option<Self> {
        heading_of(rot).map(|yaw| Anchor { x: pos.x, y: pos.y, yaw })
    }

    /// The planar transform taking the canonical frame to this anchor.
    pub fn to_transform(self) -> PlanarTransform {
        PlanarTransform { yaw: self.yaw, tx: self.x, ty: self.y }
    }

    pub fn distance(&self, other: &Anchor) -> f64 {
        let dyaw = wrap_angle(self.yaw - other.yaw);
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        sqrt(dx * dx + dy * dy + dyaw * dyaw)
    }
}

/// Wrap a scalar angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = libm::remainder(a, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Rigid motion of the ground plane: `p ↦ Rz(yaw)·p + (tx, ty, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanarTransform {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
}

impl PlanarTransform {
    pub const IDENTITY: PlanarTransform = PlanarTransform { yaw: 0.0, tx: 0.0, ty: 0.0 };

    pub fn rotation(&self) -> Mat3 {
        rot_z(self.yaw)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + Vec3::new(self.tx, self.ty, 0.0)
    }

    pub fn apply_rotation(&self, r: &Mat3) -> Mat3 {
        self.rotation() * r
    }

    pub fn inverse(&self) -> PlanarTransform {
        let r = rot_z(-self.yaw);
        let t = r * Vec3::new(self.tx, self.ty, 0.0);
        PlanarTransform { yaw: -self.yaw, tx: -t.x, ty: -t.y }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PlanarTransform) -> PlanarTransform {
        let t = self.apply_point(&Vec3::new(other.tx, other.ty, 0.0));
        PlanarTransform { yaw: self.yaw + other.yaw, tx: t.x, ty: t.y }
    }

    /// The transform mapping anchor `from` onto anchor `to`.
    pub fn between(from: &Anchor, to: &Anchor) -> PlanarTransform {
        to.to_transform().compose(&from.to_transform().inverse())
    }

    pub fn apply_anchor(&self, a: &Anchor) -> Anchor {
        let p = self.apply_point(&Vec3::new(a.x, a.y, 0.0));
        Anchor { x: p.x, y: p.y, yaw: wrap_angle(a.yaw + self.yaw) }
    }
}
