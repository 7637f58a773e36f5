//! Pinhole cameras with 6D rotations, projection and PnP resection.
//!
//! Camera poses are stored world-from-camera: a camera-frame point `x` maps to
//! the world as `R·x + p`. The camera looks down its local +Z with +X to the
//! right of the image and +Y down.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix2x3, Matrix3x4, Matrix6, SymmetricEigen, Vector6, SVD};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, norm3, skew, Mat3, Vec3};

/// Minimum camera-frame depth for a point to be considered visible.
pub const MIN_DEPTH: f64 = 1e-6;

const GS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid("intrinsics need fx, fy > 0 and finite principal point"));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

/// World-from-camera pose with the rotation in 6D form.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraPose {
    pub r: [f64; 6],
    pub p: [f64; 3],
}

impl CameraPose {
    pub fn from_matrix(rot: &Mat3, p: &Vec3) -> Self {
        CameraPose { r: matrix_to_rot6d(rot), p: [p.x, p.y, p.z] }
    }

    pub fn rotation(&self) -> Result<Mat3> {
        rot6d_to_matrix(&self.r)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.p[0], self.p[1], self.p[2])
    }

    /// Camera pose looking from `eye` at `target` with world +Z as up.
    pub fn look_at(eye: &Vec3, target: &Vec3) -> Result<Self> {
        let z = target - eye;
        if norm3(&z) < GS_EPS {
            return Err(Error::invalid("look-at target coincides with the eye"));
        }
        let z = z / norm3(&z);
        let x = z.cross(&Vec3::z());
        if norm3(&x) < GS_EPS {
            return Err(Error::invalid("look-at direction is vertical"));
        }
        let x = x / norm3(&x);
        let y = z.cross(&x);
        let rot = Mat3::from_columns(&[x, y, z]);
        Ok(CameraPose::from_matrix(&rot, eye))
    }

    /// Apply a rigid transform `X ↦ A·X + t` of the world frame to this pose.
    ///
    /// Rotates the raw 6D columns directly so the result is exact for
    /// non-normalised inputs.
    pub fn transformed(&self, rot: &Mat3, t: &Vec3) -> Self {
        let a1 = rot * Vec3::new(self.r[0], self.r[1], self.r[2]);
        let a2 = rot * Vec3::new(self.r[3], self.r[4], self.r[5]);
        let p = rot * self.position() + t;
        CameraPose { r: [a1.x, a1.y, a1.z, a2.x, a2.y, a2.z], p: [p.x, p.y, p.z] }
    }
}

/// Intrinsics plus a per-frame pose sequence for one camera.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraTrack {
    pub intrinsics: Intrinsics,
    pub frames: Vec<CameraPose>,
}

impl CameraTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> CameraTrack {
        CameraTrack { intrinsics: self.intrinsics, frames: self.frames[start..start + len].to_vec() }
    }
}

/// Gram–Schmidt map from a 6D vector (two stacked 3-vectors) to a rotation.
pub fn rot6d_to_matrix(r: &[f64; 6]) -> Result<Mat3> {
    let a1 = Vec3::new(r[0], r[1], r[2]);
    let a2 = Vec3::new(r[3], r[4], r[5]);
    let n1 = norm3(&a1);
    if !(n1 > GS_EPS) {
        return Err(Error::DegenerateRotation6D);
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let nu = norm3(&u);
    if !(nu > GS_EPS) {
        return Err(Error::DegenerateRotation6D);
    }
    let b2 = u / nu;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

/// First two columns of `rot`, flattened.
pub fn matrix_to_rot6d(rot: &Mat3) -> [f64; 6] {
    [rot[(0, 0)], rot[(1, 0)], rot[(2, 0)], rot[(0, 1)], rot[(1, 1)], rot[(2, 1)]]
}

/// Pull a gradient with respect to the Gram–Schmidt output back onto the raw
/// 6D input.
pub fn rot6d_vjp(r: &[f64; 6], grad_rot: &Mat3) -> [f64; 6] {
    let a1 = Vec3::new(r[0], r[1], r[2]);
    let a2 = Vec3::new(r[3], r[4], r[5]);
    let n1 = norm3(&a1);
    let b1 = a1 / n1;
    let dot = b1.dot(&a2);
    let u = a2 - b1 * dot;
    let nu = norm3(&u);
    let b2 = u / nu;
    let g1: Vec3 = grad_rot.column(0).into();
    let g2: Vec3 = grad_rot.column(1).into();
    let g3: Vec3 = grad_rot.column(2).into();

    let mut gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);
    let gu = (gb2 - b2 * b2.dot(&gb2)) / nu;
    let ga2 = gu - b1 * b1.dot(&gu);
    gb1 -= gu * dot + a2 * b1.dot(&gu);
    let ga1 = (gb1 - b1 * b1.dot(&gb1)) / n1;
    [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
}

/// Camera-frame coordinates of a world point.
#[inline]
pub fn to_camera(rot: &Mat3, pos: &Vec3, x: &Vec3) -> Vec3 {
    rot.tr_mul(&(x - pos))
}

/// Project a world point through a world-from-camera pose.
pub fn project(rot: &Mat3, pos: &Vec3, k: &Intrinsics, x: &Vec3) -> Result<Pixel> {
    project_camera_point(k, &to_camera(rot, pos, x))
}

pub fn project_camera_point(k: &Intrinsics, xc: &Vec3) -> Result<Pixel> {
    if !(xc.z > MIN_DEPTH) {
        return Err(Error::BehindCamera { depth: xc.z });
    }
    Ok(Pixel { u: k.fx * xc.x / xc.z + k.cx, v: k.fy * xc.y / xc.z + k.cy })
}

/// Jacobian of the pixel with respect to the camera-frame point.
#[inline]
pub fn projection_jacobian(k: &Intrinsics, xc: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / xc.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * xc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * xc.y * iz * iz,
    )
}

/// Reverse-mode sensitivity of [`project`]: given `∂L/∂(u, v)` returns
/// `(∂L/∂R, ∂L/∂p, ∂L/∂X)`.
pub fn project_vjp(rot: &Mat3, pos: &Vec3, k: &Intrinsics, x: &Vec3, g_uv: [f64; 2]) -> (Mat3, Vec3, Vec3) {
    let d = x - pos;
    let xc = rot.tr_mul(&d);
    let j = projection_jacobian(k, &xc);
    let g_xc = j.transpose() * nalgebra::Vector2::new(g_uv[0], g_uv[1]);
    let g_x = rot * g_xc;
    (d * g_xc.transpose(), -g_x, g_x)
}

/// Result of a PnP resection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resection {
    pub pose: CameraPose,
    pub rms: f64,
    pub dlt_rms: f64,
    pub iterations: usize,
}

const PNP_MAX_ITERS: usize = 50;

/// Weighted DLT resection followed by damped Gauss–Newton refinement of the
/// reprojection error. Only correspondences with positive weight are used.
pub fn pnp_resect(points3d: &[Vec3], points2d: &[Pixel], weights: &[f64], k: &Intrinsics) -> Result<Resection> {
    if points3d.len() != points2d.len() || points3d.len() != weights.len() {
        return Err(Error::invalid("pnp: input lengths differ"));
    }
    let idx: Vec<usize> = (0..points3d.len())
        .filter(|&i| weights[i] > 0.0 && points2d[i].u.is_finite() && points2d[i].v.is_finite())
        .collect();
    if idx.len() < 6 {
        return Err(Error::InsufficientPoints(idx.len()));
    }
    // DLT is unreliable on near-planar sets (it can flip or put the points
    // behind the camera), so refinement also starts from a ring of look-at poses.
    let (dlt_start, dlt_rms) = match dlt(points3d, points2d, weights, &idx, k) {
        Ok((rot, pos)) => {
            let rms = reprojection_rms(&rot, &pos, points3d, points2d, weights, &idx, k);
            (Some((rot, pos)), rms)
        }
        Err(_) => (None, f64::INFINITY),
    };
    let mut best: Option<(Mat3, Vec3, f64, usize)> = None;
    let mut consider = |rot: Mat3, pos: Vec3, iterations: &mut usize| {
        let start = reprojection_rms(&rot, &pos, points3d, points2d, weights, &idx, k);
        let (rot, pos, rms, it) = refine(rot, pos, points3d, points2d, weights, &idx, k, start);
        *iterations += it;
        if rms.is_finite() && best.as_ref().is_none_or(|b| rms < b.2) {
            best = Some((rot, pos, rms, 0));
        }
    };
    let mut iterations = 0;
    if let Some((rot, pos)) = dlt_start {
        consider(rot, pos, &mut iterations);
    }
    for (rot, pos) in ring_starts(points3d, points2d, weights, &idx, k) {
        consider(rot, pos, &mut iterations);
    }
    let (rot, pos, rms, _) = best.ok_or(Error::SingularConfiguration)?;
    Ok(Resection { pose: CameraPose::from_matrix(&rot, &pos), rms, dlt_rms, iterations })
}

const RING_AZIMUTHS: usize = 12;
const RING_ELEVATIONS: [f64; 3] = [0.0, 0.35, -0.25];

/// Look-at poses around the weighted 3D centroid, at the distance that
/// matches the 3D spread to the observed 2D spread.
fn ring_starts(p3: &[Vec3], p2: &[Pixel], w: &[f64], idx: &[usize], k: &Intrinsics) -> Vec<(Mat3, Vec3)> {
    let wsum: f64 = idx.iter().map(|&i| w[i]).sum();
    let c3 = idx.iter().fold(Vec3::zeros(), |acc, &i| acc + p3[i] * w[i]) / wsum;
    let (cu, cv) = idx.iter().fold((0.0, 0.0), |acc, &i| (acc.0 + p2[i].u * w[i] / wsum, acc.1 + p2[i].v * w[i] / wsum));
    let mut s3 = 0.0;
    let mut s2 = 0.0;
    for &i in idx {
        s3 += w[i] * (p3[i] - c3).norm_squared();
        let (du, dv) = ((p2[i].u - cu) / k.fx, (p2[i].v - cv) / k.fy);
        s2 += w[i] * (du * du + dv * dv);
    }
    if !(s2 > 0.0 && s3 > 0.0) {
        return Vec::new();
    }
    let dist = libm::sqrt(s3 / s2).clamp(0.2, 1e3);
    let mut out = Vec::with_capacity(RING_AZIMUTHS * RING_ELEVATIONS.len());
    for &el in &RING_ELEVATIONS {
        for a in 0..RING_AZIMUTHS {
            let az = core::f64::consts::TAU * a as f64 / RING_AZIMUTHS as f64;
            let dir = Vec3::new(libm::cos(el) * libm::cos(az), libm::cos(el) * libm::sin(az), libm::sin(el));
            let eye = c3 + dir * dist;
            if let Ok(pose) = CameraPose::look_at(&eye, &c3) {
                if let Ok(rot) = pose.rotation() {
                    out.push((rot, eye));
                }
            }
        }
    }
    out
}

fn reprojection_rms(
    rot: &Mat3,
    pos: &Vec3,
    p3: &[Vec3],
    p2: &[Pixel],
    w: &[f64],
    idx: &[usize],
    k: &Intrinsics,
) -> f64 {
    let mut sum = 0.0;
    let mut wsum = 0.0;
    for &i in idx {
        match project(rot, pos, k, &p3[i]) {
            Ok(px) => sum += w[i] * ((px.u - p2[i].u) * (px.u - p2[i].u) + (px.v - p2[i].v) * (px.v - p2[i].v)),
            Err(_) => return f64::INFINITY,
        }
        wsum += w[i];
    }
    libm::sqrt(sum / wsum)
}

fn dlt(p3: &[Vec3], p2: &[Pixel], w: &[f64], idx: &[usize], k: &Intrinsics) -> Result<(Mat3, Vec3)> {
    let n = idx.len() as f64;
    // Hartley normalisation of both point sets.
    let c3 = idx.iter().fold(Vec3::zeros(), |acc, &i| acc + p3[i]) / n;
    let s3 = idx.iter().map(|&i| norm3(&(p3[i] - c3))).sum::<f64>() / n;
    if !(s3 > 1e-12) {
        return Err(Error::SingularConfiguration);
    }
    let s3 = libm::sqrt(3.0) / s3;
    let norm2d: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| ((p2[i].u - k.cx) / k.fx, (p2[i].v - k.cy) / k.fy))
        .collect();
    let c2 = norm2d.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let c2 = (c2.0 / n, c2.1 / n);
    let s2 = norm2d.iter().map(|q| libm::hypot(q.0 - c2.0, q.1 - c2.1)).sum::<f64>() / n;
    let s2 = if s2 > 1e-12 { libm::sqrt(2.0) / s2 } else { 1.0 };

    let mut a = DMatrix::<f64>::zeros(2 * idx.len(), 12);
    for (row, (&i, q)) in idx.iter().zip(&norm2d).enumerate() {
        let sw = libm::sqrt(w[i]);
        let x = (p3[i] - c3) * s3;
        let xh = [x.x, x.y, x.z, 1.0];
        let (u, v) = ((q.0 - c2.0) * s2, (q.1 - c2.1) * s2);
        for j in 0..4 {
            a[(2 * row, j)] = -sw * xh[j];
            a[(2 * row, 8 + j)] = sw * u * xh[j];
            a[(2 * row + 1, 4 + j)] = -sw * xh[j];
            a[(2 * row + 1, 8 + j)] = sw * v * xh[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let largest = eig.eigenvalues[order[11]];
    if !(largest > 0.0) || eig.eigenvalues[order[1]] <= 1e-12 * largest {
        return Err(Error::SingularConfiguration);
    }
    let h = eig.eigenvectors.column(order[0]);
    let pn = Matrix3x4::from_fn(|r, c| h[4 * r + c]);
    // Undo normalisation: P = T2⁻¹ · Pn · T3.
    let t2_inv = Mat3::new(1.0 / s2, 0.0, c2.0, 0.0, 1.0 / s2, c2.1, 0.0, 0.0, 1.0);
    let mut t3 = nalgebra::Matrix4::<f64>::identity() * s3;
    t3[(3, 3)] = 1.0;
    t3[(0, 3)] = -s3 * c3.x;
    t3[(1, 3)] = -s3 * c3.y;
    t3[(2, 3)] = -s3 * c3.z;
    let mut p = t2_inv * pn * t3;
    // Choose the sign that puts the points in front of the camera.
    let front = idx
        .iter()
        .filter(|&&i| p[(2, 0)] * p3[i].x + p[(2, 1)] * p3[i].y + p[(2, 2)] * p3[i].z + p[(2, 3)] > 0.0)
        .count();
    if 2 * front < idx.len() {
        p = -p;
    }
    let m: Mat3 = p.fixed_view::<3, 3>(0, 0).into();
    let svd = SVD::new(m, true, true);
    let (u, vt) = (svd.u.ok_or(Error::SingularConfiguration)?, svd.v_t.ok_or(Error::SingularConfiguration)?);
    let scale = svd.singular_values.sum() / 3.0;
    if !(scale > 0.0) {
        return Err(Error::SingularConfiguration);
    }
    let mut fix = Mat3::identity();
    fix[(2, 2)] = (u * vt).determinant().signum();
    let r_cw = u * fix * vt;
    let t_cw: Vec3 = p.column(3) / scale;
    let rot = r_cw.transpose();
    let pos = -(rot * t_cw);
    Ok((rot, pos))
}

#[allow(clippy::too_many_arguments)]
fn refine(
    mut rot: Mat3,
    mut pos: Vec3,
    p3: &[Vec3],
    p2: &[Pixel],
    w: &[f64],
    idx: &[usize],
    k: &Intrinsics,
    start_rms: f64,
) -> (Mat3, Vec3, f64, usize) {
    let mut rms = start_rms;
    let mut lambda = 1e-3;
    let mut iters = 0;
    if !rms.is_finite() {
        return (rot, pos, rms, 0);
    }
    for _ in 0..PNP_MAX_ITERS {
        iters += 1;
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for &i in idx {
            let xc = to_camera(&rot, &pos, &p3[i]);
            let Ok(px) = project_camera_point(k, &xc) else { continue };
            let jp = projection_jacobian(k, &xc);
            // Right perturbation R·exp(δ): ∂xc/∂δ = [xc]×, ∂xc/∂p = −Rᵀ.
            let j_rot = jp * skew(&xc);
            let j_pos = -(jp * rot.transpose());
            let mut jac = nalgebra::Matrix2x6::<f64>::zeros();
            jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_rot);
            jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_pos);
            let r = nalgebra::Vector2::new(px.u - p2[i].u, px.v - p2[i].v);
            h += jac.transpose() * jac * w[i];
            g += jac.transpose() * r * w[i];
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = h;
            for d in 0..6 {
                damped[(d, d)] += lambda * (h[(d, d)] + 1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let cand_rot = rot * exp_so3(&Vec3::new(step[0], step[1], step[2]));
            let cand_pos = pos + Vec3::new(step[3], step[4], step[5]);
            let cand_rms = reprojection_rms(&cand_rot, &cand_pos, p3, p2, w, idx, k);
            if cand_rms < rms {
                let gain = rms - cand_rms;
                rot = cand_rot;
                pos = cand_pos;
                rms = cand_rms;
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-12 * (1.0 + rms);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (rot, pos, rms, iters)
}
