//! Ground-anchored 25-frame motion windows and their canonicalisation.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{matrix_to_rot6d, rot6d_to_matrix};
use crate::error::{Error, Result};
use crate::geometry::{rot_z, rot_z_derivative, Anchor, Mat3, Vec3};
use crate::kinematics::{forward_kinematics, BodyState, FramePose, SkeletonModel, NUM_JOINTS, SHAPE_DIM};

pub const WINDOW_LEN: usize = 25;
pub const JOINT_FEATURES: usize = 9;
pub const FRAME_DIM: usize = NUM_JOINTS * JOINT_FEATURES;
pub const WINDOW_DIM: usize = WINDOW_LEN * FRAME_DIM;

/// Per frame, per joint: world orientation (6D) followed by world position.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotionWindow {
    pub data: Vec<f64>,
}

#[inline]
pub fn feature_offset(frame: usize, joint: usize) -> usize {
    (frame * NUM_JOINTS + joint) * JOINT_FEATURES
}

impl MotionWindow {
    pub fn zeros() -> Self {
        MotionWindow { data: vec![0.0; WINDOW_DIM] }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != WINDOW_DIM {
            return Err(Error::invalid("motion window must have 25x22x9 entries"));
        }
        Ok(MotionWindow { data })
    }

    pub fn rot6d(&self, frame: usize, joint: usize) -> [f64; 6] {
        let o = feature_offset(frame, joint);
        core::array::from_fn(|i| self.data[o + i])
    }

    pub fn position(&self, frame: usize, joint: usize) -> Vec3 {
        let o = feature_offset(frame, joint) + 6;
        Vec3::new(self.data[o], self.data[o + 1], self.data[o + 2])
    }

    /// Anchor of frame 0's root joint.
    pub fn anchor(&self) -> Result<Anchor> {
        let rot = rot6d_to_matrix(&self.rot6d(0, 0))?;
        Anchor::from_root(&self.position(0, 0), &rot).ok_or(Error::DegenerateHeading)
    }

    /// Root translation and orientation per frame, recovered from the window.
    pub fn root_track(&self) -> Result<Vec<(Vec3, Mat3)>> {
        (0..WINDOW_LEN)
            .map(|f| Ok((self.position(f, 0), rot6d_to_matrix(&self.rot6d(f, 0))?)))
            .collect()
    }
}

fn write_features(out: &mut [f64], rot: &Mat3, pos: &Vec3) {
    out[..6].copy_from_slice(&matrix_to_rot6d(rot));
    out[6] = pos.x;
    out[7] = pos.y;
    out[8] = pos.z;
}

/// Canonicalise 25 forward-kinematics states into the ground frame of the first.
pub fn canonicalize_states(states: &[BodyState]) -> Result<(MotionWindow, Anchor)> {
    if states.len() != WINDOW_LEN {
        return Err(Error::invalid("canonicalize needs exactly 25 frames"));
    }
    let anchor = Anchor::from_root(&states[0].joint_pos[0], &states[0].joint_rot[0]).ok_or(Error::DegenerateHeading)?;
    let q = rot_z(-anchor.yaw);
    let t = Vec3::new(anchor.x, anchor.y, 0.0);
    let mut w = MotionWindow::zeros();
    for (f, s) in states.iter().enumerate() {
        for j in 0..NUM_JOINTS {
            let o = feature_offset(f, j);
            write_features(&mut w.data[o..o + JOINT_FEATURES], &(q * s.joint_rot[j]), &(q * (s.joint_pos[j] - t)));
        }
    }
    Ok((w, anchor))
}

/// Run forward kinematics on a 25-frame window and canonicalise it.
pub fn canonicalize(
    poses: &[FramePose],
    beta: &[f64; SHAPE_DIM],
    model: &SkeletonModel,
) -> Result<(MotionWindow, Anchor)> {
    if poses.len() != WINDOW_LEN {
        return Err(Error::invalid("canonicalize needs exactly 25 frames"));
    }
    let states: Vec<BodyState> = poses.iter().map(|p| forward_kinematics(p, beta, model)).collect();
    canonicalize_states(&states)
}

/// Re-canonicalise an existing window (idempotent on canonical input).
pub fn canonicalize_window(window: &MotionWindow) -> Result<(MotionWindow, Anchor)> {
    let anchor = window.anchor()?;
    let q = rot_z(-anchor.yaw);
    let t = Vec3::new(anchor.x, anchor.y, 0.0);
    let mut out = MotionWindow::zeros();
    for f in 0..WINDOW_LEN {
        for j in 0..NUM_JOINTS {
            let o = feature_offset(f, j);
            let r = window.rot6d(f, j);
            let a1 = q * Vec3::new(r[0], r[1], r[2]);
            let a2 = q * Vec3::new(r[3], r[4], r[5]);
            let p = q * (window.position(f, j) - t);
            out.data[o..o + 9].copy_from_slice(&[a1.x, a1.y, a1.z, a2.x, a2.y, a2.z, p.x, p.y, p.z]);
        }
    }
    Ok((out, anchor))
}

/// Reverse pass of [`canonicalize_states`]. Adds `∂L/∂joint_pos` and
/// `∂L/∂joint_rot` for each of the 25 frames into the given accumulators,
/// including the dependence of the anchor on frame 0's root.
pub fn canonicalize_states_vjp(
    states: &[BodyState],
    anchor: &Anchor,
    g_window: &[f64],
    g_pos: &mut [[Vec3; NUM_JOINTS]],
    g_rot: &mut [[Mat3; NUM_JOINTS]],
) {
    let q = rot_z(-anchor.yaw);
    let qt = q.transpose();
    // d/dψ of Rz(−ψ).
    let dq = -rot_z_derivative(-anchor.yaw);
    let t = Vec3::new(anchor.x, anchor.y, 0.0);
    let mut g_t = Vec3::zeros();
    let mut g_yaw = 0.0;
    for (f, s) in states.iter().enumerate() {
        for j in 0..NUM_JOINTS {
            let o = feature_offset(f, j);
            let g = &g_window[o..o + JOINT_FEATURES];
            let g0 = Vec3::new(g[0], g[1], g[2]);
            let g1 = Vec3::new(g[3], g[4], g[5]);
            let gp = Vec3::new(g[6], g[7], g[8]);
            let r = &s.joint_rot[j];
            let c0: Vec3 = r.column(0).into();
            let c1: Vec3 = r.column(1).into();
            let d = s.joint_pos[j] - t;
            let mut gr = Mat3::zeros();
            gr.set_column(0, &(qt * g0));
            gr.set_column(1, &(qt * g1));
            g_rot[f][j] += gr;
            let gpw = qt * gp;
            g_pos[f][j] += gpw;
            g_t -= gpw;
            g_yaw += g0.dot(&(dq * c0)) + g1.dot(&(dq * c1)) + gp.dot(&(dq * d));
        }
    }
    g_pos[0][0].x += g_t.x;
    g_pos[0][0].y += g_t.y;
    let r0 = &states[0].joint_rot[0];
    let (fx, fy) = (r0[(0, 1)], r0[(1, 1)]);
    let r2 = fx * fx + fy * fy;
    g_rot[0][0][(0, 1)] += g_yaw * (-fy / r2);
    g_rot[0][0][(1, 1)] += g_yaw * (fx / r2);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PlanarTransform;
    use crate::kinematics::{forward_kinematics, FramePose};
    use crate::synth::{generate_motion, standard_model, MotionKind, SceneSpec};

    fn window_poses(kind: MotionKind, seed: u64) -> Vec<FramePose> {
        let model = standard_model();
        let spec = SceneSpec { motion: kind, frames: 25, seed, ..SceneSpec::default() };
        generate_motion(&spec, &model).unwrap().0.frames
    }

    fn transform_poses(poses: &[FramePose], t: &PlanarTransform) -> Vec<FramePose> {
        poses
            .iter()
            .map(|p| p.with_root(&t.apply_point(&p.root_position()), &t.apply_rotation(&p.root_rotation())))
            .collect()
    }

    #[test]
    fn anchored_window_is_identity() {
        let model = standard_model();
        let poses = window_poses(MotionKind::WalkLine, 1);
        let (w, anchor) = canonicalize(&poses, &[0.0; SHAPE_DIM], &model).unwrap();
        let back = PlanarTransform::between(&anchor, &Anchor::default());
        let anchored = transform_poses(&poses, &back);
        let (w2, a2) = canonicalize(&anchored, &[0.0; SHAPE_DIM], &model).unwrap();
        assert!(a2.x.abs() < 1e-12 && a2.y.abs() < 1e-12 && a2.yaw.abs() < 1e-12);
        let states: Vec<_> = anchored.iter().map(|p| forward_kinematics(p, &[0.0; SHAPE_DIM], &model)).collect();
        for f in 0..WINDOW_LEN {
            for j in 0..NUM_JOINTS {
                assert!((w2.position(f, j) - states[f].joint_pos[j]).norm() < 1e-12);
            }
        }
        assert!(w.data.iter().zip(&w2.data).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let model = standard_model();
        let poses = window_poses(MotionKind::WalkCircle, 2);
        let (w, _) = canonicalize(&poses, &[0.0; SHAPE_DIM], &model).unwrap();
        let (w2, a) = canonicalize_window(&w).unwrap();
        assert!(a.x.abs() < 1e-12 && a.y.abs() < 1e-12 && a.yaw.abs() < 1e-12);
        assert!(w.data.iter().zip(&w2.data).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn canonicalize_invariant_to_planar_motion() {
        let model = standard_model();
        let poses = window_poses(MotionKind::Composite, 3);
        let t = PlanarTransform { yaw: 40f64.to_radians(), tx: 3.0, ty: -2.0 };
        let (w, _) = canonicalize(&poses, &[0.0; SHAPE_DIM], &model).unwrap();
        let (w2, _) = canonicalize(&transform_poses(&poses, &t), &[0.0; SHAPE_DIM], &model).unwrap();
        let err = w.data.iter().zip(&w2.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn vertical_forward_axis_is_degenerate() {
        let model = standard_model();
        let mut poses = window_poses(MotionKind::WalkLine, 4);
        poses[0].phi = [core::f64::consts::FRAC_PI_2, 0.0, 0.0];
        assert_eq!(canonicalize(&poses, &[0.0; SHAPE_DIM], &model).unwrap_err(), Error::DegenerateHeading);
        assert!(canonicalize(&poses[..24], &[0.0; SHAPE_DIM], &model).is_err());
    }
}
