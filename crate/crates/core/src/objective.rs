//! Weighted nine-term loss over a body trajectory and camera tracks, with its
//! analytic gradient.
//!
//! Parameters are packed into one flat vector: per frame `[τ(3), φ(3), z(32)]`,
//! then `β(10)`, then per camera and frame `[r(6), p(3)]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{
    project_camera_point, projection_jacobian, rot6d_to_matrix, rot6d_vjp, to_camera, CameraPose, CameraTrack,
    Intrinsics,
};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::kinematics::{
    forward_kinematics_cached, forward_kinematics_vjp, BodyState, BodyTrajectory, FkCache, FramePose, SkeletonModel,
    NUM_JOINTS, POSE_LATENT_DIM, SHAPE_DIM,
};
use crate::motion_prior::{canonicalize_states, canonicalize_states_vjp, PriorModel, WINDOW_LEN};

/// Detections below this confidence are ignored.
pub const CONFIDENCE_FLOOR: f64 = 0.3;

pub const FRAME_PARAMS: usize = 6 + POSE_LATENT_DIM;
pub const CAMERA_PARAMS: usize = 9;

/// One 2D detection: pixel position and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "[f64; 3]", into = "[f64; 3]"))]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl From<[f64; 3]> for Keypoint {
    fn from(a: [f64; 3]) -> Self {
        Keypoint { u: a[0], v: a[1], w: a[2] }
    }
}

impl From<Keypoint> for [f64; 3] {
    fn from(k: Keypoint) -> Self {
        [k.u, k.v, k.w]
    }
}

impl Keypoint {
    /// Confidence after applying the floor.
    #[inline]
    pub fn weight(&self) -> f64 {
        if self.w >= CONFIDENCE_FLOOR && self.u.is_finite() && self.v.is_finite() {
            self.w
        } else {
            0.0
        }
    }
}

/// Keypoints indexed by frame, camera and joint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observations {
    pub frames: usize,
    pub cameras: usize,
    data: Vec<Keypoint>,
}

impl Observations {
    pub fn empty(frames: usize, cameras: usize) -> Self {
        Observations { frames, cameras, data: vec![Keypoint::default(); frames * cameras * NUM_JOINTS] }
    }

    pub fn from_keypoints(frames: usize, cameras: usize, data: Vec<Keypoint>) -> Result<Self> {
        let obs = Observations { frames, cameras, data };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.frames * self.cameras * NUM_JOINTS {
            return Err(Error::invalid("keypoint count does not match frames x cameras x 22"));
        }
        if let Some(i) = self.data.iter().position(|k| !(0.0..=1.0).contains(&k.w)) {
            let (t, c, n) = self.unflatten(i);
            return Err(Error::Invalid(alloc::format!("confidence outside [0, 1] at frame {t}, camera {c}, joint {n}")));
        }
        Ok(())
    }

    fn unflatten(&self, i: usize) -> (usize, usize, usize) {
        (i / (self.cameras * NUM_JOINTS), (i / NUM_JOINTS) % self.cameras, i % NUM_JOINTS)
    }

    #[inline]
    fn index(&self, t: usize, c: usize, n: usize) -> usize {
        (t * self.cameras + c) * NUM_JOINTS + n
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, n: usize) -> Keypoint {
        self.data[self.index(t, c, n)]
    }

    pub fn set(&mut self, t: usize, c: usize, n: usize, k: Keypoint) {
        let i = self.index(t, c, n);
        self.data[i] = k;
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.data
    }

    pub fn slice(&self, start: usize, len: usize) -> Observations {
        let stride = self.cameras * NUM_JOINTS;
        Observations { frames: len, cameras: self.cameras, data: self.data[start * stride..(start + len) * stride].to_vec() }
    }

    /// Keep only the listed cameras, in the given order.
    pub fn select_cameras(&self, cams: &[usize]) -> Observations {
        let mut out = Observations::empty(self.frames, cams.len());
        for t in 0..self.frames {
            for (k, &c) in cams.iter().enumerate() {
                for n in 0..NUM_JOINTS {
                    out.set(t, k, n, self.get(t, c, n));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LossWeights {
    pub w_2d: f64,
    pub w_m: f64,
    pub w_3ds: f64,
    pub w_cos: f64,
    pub w_cps: f64,
    pub w_beta: f64,
    pub w_z: f64,
    pub w_gp: f64,
    pub w_cgp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_2d: 1.0,
            w_m: 1e-2,
            w_3ds: 1.0,
            w_cos: 1000.0,
            w_cps: 1000.0,
            w_beta: 1e-2,
            w_z: 1e-3,
            w_gp: 100.0,
            w_cgp: 100.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        w_2d: 0.0,
        w_m: 0.0,
        w_3ds: 0.0,
        w_cos: 0.0,
        w_cps: 0.0,
        w_beta: 0.0,
        w_z: 0.0,
        w_gp: 0.0,
        w_cgp: 0.0,
    };

    pub fn as_array(&self) -> [f64; 9] {
        [self.w_2d, self.w_m, self.w_3ds, self.w_cos, self.w_cps, self.w_beta, self.w_z, self.w_gp, self.w_cgp]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("loss weights must be finite and non-negative"))
        }
    }
}

/// Unweighted value of every loss term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub e_2d: f64,
    pub e_m: f64,
    pub e_3ds: f64,
    pub e_cos: f64,
    pub e_cps: f64,
    pub e_beta: f64,
    pub e_z: f64,
    pub e_hgp: f64,
    pub e_cgp: f64,
}

impl LossBreakdown {
    pub const NAMES: [&'static str; 9] = ["e_2d", "e_m", "e_3ds", "e_cos", "e_cps", "e_beta", "e_z", "e_hgp", "e_cgp"];

    pub fn as_array(&self) -> [f64; 9] {
        [self.e_2d, self.e_m, self.e_3ds, self.e_cos, self.e_cps, self.e_beta, self.e_z, self.e_hgp, self.e_cgp]
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        self.as_array().iter().zip(w.as_array()).map(|(e, w)| if w == 0.0 { 0.0 } else { w * e }).sum()
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub frames: usize,
    pub cameras: usize,
}

impl ParamLayout {
    pub fn new(frames: usize, cameras: usize) -> Self {
        ParamLayout { frames, cameras }
    }

    #[inline]
    pub fn frame(&self, t: usize) -> usize {
        t * FRAME_PARAMS
    }

    #[inline]
    pub fn beta(&self) -> usize {
        self.frames * FRAME_PARAMS
    }

    #[inline]
    pub fn camera(&self, c: usize, t: usize) -> usize {
        self.beta() + SHAPE_DIM + (c * self.frames + t) * CAMERA_PARAMS
    }

    pub fn len(&self) -> usize {
        self.camera(self.cameras, 0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, traj: &BodyTrajectory, cams: &[CameraTrack]) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        for (t, f) in traj.frames.iter().enumerate() {
            let o = self.frame(t);
            x[o..o + 3].copy_from_slice(&f.tau);
            x[o + 3..o + 6].copy_from_slice(&f.phi);
            x[o + 6..o + FRAME_PARAMS].copy_from_slice(&f.z);
        }
        let b = self.beta();
        x[b..b + SHAPE_DIM].copy_from_slice(&traj.beta);
        for (c, cam) in cams.iter().enumerate() {
            for (t, pose) in cam.frames.iter().enumerate() {
                let o = self.camera(c, t);
                x[o..o + 6].copy_from_slice(&pose.r);
                x[o + 6..o + 9].copy_from_slice(&pose.p);
            }
        }
        x
    }

    pub fn unpack_body(&self, x: &[f64]) -> BodyTrajectory {
        let frames = (0..self.frames)
            .map(|t| {
                let o = self.frame(t);
                FramePose {
                    tau: core::array::from_fn(|i| x[o + i]),
                    phi: core::array::from_fn(|i| x[o + 3 + i]),
                    z: core::array::from_fn(|i| x[o + 6 + i]),
                }
            })
            .collect();
        let b = self.beta();
        BodyTrajectory { frames, beta: core::array::from_fn(|i| x[b + i]) }
    }

    pub fn unpack_camera(&self, x: &[f64], c: usize, t: usize) -> CameraPose {
        let o = self.camera(c, t);
        CameraPose { r: core::array::from_fn(|i| x[o + i]), p: core::array::from_fn(|i| x[o + 6 + i]) }
    }

    pub fn unpack_cameras(&self, x: &[f64], intrinsics: &[Intrinsics]) -> Vec<CameraTrack> {
        intrinsics
            .iter()
            .enumerate()
            .map(|(c, k)| CameraTrack { intrinsics: *k, frames: (0..self.frames).map(|t| self.unpack_camera(x, c, t)).collect() })
            .collect()
    }
}

/// Which parameters the optimizer may change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamMask {
    pub free: Vec<bool>,
}

impl ParamMask {
    pub fn all(layout: &ParamLayout) -> Self {
        ParamMask { free: vec![true; layout.len()] }
    }

    pub fn none(layout: &ParamLayout) -> Self {
        ParamMask { free: vec![false; layout.len()] }
    }

    pub fn free_cameras(mut self, layout: &ParamLayout) -> Self {
        let o = layout.camera(0, 0);
        self.free[o..].iter_mut().for_each(|f| *f = true);
        self
    }

    /// Root translation and orientation of every frame.
    pub fn free_roots(mut self, layout: &ParamLayout) -> Self {
        for t in 0..layout.frames {
            let o = layout.frame(t);
            self.free[o..o + 6].iter_mut().for_each(|f| *f = true);
        }
        self
    }

    pub fn free_pose_and_shape(mut self, layout: &ParamLayout) -> Self {
        for t in 0..layout.frames {
            let o = layout.frame(t);
            self.free[o + 6..o + FRAME_PARAMS].iter_mut().for_each(|f| *f = true);
        }
        let b = layout.beta();
        self.free[b..b + SHAPE_DIM].iter_mut().for_each(|f| *f = true);
        self
    }

    /// Freeze the first frame's root translation and orientation.
    pub fn freeze_pivot(mut self, layout: &ParamLayout) -> Self {
        let o = layout.frame(0);
        self.free[o..o + 6].iter_mut().for_each(|f| *f = false);
        self
    }

    pub fn apply(&self, g: &mut [f64]) {
        for (gi, free) in g.iter_mut().zip(&self.free) {
            if !free {
                *gi = 0.0;
            }
        }
    }
}

/// Gradient sinks for intermediate quantities.
struct Sinks {
    pos: Vec<[Vec3; NUM_JOINTS]>,
    rot: Vec<[Mat3; NUM_JOINTS]>,
    z: Vec<[f64; POSE_LATENT_DIM]>,
    beta: [f64; SHAPE_DIM],
    cam_rot: Vec<Mat3>,
    cam_r6: Vec<[f64; 6]>,
    cam_p: Vec<Vec3>,
}

impl Sinks {
    fn new(frames: usize, cameras: usize) -> Self {
        Sinks {
            pos: vec![[Vec3::zeros(); NUM_JOINTS]; frames],
            rot: vec![[Mat3::zeros(); NUM_JOINTS]; frames],
            z: vec![[0.0; POSE_LATENT_DIM]; frames],
            beta: [0.0; SHAPE_DIM],
            cam_rot: vec![Mat3::zeros(); frames * cameras],
            cam_r6: vec![[0.0; 6]; frames * cameras],
            cam_p: vec![Vec3::zeros(); frames * cameras],
        }
    }

    fn all_finite(&self) -> bool {
        self.pos.iter().flatten().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rot.iter().flatten().all(|m| m.iter().all(|x| x.is_finite()))
            && self.z.iter().flatten().all(|x| x.is_finite())
            && self.beta.iter().all(|x| x.is_finite())
            && self.cam_rot.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && self.cam_r6.iter().flatten().all(|x| x.is_finite())
            && self.cam_p.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Forward quantities shared by all terms.
struct Evaluated<'a> {
    traj: BodyTrajectory,
    states: Vec<BodyState>,
    caches: Vec<FkCache>,
    cams: &'a [CameraTrack],
    cam_rot: Vec<Mat3>,
}

impl<'a> Evaluated<'a> {
    fn new(traj: BodyTrajectory, cams: &'a [CameraTrack], model: &SkeletonModel) -> Result<Self> {
        let (states, caches) = traj.frames.iter().map(|f| forward_kinematics_cached(f, &traj.beta, model)).unzip();
        let frames = traj.frames.len();
        let mut cam_rot = Vec::with_capacity(frames * cams.len());
        for cam in cams {
            if cam.frames.len() != frames {
                return Err(Error::invalid("camera track length differs from body trajectory"));
            }
            for pose in &cam.frames {
                cam_rot.push(rot6d_to_matrix(&pose.r)?);
            }
        }
        Ok(Evaluated { traj, states, caches, cams, cam_rot })
    }

    fn frames(&self) -> usize {
        self.states.len()
    }
}

fn term_2d(ev: &Evaluated, obs: &Observations, scale: f64, mut sink: Option<&mut Sinks>) -> f64 {
    let frames = ev.frames();
    let norm = 1.0 / (NUM_JOINTS * frames) as f64;
    let mut total = 0.0;
    for (c, cam) in ev.cams.iter().enumerate() {
        let k = &cam.intrinsics;
        for t in 0..frames {
            let rot = &ev.cam_rot[c * frames + t];
            let pos = cam.frames[t].position();
            let mut frame_sum = 0.0;
            for n in 0..NUM_JOINTS {
                let kp = obs.get(t, c, n);
                let w = kp.weight();
                if w == 0.0 {
                    continue;
                }
                let x = &ev.states[t].joint_pos[n];
                let xc = to_camera(rot, &pos, x);
                let Ok(px) = project_camera_point(k, &xc) else { continue };
                let (du, dv) = (px.u - kp.u, px.v - kp.v);
                frame_sum += w * (du * du + dv * dv);
                if let Some(s) = sink.as_deref_mut() {
                    let a = 2.0 * scale * norm * w;
                    let j = projection_jacobian(k, &xc);
                    let g_xc = j.transpose() * nalgebra::Vector2::new(a * du, a * dv);
                    let g_x = rot * g_xc;
                    s.pos[t][n] += g_x;
                    s.cam_p[c * frames + t] -= g_x;
                    s.cam_rot[c * frames + t] += (x - pos) * g_xc.transpose();
                }
            }
            total += frame_sum;
        }
    }
    total * norm
}

fn term_motion(ev: &Evaluated, prior: &PriorModel, scale: f64, mut sink: Option<&mut Sinks>) -> Result<f64> {
    let frames = ev.frames();
    if frames < WINDOW_LEN {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..=frames - WINDOW_LEN {
        let states = &ev.states[t..t + WINDOW_LEN];
        let (window, anchor) = canonicalize_states(states)?;
        let m = prior.encode_mu(&window);
        total += m.iter().map(|x| x * x).sum::<f64>();
        if let Some(s) = sink.as_deref_mut() {
            let g_m: Vec<f64> = m.iter().map(|x| 2.0 * scale * x).collect();
            let g_x = prior.encode_mu_vjp(&window, &g_m);
            canonicalize_states_vjp(
                states,
                &anchor,
                &g_x,
                &mut s.pos[t..t + WINDOW_LEN],
                &mut s.rot[t..t + WINDOW_LEN],
            );
        }
    }
    Ok(total)
}

fn term_3ds(ev: &Evaluated, scale: f64, mut sink: Option<&mut Sinks>) -> f64 {
    let mut total = 0.0;
    for t in 1..ev.frames() {
        for n in 0..NUM_JOINTS {
            let d = ev.states[t].joint_pos[n] - ev.states[t - 1].joint_pos[n];
            total += d.norm_squared();
            if let Some(s) = sink.as_deref_mut() {
                let g = d * (2.0 * scale);
                s.pos[t][n] += g;
                s.pos[t - 1][n] -= g;
            }
        }
    }
    total
}

fn term_cam_smooth(ev: &Evaluated, w_cos: f64, w_cps: f64, mut sink: Option<&mut Sinks>) -> (f64, f64) {
    let frames = ev.frames();
    let cams = ev.cams.len();
    if cams == 0 || frames == 0 {
        return (0.0, 0.0);
    }
    let norm = 1.0 / (cams * frames) as f64;
    let (mut e_r, mut e_p) = (0.0, 0.0);
    for (c, cam) in ev.cams.iter().enumerate() {
        for t in 1..frames {
            let (a, b) = (&cam.frames[t], &cam.frames[t - 1]);
            let dr: [f64; 6] = core::array::from_fn(|i| a.r[i] - b.r[i]);
            let dp: [f64; 3] = core::array::from_fn(|i| a.p[i] - b.p[i]);
            e_r += dr.iter().map(|x| x * x).sum::<f64>();
            e_p += dp.iter().map(|x| x * x).sum::<f64>();
            if let Some(s) = sink.as_deref_mut() {
                let (i, j) = (c * frames + t, c * frames + t - 1);
                for k in 0..6 {
                    let g = 2.0 * w_cos * norm * dr[k];
                    s.cam_r6[i][k] += g;
                    s.cam_r6[j][k] -= g;
                }
                let g = Vec3::new(dp[0], dp[1], dp[2]) * (2.0 * w_cps * norm);
                s.cam_p[i] += g;
                s.cam_p[j] -= g;
            }
        }
    }
    (e_r * norm, e_p * norm)
}

fn term_reg(ev: &Evaluated, w_beta: f64, w_z: f64, mut sink: Option<&mut Sinks>) -> (f64, f64) {
    let beta = &ev.traj.beta;
    let e_beta = beta.iter().map(|x| x * x).sum::<f64>();
    let mut e_z = 0.0;
    for (t, f) in ev.traj.frames.iter().enumerate() {
        e_z += f.z.iter().map(|x| x * x).sum::<f64>();
        if let Some(s) = sink.as_deref_mut() {
            for (g, z) in s.z[t].iter_mut().zip(&f.z) {
                *g += 2.0 * w_z * z;
            }
        }
    }
    if let Some(s) = sink {
        for (g, b) in s.beta.iter_mut().zip(beta) {
            *g += 2.0 * w_beta * b;
        }
    }
    (e_beta, e_z)
}

fn term_ground(ev: &Evaluated, w_gp: f64, w_cgp: f64, mut sink: Option<&mut Sinks>) -> (f64, f64) {
    let frames = ev.frames();
    if frames == 0 {
        return (0.0, 0.0);
    }
    let mut e_h = 0.0;
    for t in 0..frames {
        for n in 0..NUM_JOINTS {
            let z = ev.states[t].joint_pos[n].z;
            if z < 0.0 {
                e_h -= z;
                if let Some(s) = sink.as_deref_mut() {
                    s.pos[t][n].z -= w_gp / frames as f64;
                }
            }
        }
    }
    let mut e_c = 0.0;
    let cams = ev.cams.len();
    for (c, cam) in ev.cams.iter().enumerate() {
        for (t, pose) in cam.frames.iter().enumerate() {
            if pose.p[2] < 0.0 {
                e_c -= pose.p[2];
                if let Some(s) = sink.as_deref_mut() {
                    s.cam_p[c * frames + t].z -= w_cgp / (cams * frames) as f64;
                }
            }
        }
    }
    let e_c = if cams == 0 { 0.0 } else { e_c / (cams * frames) as f64 };
    (e_h / frames as f64, e_c)
}

/// The loss as a function of the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub obs: &'a Observations,
    pub prior: &'a PriorModel,
    pub model: &'a SkeletonModel,
    pub weights: LossWeights,
    pub intrinsics: Vec<Intrinsics>,
    pub layout: ParamLayout,
}

impl<'a> Objective<'a> {
    pub fn new(
        obs: &'a Observations,
        prior: &'a PriorModel,
        model: &'a SkeletonModel,
        weights: LossWeights,
        intrinsics: Vec<Intrinsics>,
    ) -> Result<Self> {
        weights.validate()?;
        if intrinsics.len() != obs.cameras {
            return Err(Error::invalid("number of cameras differs from observations"));
        }
        let layout = ParamLayout::new(obs.frames, obs.cameras);
        Ok(Objective { obs, prior, model, weights, intrinsics, layout })
    }

    /// Loss terms at `x`; when `grad` is given it receives the gradient of the
    /// weighted total (all parameters, no mask).
    pub fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> Result<LossBreakdown> {
        let traj = self.layout.unpack_body(x);
        let cams = self.layout.unpack_cameras(x, &self.intrinsics);
        evaluate_terms(traj, &cams, self.obs, self.prior, self.model, &self.weights, grad)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x, None)?.total(&self.weights))
    }
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

fn active(s: &mut Option<Sinks>, weight: f64) -> Option<&mut Sinks> {
    if weight == 0.0 {
        None
    } else {
        s.as_mut()
    }
}

fn check_term(value: f64, term: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

fn check_sinks(s: &Option<Sinks>, term: &'static str) -> Result<()> {
    match s {
        Some(s) if !s.all_finite() => Err(Error::NonFiniteGradient { term }),
        _ => Ok(()),
    }
}

fn evaluate_terms(
    traj: BodyTrajectory,
    cams: &[CameraTrack],
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
    w: &LossWeights,
    grad: Option<&mut [f64]>,
) -> Result<LossBreakdown> {
    let frames = traj.frames.len();
    if obs.frames != frames || obs.cameras != cams.len() {
        return Err(Error::invalid("observations do not match trajectory and cameras"));
    }
    let ev = Evaluated::new(traj, cams, model)?;
    let mut sinks = grad.as_ref().map(|_| Sinks::new(frames, cams.len()));

    let mut out = LossBreakdown { e_2d: check_term(term_2d(&ev, obs, w.w_2d, active(&mut sinks, w.w_2d)), "e_2d")?, ..Default::default() };
    check_sinks(&sinks, "e_2d")?;
    out.e_m = check_term(term_motion(&ev, prior, w.w_m, active(&mut sinks, w.w_m))?, "e_m")?;
    check_sinks(&sinks, "e_m")?;
    out.e_3ds = check_term(term_3ds(&ev, w.w_3ds, active(&mut sinks, w.w_3ds)), "e_3ds")?;
    check_sinks(&sinks, "e_3ds")?;
    let (e_cos, e_cps) = term_cam_smooth(&ev, w.w_cos, w.w_cps, sinks.as_mut());
    out.e_cos = check_term(e_cos, "e_cos")?;
    out.e_cps = check_term(e_cps, "e_cps")?;
    check_sinks(&sinks, "e_cos")?;
    let (e_beta, e_z) = term_reg(&ev, w.w_beta, w.w_z, sinks.as_mut());
    out.e_beta = check_term(e_beta, "e_beta")?;
    out.e_z = check_term(e_z, "e_z")?;
    check_sinks(&sinks, "e_z")?;
    let (e_hgp, e_cgp) = term_ground(&ev, w.w_gp, w.w_cgp, sinks.as_mut());
    out.e_hgp = check_term(e_hgp, "e_hgp")?;
    out.e_cgp = check_term(e_cgp, "e_cgp")?;
    check_sinks(&sinks, "e_hgp")?;
    if !out.total(w).is_finite() {
        return Err(Error::NonFiniteLoss { term: "total" });
    }

    if let (Some(g), Some(s)) = (grad, sinks) {
        let layout = ParamLayout::new(frames, cams.len());
        if g.len() != layout.len() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        g.iter_mut().for_each(|x| *x = 0.0);
        let b = layout.beta();
        for t in 0..frames {
            let fg = forward_kinematics_vjp(&ev.states[t], &ev.caches[t], model, &s.pos[t], &s.rot[t]);
            let o = layout.frame(t);
            g[o..o + 3].copy_from_slice(fg.tau.as_slice());
            g[o + 3..o + 6].copy_from_slice(fg.phi.as_slice());
            for i in 0..POSE_LATENT_DIM {
                g[o + 6 + i] = fg.z[i] + s.z[t][i];
            }
            for i in 0..SHAPE_DIM {
                g[b + i] += fg.beta[i];
            }
        }
        for i in 0..SHAPE_DIM {
            g[b + i] += s.beta[i];
        }
        for (c, cam) in cams.iter().enumerate() {
            for t in 0..frames {
                let i = c * frames + t;
                let o = layout.camera(c, t);
                let gr = rot6d_vjp(&cam.frames[t].r, &s.cam_rot[i]);
                for k in 0..6 {
                    g[o + k] = gr[k] + s.cam_r6[i][k];
                }
                g[o + 6..o + 9].copy_from_slice(s.cam_p[i].as_slice());
            }
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            let term = if i < layout.camera(0, 0) { "kinematics" } else { "camera_rotation" };
            return Err(Error::NonFiniteGradient { term });
        }
    }
    Ok(out)
}

/// All nine unweighted loss terms.
pub fn loss_terms(
    traj: &BodyTrajectory,
    cams: &[CameraTrack],
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
) -> Result<LossBreakdown> {
    evaluate_terms(traj.clone(), cams, obs, prior, model, &LossWeights::ZERO, None)
}

pub fn total_loss(
    traj: &BodyTrajectory,
    cams: &[CameraTrack],
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    Ok(loss_terms(traj, cams, obs, prior, model)?.total(weights))
}

/// Gradient of [`total_loss`] in the flat layout; frozen entries are zero.
pub fn gradient(
    traj: &BodyTrajectory,
    cams: &[CameraTrack],
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
    weights: &LossWeights,
    mask: &ParamMask,
) -> Result<Vec<f64>> {
    weights.validate()?;
    let layout = ParamLayout::new(traj.frames.len(), cams.len());
    if mask.free.len() != layout.len() {
        return Err(Error::invalid("mask length does not match parameter layout"));
    }
    let mut g = vec![0.0; layout.len()];
    evaluate_terms(traj.clone(), cams, obs, prior, model, weights, Some(&mut g))?;
    mask.apply(&mut g);
    Ok(g)
}

fn states_of(traj: &BodyTrajectory, model: &SkeletonModel) -> Vec<BodyState> {
    traj.frames.iter().map(|f| forward_kinematics_cached(f, &traj.beta, model).0).collect()
}

pub fn e_2d(traj: &BodyTrajectory, cams: &[CameraTrack], obs: &Observations, model: &SkeletonModel) -> Result<f64> {
    if obs.frames != traj.len() || obs.cameras != cams.len() {
        return Err(Error::invalid("observations do not match trajectory and cameras"));
    }
    let ev = Evaluated::new(traj.clone(), cams, model)?;
    Ok(term_2d(&ev, obs, 0.0, None))
}

pub fn e_motion(traj: &BodyTrajectory, prior: &PriorModel, model: &SkeletonModel) -> Result<f64> {
    let ev = Evaluated::new(traj.clone(), &[], model)?;
    term_motion(&ev, prior, 0.0, None)
}

pub fn e_3ds(traj: &BodyTrajectory, model: &SkeletonModel) -> f64 {
    let states = states_of(traj, model);
    (1..states.len())
        .map(|t| (0..NUM_JOINTS).map(|n| (states[t].joint_pos[n] - states[t - 1].joint_pos[n]).norm_squared()).sum::<f64>())
        .sum()
}

/// `(E_COS, E_CPS)`.
pub fn e_cam_smooth(cams: &[CameraTrack]) -> (f64, f64) {
    let frames = cams.first().map_or(0, |c| c.len());
    if cams.is_empty() || frames == 0 {
        return (0.0, 0.0);
    }
    let norm = 1.0 / (cams.len() * frames) as f64;
    let (mut e_r, mut e_p) = (0.0, 0.0);
    for cam in cams {
        for w in cam.frames.windows(2) {
            e_r += (0..6).map(|i| sq(w[1].r[i] - w[0].r[i])).sum::<f64>();
            e_p += (0..3).map(|i| sq(w[1].p[i] - w[0].p[i])).sum::<f64>();
        }
    }
    (e_r * norm, e_p * norm)
}

/// `(E_β, E_z)`.
pub fn e_reg(traj: &BodyTrajectory) -> (f64, f64) {
    let e_beta = traj.beta.iter().map(|x| x * x).sum();
    let e_z = traj.frames.iter().flat_map(|f| f.z.iter()).map(|x| x * x).sum();
    (e_beta, e_z)
}

/// `(E_HGP, E_CGP)`.
pub fn e_ground(traj: &BodyTrajectory, cams: &[CameraTrack], model: &SkeletonModel) -> (f64, f64) {
    let states = states_of(traj, model);
    let frames = states.len();
    if frames == 0 {
        return (0.0, 0.0);
    }
    let e_h: f64 = states.iter().flat_map(|s| s.joint_pos.iter()).map(|p| (-p.z).max(0.0)).sum();
    let e_c: f64 = cams.iter().flat_map(|c| c.frames.iter()).map(|p| (-p.p[2]).max(0.0)).sum();
    let e_c = if cams.is_empty() { 0.0 } else { e_c / (cams.len() * frames) as f64 };
    (e_h / frames as f64, e_c)
}
