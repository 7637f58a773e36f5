//! Procedural ground-truth scenes: body motions, camera rigs and noisy
//! keypoints, plus the motion-window corpus used to fit priors.
//!
//! Every generator draws from a ChaCha8 stream seeded by the caller, so output
//! is bit-identical across runs and platforms. Motions are walking, turning,
//! crouching and waving on a static floor; nothing slides or skates.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::camera::{project, CameraPose, CameraTrack, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{log_so3, rot_x, rot_y, rot_z, Mat3, Vec3, PI};
use crate::kinematics::{
    forward_kinematics, BodyState, BodyTrajectory, FramePose, PoseBasis, ShapeBasis, SkeletonDef, SkeletonModel,
    NUM_JOINTS, POSE_DIM, SHAPE_DIM,
};
use crate::motion_prior::{canonicalize_states, MotionWindow, WINDOW_LEN};
use crate::objective::{Keypoint, Observations};

pub const DEFAULT_FPS: f64 = 30.0;
/// Height of the lowest joint above the floor in generated motions, metres.
pub const FOOT_CLEARANCE: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MotionKind {
    WalkCircle,
    WalkLine,
    TurnInPlace,
    CrouchWave,
    Composite,
}

impl MotionKind {
    pub const ALL: [MotionKind; 5] =
        [MotionKind::WalkCircle, MotionKind::WalkLine, MotionKind::TurnInPlace, MotionKind::CrouchWave, MotionKind::Composite];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CameraKind {
    Static,
    Orbit,
    Pan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CameraSpec {
    pub kind: CameraKind,
    /// Horizontal distance from the subject centroid, metres.
    pub radius: f64,
    pub height: f64,
    /// Initial azimuth around the centroid, radians.
    pub azimuth: f64,
    /// Orbit rate, radians per second (orbit cameras only).
    pub angular_speed: f64,
}

impl CameraSpec {
    pub fn new(kind: CameraKind, azimuth: f64) -> Self {
        CameraSpec { kind, radius: 5.0, height: 1.6, azimuth, angular_speed: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SceneSpec {
    pub motion: MotionKind,
    pub frames: usize,
    pub fps: f64,
    /// Walking speed, metres per second.
    pub speed: f64,
    pub cameras: Vec<CameraSpec>,
    pub intrinsics: Intrinsics,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            motion: MotionKind::WalkLine,
            frames: 100,
            fps: DEFAULT_FPS,
            speed: 1.2,
            cameras: standard_rig(2, 2),
            intrinsics: Intrinsics { fx: 1000.0, fy: 1000.0, cx: 960.0, cy: 540.0 },
            noise: NoiseSpec { pixel_sigma: 2.0, dropout: 0.05 },
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < WINDOW_LEN {
            return Err(Error::invalid("scene needs at least 25 frames"));
        }
        if !(self.noise.pixel_sigma >= 0.0) || !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(Error::invalid("noise needs sigma >= 0 and dropout in [0, 1)"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::invalid("fps must be positive"));
        }
        Ok(())
    }
}

/// `n_static` static cameras and `n_orbit` orbiting ones, spread in azimuth.
pub fn standard_rig(n_static: usize, n_orbit: usize) -> Vec<CameraSpec> {
    let n = n_static + n_orbit;
    (0..n)
        .map(|i| {
            let az = -PI / 2.0 + 2.0 * PI * i as f64 / n as f64 + 0.3;
            let kind = if i < n_static { CameraKind::Static } else { CameraKind::Orbit };
            CameraSpec::new(kind, az)
        })
        .collect()
}

/// Per-sequence variation of the procedural gait.
struct Style {
    offsets: [f64; POSE_DIM],
    noise: [[(f64, f64, f64); 2]; POSE_DIM],
    amp_scale: f64,
    cadence: f64,
    phase0: f64,
    arm_hang: f64,
    squat_freq: f64,
    wave_freq: f64,
    turn_sign: f64,
    composite: [f64; 4],
}

impl Style {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let off = Normal::new(0.0, 0.06).expect("valid normal");
        let offsets = core::array::from_fn(|_| off.sample(rng));
        let noise = core::array::from_fn(|_| {
            core::array::from_fn(|_| (rng.random_range(0.5..3.0), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..0.04)))
        });
        Style {
            offsets,
            noise,
            amp_scale: rng.random_range(0.8..1.2),
            cadence: rng.random_range(0.8..1.0),
            phase0: rng.random_range(0.0..2.0 * PI),
            arm_hang: rng.random_range(1.2..1.4),
            squat_freq: rng.random_range(0.3..0.5),
            wave_freq: rng.random_range(0.8..1.5),
            turn_sign: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            composite: core::array::from_fn(|_| rng.random_range(0.0..2.0 * PI)),
        }
    }
}

/// Planar root state and joint angles for one frame, before height fitting.
struct RawFrame {
    x: f64,
    y: f64,
    root_rot: Mat3,
    theta: [f64; POSE_DIM],
}

fn set_bone(theta: &mut [f64; POSE_DIM], joint: usize, rot: Mat3) {
    let v = log_so3(&rot);
    let b = joint - 1;
    theta[3 * b] = v.x;
    theta[3 * b + 1] = v.y;
    theta[3 * b + 2] = v.z;
}

fn smooth_step(x: f64) -> f64 {
    0.5 - 0.5 * libm::cos(x)
}

fn raw_sequence(kind: MotionKind, frames: usize, fps: f64, speed: f64, style: &Style) -> Vec<RawFrame> {
    let dt = 1.0 / fps;
    let (mut x, mut y, mut yaw) = (0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = f as f64 * dt;
        let (v, omega) = match kind {
            MotionKind::WalkLine => (speed, 0.0),
            MotionKind::WalkCircle => (speed, style.turn_sign * speed / 3.0),
            MotionKind::TurnInPlace => (0.0, style.turn_sign * 0.9),
            MotionKind::CrouchWave => (0.0, 0.0),
            MotionKind::Composite => (
                speed * (0.6 + 0.4 * libm::sin(2.0 * PI * 0.1 * t + style.composite[0])),
                0.5 * libm::sin(2.0 * PI * 0.07 * t + style.composite[1]),
            ),
        };
        let amp = style.amp_scale
            * match kind {
                MotionKind::TurnInPlace => 0.3,
                MotionKind::CrouchWave => 0.0,
                _ => (v / 1.2).clamp(0.25, 1.3),
            };
        let psi = style.phase0 + 2.0 * PI * style.cadence * t;
        let (squat, wave) = if kind == MotionKind::CrouchWave {
            (0.9 * smooth_step(2.0 * PI * style.squat_freq * t), Some(libm::sin(2.0 * PI * style.wave_freq * t)))
        } else {
            (0.0, None)
        };
        let s = libm::sin(psi);

        let mut theta = [0.0; POSE_DIM];
        set_bone(&mut theta, 1, rot_x(amp * 0.40 * s + squat));
        set_bone(&mut theta, 2, rot_x(-amp * 0.40 * s + squat));
        set_bone(&mut theta, 3, rot_x(-0.3 * squat));
        set_bone(&mut theta, 4, rot_x(-(0.08 + amp * 0.6 * smooth_step(psi + 0.8)) - 2.0 * squat));
        set_bone(&mut theta, 5, rot_x(-(0.08 + amp * 0.6 * smooth_step(psi + PI + 0.8)) - 2.0 * squat));
        set_bone(&mut theta, 6, rot_z(0.1 * amp * s));
        set_bone(&mut theta, 7, rot_x(0.12 * amp * libm::sin(psi + 0.4) + squat));
        set_bone(&mut theta, 8, rot_x(0.12 * amp * libm::sin(psi + PI + 0.4) + squat));
        set_bone(&mut theta, 9, rot_x(0.3 * squat));
        set_bone(&mut theta, 12, rot_x(0.05 * libm::sin(2.0 * psi)));
        set_bone(&mut theta, 16, rot_x(-0.35 * amp * s) * rot_y(-style.arm_hang));
        let right_arm = match wave {
            Some(w) => rot_y(-0.9 - 0.4 * w),
            None => rot_x(0.35 * amp * s) * rot_y(style.arm_hang),
        };
        set_bone(&mut theta, 17, right_arm);
        set_bone(&mut theta, 18, rot_z(-(0.25 + 0.2 * amp * (0.5 + 0.5 * s))));
        set_bone(&mut theta, 19, rot_z(0.25 + 0.2 * amp * (0.5 - 0.5 * s) + wave.map_or(0.0, |w| 0.4 + 0.3 * w)));
        for (q, th) in theta.iter_mut().enumerate() {
            *th += style.offsets[q];
            for &(freq, phase, a) in &style.noise[q] {
                *th += a * libm::sin(freq * t + phase);
            }
        }
        let root_rot = rot_z(yaw + 0.08 * amp * s) * rot_x(-0.06 * amp - 0.35 * squat) * rot_y(0.04 * amp * s);
        out.push(RawFrame { x, y, root_rot, theta });
        // Forward is the body +Y axis: (−sin yaw, cos yaw).
        x += -libm::sin(yaw) * v * dt;
        y += libm::cos(yaw) * v * dt;
        yaw += omega * dt;
    }
    out
}

/// Skeleton, shape basis and a pose space fitted to the procedural gait family.
pub fn standard_model() -> SkeletonModel {
    let def = SkeletonDef::standard();
    let shape = ShapeBasis::standard(&def);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a17);
    let mut samples = Vec::new();
    for i in 0..60 {
        let kind = MotionKind::ALL[i % MotionKind::ALL.len()];
        let style = Style::sample(&mut rng);
        let speed = rng.random_range(0.6..1.6);
        samples.extend(raw_sequence(kind, 40, DEFAULT_FPS, speed, &style).into_iter().map(|f| f.theta));
    }
    let pose = PoseBasis::fit(&samples).expect("procedural corpus is large enough");
    SkeletonModel::new(def, shape, pose)
}

fn build_trajectory(raw: &[RawFrame], model: &SkeletonModel) -> (BodyTrajectory, Vec<BodyState>) {
    let beta = [0.0; SHAPE_DIM];
    let mut frames = Vec::with_capacity(raw.len());
    let mut states = Vec::with_capacity(raw.len());
    for r in raw {
        let z = model.pose.encode(&r.theta);
        let mut pose = FramePose { tau: [r.x, r.y, 0.0], phi: [0.0; 3], z }.with_root(&Vec3::new(r.x, r.y, 0.0), &r.root_rot);
        let s = forward_kinematics(&pose, &beta, model);
        let lowest = s.joint_pos.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        pose.tau[2] = FOOT_CLEARANCE - lowest;
        states.push(forward_kinematics(&pose, &beta, model));
        frames.push(pose);
    }
    (BodyTrajectory { frames, beta }, states)
}

/// Ground-truth body motion for a scene, with its forward-kinematics states.
pub fn generate_motion(spec: &SceneSpec, model: &SkeletonModel) -> Result<(BodyTrajectory, Vec<BodyState>)> {
    if spec.frames == 0 || !(spec.fps > 0.0) {
        return Err(Error::invalid("motion needs frames > 0 and fps > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let style = Style::sample(&mut rng);
    let raw = raw_sequence(spec.motion, spec.frames, spec.fps, spec.speed, &style);
    Ok(build_trajectory(&raw, model))
}

/// Mean horizontal root position of a motion.
pub fn subject_centroid(states: &[BodyState]) -> Vec3 {
    let n = states.len() as f64;
    let s = states.iter().fold(Vec3::zeros(), |acc, s| acc + s.joint_pos[0]);
    Vec3::new(s.x / n, s.y / n, 0.0)
}

/// Camera rigs around a motion. Static cameras aim at the centroid; pan and
/// orbit cameras track the root joint.
pub fn generate_cameras(spec: &SceneSpec, states: &[BodyState]) -> Result<Vec<CameraTrack>> {
    let centroid = subject_centroid(states);
    let mean_height = states.iter().map(|s| s.joint_pos[0].z).sum::<f64>() / states.len() as f64;
    let dt = 1.0 / spec.fps;
    spec.cameras
        .iter()
        .map(|c| {
            if !(c.radius > 0.0 && c.height > 0.0) {
                return Err(Error::invalid("camera radius and height must be positive"));
            }
            let frames = states
                .iter()
                .enumerate()
                .map(|(f, s)| {
                    let az = match c.kind {
                        CameraKind::Orbit => c.azimuth + c.angular_speed * f as f64 * dt,
                        _ => c.azimuth,
                    };
                    let eye = centroid + Vec3::new(c.radius * libm::cos(az), c.radius * libm::sin(az), c.height);
                    let target = match c.kind {
                        CameraKind::Static => Vec3::new(centroid.x, centroid.y, mean_height),
                        _ => s.joint_pos[0],
                    };
                    CameraPose::look_at(&eye, &target)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CameraTrack { intrinsics: spec.intrinsics, frames })
        })
        .collect()
}

/// Project all joints into every camera with Gaussian pixel noise, random
/// dropout and confidences uniform in `[0.5, 1]`.
pub fn render_keypoints(states: &[BodyState], cams: &[CameraTrack], noise: &NoiseSpec, seed: u64) -> Result<Observations> {
    if !(noise.pixel_sigma >= 0.0) || !(0.0..=1.0).contains(&noise.dropout) {
        return Err(Error::invalid("noise needs sigma >= 0 and dropout in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Observations::empty(states.len(), cams.len());
    for (t, s) in states.iter().enumerate() {
        for (c, cam) in cams.iter().enumerate() {
            let pose = &cam.frames[t];
            let rot = pose.rotation()?;
            let pos = pose.position();
            for n in 0..NUM_JOINTS {
                let nu: f64 = StandardNormal.sample(&mut rng);
                let nv: f64 = StandardNormal.sample(&mut rng);
                let drop = rng.random::<f64>() < noise.dropout;
                let conf = rng.random_range(0.5..=1.0);
                let kp = match project(&rot, &pos, &cam.intrinsics, &s.joint_pos[n]) {
                    Ok(px) => Keypoint {
                        u: px.u + noise.pixel_sigma * nu,
                        v: px.v + noise.pixel_sigma * nv,
                        w: if drop { 0.0 } else { conf },
                    },
                    Err(_) => Keypoint { u: 0.0, v: 0.0, w: 0.0 },
                };
                obs.set(t, c, n, kp);
            }
        }
    }
    Ok(obs)
}

/// A complete generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub trajectory: BodyTrajectory,
    pub states: Vec<BodyState>,
    pub cameras: Vec<CameraTrack>,
    pub observations: Observations,
}

pub fn generate_scene(spec: &SceneSpec, model: &SkeletonModel) -> Result<Scene> {
    spec.validate()?;
    let (trajectory, states) = generate_motion(spec, model)?;
    let cameras = generate_cameras(spec, &states)?;
    let observations = render_keypoints(&states, &cameras, &spec.noise, spec.seed ^ 0x6b65_7970)?;
    Ok(Scene { spec: spec.clone(), trajectory, states, cameras, observations })
}

/// Canonical windows drawn from random procedural motions at β = 0.
pub fn build_prior_corpus(n_windows: usize, seed: u64, model: &SkeletonModel) -> Result<Vec<MotionWindow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_windows);
    while corpus.len() < n_windows {
        let kind = MotionKind::ALL[rng.random_range(0..MotionKind::ALL.len())];
        let len = WINDOW_LEN + rng.random_range(0..=30);
        let speed = rng.random_range(0.6..1.6);
        let style = Style::sample(&mut rng);
        let raw = raw_sequence(kind, len, DEFAULT_FPS, speed, &style);
        let (_, states) = build_trajectory(&raw, model);
        let start = rng.random_range(0..=len - WINDOW_LEN);
        let (w, _) = canonicalize_states(&states[start..start + WINDOW_LEN])?;
        corpus.push(w);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::kinematics::bone_lengths;
    use crate::motion_prior::fit_pca_prior;

    #[test]
    fn turn_in_place_keeps_root_projection() {
        let model = standard_model();
        let spec = SceneSpec { motion: MotionKind::TurnInPlace, frames: 60, ..SceneSpec::default() };
        let (traj, _) = generate_motion(&spec, &model).unwrap();
        for f in &traj.frames {
            assert!(f.tau[0].abs() < 1e-6 && f.tau[1].abs() < 1e-6);
        }
    }

    #[test]
    fn walk_line_speed() {
        let model = standard_model();
        let spec = SceneSpec { motion: MotionKind::WalkLine, frames: 30, speed: 1.0, ..SceneSpec::default() };
        let (traj, _) = generate_motion(&spec, &model).unwrap();
        let (a, b) = (traj.frames[0].tau, traj.frames[29].tau);
        let d = libm::hypot(b[0] - a[0], b[1] - a[1]);
        assert!((d - 1.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn motions_are_above_ground_and_consistent() {
        let model = standard_model();
        for (i, kind) in MotionKind::ALL.iter().enumerate() {
            let spec = SceneSpec { motion: *kind, frames: 50, seed: i as u64, ..SceneSpec::default() };
            let (traj, states) = generate_motion(&spec, &model).unwrap();
            let len = bone_lengths(&traj.beta, &model);
            for s in &states {
                assert!(s.joint_pos.iter().all(|p| p.z >= FOOT_CLEARANCE - 1e-9));
                for j in 1..NUM_JOINTS {
                    let d = (s.joint_pos[j] - s.joint_pos[model.def.parents[j].unwrap()]).norm();
                    assert!((d - len[j - 1]).abs() < 1e-7);
                }
            }
            assert!(traj.frames.iter().all(|f| f.tau[2] > 0.0 && f.is_canonical()));
            let again = generate_motion(&spec, &model).unwrap().0;
            assert_eq!(again, traj);
        }
    }

    #[test]
    fn orbit_radius_and_look_at() {
        let model = standard_model();
        let spec = SceneSpec {
            motion: MotionKind::WalkCircle,
            frames: 60,
            cameras: vec![CameraSpec::new(CameraKind::Orbit, 0.4), CameraSpec::new(CameraKind::Pan, 2.0)],
            ..SceneSpec::default()
        };
        let (_, states) = generate_motion(&spec, &model).unwrap();
        let cams = generate_cameras(&spec, &states).unwrap();
        let c = subject_centroid(&states);
        let k = spec.intrinsics;
        for (t, s) in states.iter().enumerate() {
            let p = cams[0].frames[t].position();
            assert!((libm::hypot(p.x - c.x, p.y - c.y) - 5.0).abs() < 1e-6);
            for cam in &cams {
                let pose = cam.frames[t];
                assert!(pose.p[2] > 0.0);
                let px = project(&pose.rotation().unwrap(), &pose.position(), &k, &s.joint_pos[0]).unwrap();
                assert!((px.u - k.cx).abs() < 2.0 * k.cx / 6.0 && (px.v - k.cy).abs() < 2.0 * k.cy / 6.0);
            }
        }
    }

    #[test]
    fn static_cameras_do_not_move() {
        let model = standard_model();
        let spec = SceneSpec { frames: 30, cameras: standard_rig(2, 0), ..SceneSpec::default() };
        let (_, states) = generate_motion(&spec, &model).unwrap();
        let cams = generate_cameras(&spec, &states).unwrap();
        for cam in &cams {
            assert!(cam.frames.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn keypoint_noise_statistics() {
        let model = standard_model();
        let spec = SceneSpec { frames: 120, ..SceneSpec::default() };
        let (_, states) = generate_motion(&spec, &model).unwrap();
        let cams = generate_cameras(&spec, &states).unwrap();
        let clean = render_keypoints(&states, &cams, &NoiseSpec { pixel_sigma: 0.0, dropout: 0.0 }, 1).unwrap();
        let noisy = render_keypoints(&states, &cams, &NoiseSpec { pixel_sigma: 2.0, dropout: 0.0 }, 2).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for t in 0..120 {
            for c in 0..cams.len() {
                for j in 0..NUM_JOINTS {
                    let (a, b) = (clean.get(t, c, j), noisy.get(t, c, j));
                    assert!(a.w >= 0.5 && a.w <= 1.0);
                    sum += libm::hypot(a.u - b.u, a.v - b.v);
                    n += 1;
                }
            }
        }
        assert!(n >= 10_000);
        let expect = 2.0 * libm::sqrt(PI / 2.0);
        assert!((sum / n as f64 - expect).abs() < 0.05 * expect, "{}", sum / n as f64);
        let dropped = render_keypoints(&states, &cams, &NoiseSpec { pixel_sigma: 0.0, dropout: 1.0 }, 3).unwrap();
        assert!(dropped.keypoints().iter().all(|k| k.w == 0.0));
    }

    #[test]
    fn corpus_windows_are_canonical() {
        let model = standard_model();
        let corpus = build_prior_corpus(50, 3, &model).unwrap();
        for w in &corpus {
            let a = w.anchor().unwrap();
            assert!(a.x.abs() < 1e-9 && a.y.abs() < 1e-9 && a.yaw.abs() < 1e-9);
        }
        assert_eq!(build_prior_corpus(50, 3, &model).unwrap(), corpus);
    }

    #[test]
    fn pca_explains_most_variance() {
        let model = standard_model();
        let corpus = build_prior_corpus(500, 17, &model).unwrap();
        let prior = fit_pca_prior(&corpus, 64).unwrap();
        let mean = MotionWindow { data: prior.mean.clone() };
        let a = mean.anchor().unwrap();
        assert!(a.x.abs() < 1e-9 && a.y.abs() < 1e-9 && a.yaw.abs() < 1e-6);
        assert!(prior.explained_total() >= 0.90, "{}", prior.explained_total());
    }
}
