#![allow(dead_code)]

use std::sync::OnceLock;

use anchorcap_core::camera::{CameraPose, CameraTrack};
use anchorcap_core::kinematics::{BodyTrajectory, SkeletonModel};
use anchorcap_core::motion_prior::{fit_pca_prior, PriorModel};
use anchorcap_core::objective::{LossWeights, Observations};
use anchorcap_core::synth::{self, generate_scene, MotionKind, NoiseSpec, Scene, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn model() -> &'static SkeletonModel {
    static M: OnceLock<SkeletonModel> = OnceLock::new();
    M.get_or_init(synth::standard_model)
}

pub fn prior() -> &'static PriorModel {
    static P: OnceLock<PriorModel> = OnceLock::new();
    P.get_or_init(|| {
        let corpus = synth::build_prior_corpus(400, 7, model()).unwrap();
        PriorModel::Pca(fit_pca_prior(&corpus, 32).unwrap())
    })
}

pub fn scene(kind: MotionKind, frames: usize, cameras: Vec<synth::CameraSpec>, sigma: f64, seed: u64) -> Scene {
    let spec = SceneSpec {
        motion: kind,
        frames,
        cameras,
        noise: NoiseSpec { pixel_sigma: sigma, dropout: 0.0 },
        seed,
        ..SceneSpec::default()
    };
    generate_scene(&spec, model()).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng) -> LossWeights {
    LossWeights {
        w_2d: rng.random_range(0.1..2.0),
        w_m: rng.random_range(0.1..2.0),
        w_3ds: rng.random_range(0.1..2.0),
        w_cos: rng.random_range(0.1..2.0),
        w_cps: rng.random_range(0.1..2.0),
        w_beta: rng.random_range(0.1..2.0),
        w_z: rng.random_range(0.1..2.0),
        w_gp: rng.random_range(0.1..2.0),
        w_cgp: rng.random_range(0.1..2.0),
    }
}

/// A scene plus a perturbed estimate around its ground truth. Some states
/// push the body and one camera clearly below the floor so the hinge terms
/// are active.
pub fn random_state(seed: u64, frames: usize) -> (BodyTrajectory, Vec<CameraTrack>, Observations) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = MotionKind::ALL[rng.random_range(0..MotionKind::ALL.len())];
    let cams = synth::standard_rig(1, 1);
    let s = scene(kind, frames, cams, 2.0, seed);
    let mut traj = s.trajectory.clone();
    let sink = rng.random_bool(0.3);
    for f in traj.frames.iter_mut() {
        for i in 0..3 {
            f.tau[i] += rng.random_range(-0.05..0.05);
            f.phi[i] += rng.random_range(-0.05..0.05);
        }
        if sink {
            f.tau[2] -= 0.4;
        }
        for z in f.z.iter_mut() {
            *z += rng.random_range(-0.3..0.3);
        }
    }
    for b in traj.beta.iter_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    let mut cams = s.cameras.clone();
    for (c, cam) in cams.iter_mut().enumerate() {
        for pose in cam.frames.iter_mut() {
            let mut r = pose.r;
            let scale = rng.random_range(0.7..1.4);
            for v in r.iter_mut() {
                *v = *v * scale + rng.random_range(-0.05..0.05);
            }
            let mut p = pose.p;
            for v in p.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            if sink && c == 0 {
                p[2] = -0.3 + rng.random_range(-0.05..0.05);
            }
            *pose = CameraPose { r, p };
        }
    }
    (traj, cams, s.observations)
}
