mod common;

use anchorcap_core::camera::{CameraPose, CameraTrack};
use anchorcap_core::geometry::{rot_z, Mat3, PlanarTransform, Vec3};
use anchorcap_core::kinematics::{forward_kinematics, BodyTrajectory, FramePose};
use anchorcap_core::metrics::{
    evaluate, fit_gauge, gauge_align, mcoe, mcpe, moe, mpe, ra_mpjpe, shape_error, Stat, Variant, METRIC_NAMES,
};
use anchorcap_core::pipeline::{transform_segment, Segment};
use anchorcap_core::synth::{standard_rig, MotionKind};
use nalgebra::{Rotation3, Unit, UnitQuaternion};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{model, scene};

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Rotation3::from_axis_angle(&Unit::new_normalize(axis + Vec3::new(1e-3, 0.0, 0.0)), rng.random_range(0.0..3.1)).into_inner()
}

fn track(rots: &[Mat3], ps: &[Vec3]) -> CameraTrack {
    let frames = rots.iter().zip(ps).map(|(r, p)| CameraPose::from_matrix(r, p)).collect();
    CameraTrack { intrinsics: anchorcap_core::camera::Intrinsics::new(1000.0, 1000.0, 960.0, 540.0).unwrap(), frames }
}

fn quat_angle(a: &Mat3, b: &Mat3) -> f64 {
    let qa = UnitQuaternion::from_matrix(a);
    let qb = UnitQuaternion::from_matrix(b);
    qa.angle_to(&qb)
}

#[test]
fn population_statistics() {
    let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
    assert!(Stat::of(&[]).mean.is_nan());
}

#[test]
fn camera_position_error_examples() {
    let s = scene(MotionKind::WalkLine, 30, standard_rig(3, 1), 0.0, 1);
    assert_eq!(mcpe(&s.cameras, &s.cameras, 10).unwrap().mean, 0.0);
    let mut est = s.cameras.clone();
    for p in est[1].frames.iter_mut() {
        p.p[0] += 0.1;
    }
    let m = mcpe(&est, &s.cameras, 10).unwrap();
    assert!((m.mean - 0.1 / 4.0).abs() < 1e-12, "{}", m.mean);
}

#[test]
fn camera_position_error_matches_direct_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (c, t, skip) = (3, 15, 4);
    let mk = |rng: &mut ChaCha8Rng| -> Vec<CameraTrack> {
        (0..c)
            .map(|_| {
                let rots: Vec<Mat3> = (0..t).map(|_| random_rotation(rng)).collect();
                let ps: Vec<Vec3> = (0..t).map(|_| Vec3::new(rng.random(), rng.random(), rng.random()) * 4.0).collect();
                track(&rots, &ps)
            })
            .collect()
    };
    let (a, b) = (mk(&mut rng), mk(&mut rng));
    let mut sum = 0.0;
    let mut count = 0.0;
    for ci in 0..c {
        for ti in skip..t {
            let (p, q) = (a[ci].frames[ti].p, b[ci].frames[ti].p);
            sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
            count += 1.0;
        }
    }
    assert!((mcpe(&a, &b, skip).unwrap().mean - sum / count).abs() < 1e-12);
    let mut angles = Vec::new();
    for ci in 0..c {
        for ti in skip..t {
            let ra = anchorcap_core::camera::rot6d_to_matrix(&a[ci].frames[ti].r).unwrap();
            let rb = anchorcap_core::camera::rot6d_to_matrix(&b[ci].frames[ti].r).unwrap();
            angles.push(quat_angle(&ra, &rb));
        }
    }
    let oracle = angles.iter().sum::<f64>() / angles.len() as f64;
    assert!((mcoe(&a, &b, skip).unwrap().mean - oracle).abs() < 1e-9);
}

#[test]
fn root_errors_examples() {
    let s = scene(MotionKind::WalkCircle, 30, standard_rig(1, 0), 0.0, 2);
    let gt = &s.trajectory;
    assert_eq!(mpe(gt, gt, 10).unwrap().mean, 0.0);
    assert_eq!(moe(gt, gt, 10).unwrap().mean, 0.0);
    let mut shifted = gt.clone();
    for f in shifted.frames.iter_mut() {
        f.tau[1] += 0.05;
    }
    let m = mpe(&shifted, gt, 10).unwrap();
    assert!((m.mean - 0.05).abs() < 1e-12 && m.std < 1e-12);
    let turned = BodyTrajectory {
        frames: gt
            .frames
            .iter()
            .map(|f| f.with_root(&f.root_position(), &(f.root_rotation() * rot_z(0.3))))
            .collect(),
        beta: gt.beta,
    };
    assert!((moe(&turned, gt, 10).unwrap().mean - 0.3).abs() < 1e-9);
}

#[test]
fn skipping_all_frames_is_rejected() {
    let s = scene(MotionKind::WalkLine, 25, standard_rig(1, 0), 0.0, 2);
    assert!(mpe(&s.trajectory, &s.trajectory, 25).is_err());
    assert!(mcpe(&s.cameras, &s.cameras[..0], 0).is_err());
}

#[test]
fn ra_mpjpe_single_frame_difference() {
    let s = scene(MotionKind::CrouchWave, 25, standard_rig(1, 0), 0.0, 4);
    let gt = &s.trajectory;
    let mut est = gt.clone();
    est.frames[13].z[0] += 1.5;
    est.frames[13].z[5] -= 0.7;
    let zero = [0.0; 10];
    let pose = |z| FramePose { z, ..FramePose::default() };
    let a = forward_kinematics(&pose(est.frames[13].z), &zero, model());
    let b = forward_kinematics(&pose(gt.frames[13].z), &zero, model());
    let d = a.joint_pos.iter().zip(&b.joint_pos).map(|(p, q)| (p - q).norm()).sum::<f64>() / 22.0;
    let n = 15.0;
    let m = ra_mpjpe(&est, gt, model(), 10).unwrap();
    assert!((m.mean - d / n).abs() < 1e-12);
    let var = (d - d / n).powi(2) / n + (n - 1.0) * (d / n).powi(2) / n;
    assert!((m.std - var.sqrt()).abs() < 1e-12);
}

#[test]
fn shape_error_of_unit_step() {
    let beta = [0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.2, 0.0, 0.1, -0.1];
    let mut other = beta;
    other[0] += 1.0;
    let oracle = model().shape.rows.iter().map(|r| r[0].abs()).sum::<f64>() / 21.0;
    assert!((shape_error(&other, &beta, model()).mean - oracle).abs() < 1e-12);
    assert_eq!(shape_error(&beta, &beta, model()).mean, 0.0);
}

#[test]
fn gauge_of_truth_is_identity() {
    let s = scene(MotionKind::Composite, 40, standard_rig(1, 1), 0.0, 5);
    let tf = fit_gauge(&s.trajectory, &s.trajectory, 10).unwrap();
    assert!(tf.yaw.abs() < 1e-12 && tf.tx.abs() < 1e-9 && tf.ty.abs() < 1e-9, "{tf:?}");
}

#[test]
fn gauge_recovers_a_thirty_degree_yaw() {
    let s = scene(MotionKind::WalkCircle, 40, standard_rig(1, 1), 0.0, 6);
    let seg = Segment { start: 0, trajectory: s.trajectory.clone(), cameras: s.cameras.clone() };
    let applied = PlanarTransform { yaw: 30f64.to_radians(), tx: 1.5, ty: -2.0 };
    let moved = transform_segment(&seg, &applied);
    let tf = fit_gauge(&moved.trajectory, &s.trajectory, 10).unwrap();
    assert!((tf.yaw + 30f64.to_radians()).abs() < 1e-9, "{}", tf.yaw);
    let (aligned, cams, _) = gauge_align(&moved.trajectory, &moved.cameras, &s.trajectory, 10).unwrap();
    assert!(mpe(&aligned, &s.trajectory, 10).unwrap().mean < 1e-9);
    assert!(mcpe(&cams, &s.cameras, 10).unwrap().mean < 1e-9);
    assert!(mcoe(&cams, &s.cameras, 10).unwrap().mean < 1e-7);
}

#[test]
fn evaluation_lists_every_metric_twice() {
    let s = scene(MotionKind::WalkLine, 30, standard_rig(1, 1), 0.0, 7);
    let ev = evaluate(&s.trajectory, &s.cameras, &s.trajectory, &s.cameras, model(), 10).unwrap();
    assert_eq!(ev.rows.len(), 12);
    for name in METRIC_NAMES {
        for v in [Variant::Raw, Variant::Aligned] {
            assert!(ev.get(name, v).unwrap().mean.abs() < 1e-7, "{name}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mcoe_equals_the_applied_angle(seed in 0u64..1_000_000, theta in 0.0f64..3.14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_rotation(&mut rng);
        let axis = Unit::new_normalize(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.5));
        let d = Rotation3::from_axis_angle(&axis, theta).into_inner();
        let p = [Vec3::zeros()];
        let a = [track(&[r], &p)];
        let b = [track(&[r * d], &p)];
        let m = mcoe(&a, &b, 0).unwrap().mean;
        prop_assert!((m - theta).abs() < 1e-9, "{} vs {}", m, theta);
        prop_assert_eq!(m, mcoe(&b, &a, 0).unwrap().mean);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&m));
    }

    #[test]
    fn ra_mpjpe_ignores_root_and_shape(seed in 0u64..50, dx in -3.0f64..3.0, yaw in -3.0f64..3.0, b0 in -2.0f64..2.0) {
        let s = scene(MotionKind::WalkCircle, 25, standard_rig(1, 0), 0.0, seed % 4);
        let gt = &s.trajectory;
        let mut est = gt.clone();
        for (i, f) in est.frames.iter_mut().enumerate() {
            f.z[i % 32] += 0.4;
        }
        let base = ra_mpjpe(&est, gt, model(), 5).unwrap();
        let perturb = |t: &BodyTrajectory| BodyTrajectory {
            frames: t.frames.iter().map(|f| {
                let p = f.root_position() + Vec3::new(dx, -dx, 0.3);
                f.with_root(&p, &(rot_z(yaw) * f.root_rotation()))
            }).collect(),
            beta: [b0; 10],
        };
        let moved = ra_mpjpe(&perturb(&est), &perturb(gt), model(), 5).unwrap();
        prop_assert!((moved.mean - base.mean).abs() < 1e-12);
        prop_assert!((moved.std - base.std).abs() < 1e-12);
    }

    #[test]
    fn alignment_never_raises_mpe(seed in 0u64..1000, yaw in -3.0f64..3.0, noise in 0.0f64..0.5) {
        let s = scene(MotionKind::Composite, 30, standard_rig(1, 1), 0.0, seed % 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = Segment { start: 0, trajectory: s.trajectory.clone(), cameras: s.cameras.clone() };
        let mut est = transform_segment(&seg, &PlanarTransform { yaw, tx: 0.7, ty: 0.2 });
        for f in est.trajectory.frames.iter_mut() {
            for v in f.tau.iter_mut() {
                *v += rng.random_range(-noise..=noise);
            }
        }
        let (aligned, _, _) = gauge_align(&est.trajectory, &est.cameras, &s.trajectory, 10).unwrap();
        prop_assert!(mpe(&aligned, &s.trajectory, 10).unwrap().mean <= mpe(&est.trajectory, &s.trajectory, 10).unwrap().mean);
    }
}
