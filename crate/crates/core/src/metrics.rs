//! Accuracy of an estimate against ground truth: camera position and
//! orientation, root position and orientation, root-aligned joint error and
//! bone-length error, each raw and after ground-plane gauge alignment.

use alloc::vec::Vec;

use crate::camera::{CameraTrack, rot6d_to_matrix};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, PlanarTransform, Vec3};
use crate::kinematics::{bone_lengths, forward_kinematics, BodyTrajectory, FramePose, SkeletonModel, NUM_BONES};
use crate::pipeline::{transform_segment, Segment};

/// Leading frames left out of every metric.
pub const DEFAULT_SKIP_FRAMES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat { mean, std: libm::sqrt(var) }
    }
}

fn check_frames(est: usize, gt: usize, skip: usize) -> Result<()> {
    if est != gt {
        return Err(Error::invalid("estimate and ground truth differ in length"));
    }
    if skip >= est {
        return Err(Error::invalid("no frames left after skipping"));
    }
    Ok(())
}

fn check_cams(est: &[CameraTrack], gt: &[CameraTrack], skip: usize) -> Result<()> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::invalid("camera counts differ or are zero"));
    }
    for (a, b) in est.iter().zip(gt) {
        check_frames(a.len(), b.len(), skip)?;
    }
    Ok(())
}

/// Camera position error in metres over every camera and evaluated frame.
pub fn mcpe(est: &[CameraTrack], gt: &[CameraTrack], skip: usize) -> Result<Stat> {
    check_cams(est, gt, skip)?;
    let d: Vec<f64> = est
        .iter()
        .zip(gt)
        .flat_map(|(a, b)| a.frames[skip..].iter().zip(&b.frames[skip..]).map(|(p, q)| (p.position() - q.position()).norm()))
        .collect();
    Ok(Stat::of(&d))
}

/// Camera orientation error in radians (geodesic angle).
pub fn mcoe(est: &[CameraTrack], gt: &[CameraTrack], skip: usize) -> Result<Stat> {
    check_cams(est, gt, skip)?;
    let mut d = Vec::new();
    for (a, b) in est.iter().zip(gt) {
        for (p, q) in a.frames[skip..].iter().zip(&b.frames[skip..]) {
            d.push(geodesic_angle(&rot6d_to_matrix(&p.r)?, &rot6d_to_matrix(&q.r)?));
        }
    }
    Ok(Stat::of(&d))
}

/// Root position error in metres.
pub fn mpe(est: &BodyTrajectory, gt: &BodyTrajectory, skip: usize) -> Result<Stat> {
    check_frames(est.len(), gt.len(), skip)?;
    let d: Vec<f64> = est.frames[skip..]
        .iter()
        .zip(&gt.frames[skip..])
        .map(|(a, b)| (a.root_position() - b.root_position()).norm())
        .collect();
    Ok(Stat::of(&d))
}

/// Root orientation error in radians.
pub fn moe(est: &BodyTrajectory, gt: &BodyTrajectory, skip: usize) -> Result<Stat> {
    check_frames(est.len(), gt.len(), skip)?;
    let d: Vec<f64> = est.frames[skip..]
        .iter()
        .zip(&gt.frames[skip..])
        .map(|(a, b)| geodesic_angle(&a.root_rotation(), &b.root_rotation()))
        .collect();
    Ok(Stat::of(&d))
}

/// Mean joint distance after zeroing root translation, root orientation and
/// shape on both sides; per-frame values feed the statistics.
pub fn ra_mpjpe(est: &BodyTrajectory, gt: &BodyTrajectory, model: &SkeletonModel, skip: usize) -> Result<Stat> {
    check_frames(est.len(), gt.len(), skip)?;
    let zero = [0.0; crate::kinematics::SHAPE_DIM];
    let d: Vec<f64> = est.frames[skip..]
        .iter()
        .zip(&gt.frames[skip..])
        .map(|(a, b)| {
            let sa = forward_kinematics(&FramePose { z: a.z, ..FramePose::default() }, &zero, model);
            let sb = forward_kinematics(&FramePose { z: b.z, ..FramePose::default() }, &zero, model);
            sa.joint_pos.iter().zip(&sb.joint_pos).map(|(p, q)| (p - q).norm()).sum::<f64>() / sa.joint_pos.len() as f64
        })
        .collect();
    Ok(Stat::of(&d))
}

/// Bone-length error in metres over the 21 bones.
pub fn shape_error(est: &[f64; crate::kinematics::SHAPE_DIM], gt: &[f64; crate::kinematics::SHAPE_DIM], model: &SkeletonModel) -> Stat {
    let (a, b) = (bone_lengths(est, model), bone_lengths(gt, model));
    let d: Vec<f64> = (0..NUM_BONES).map(|i| (a[i] - b[i]).abs()).collect();
    Stat::of(&d)
}

/// Least-squares planar rigid transform taking the estimated root ground
/// track onto the ground-truth one over frames `skip..`.
pub fn fit_gauge(est: &BodyTrajectory, gt: &BodyTrajectory, skip: usize) -> Result<PlanarTransform> {
    check_frames(est.len(), gt.len(), skip)?;
    let n = (est.len() - skip) as f64;
    let pts = |t: &BodyTrajectory| -> Vec<(f64, f64)> { t.frames[skip..].iter().map(|f| (f.tau[0], f.tau[1])).collect() };
    let (a, b) = (pts(est), pts(gt));
    let ca = a.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0 / n, s.1 + p.1 / n));
    let cb = b.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0 / n, s.1 + p.1 / n));
    let (mut sdot, mut scross) = (0.0, 0.0);
    for (p, q) in a.iter().zip(&b) {
        let (ax, ay) = (p.0 - ca.0, p.1 - ca.1);
        let (bx, by) = (q.0 - cb.0, q.1 - cb.1);
        sdot += ax * bx + ay * by;
        scross += ax * by - ay * bx;
    }
    let yaw = if sdot == 0.0 && scross == 0.0 { 0.0 } else { libm::atan2(scross, sdot) };
    let r = PlanarTransform { yaw, tx: 0.0, ty: 0.0 }.apply_point(&Vec3::new(ca.0, ca.1, 0.0));
    Ok(PlanarTransform { yaw, tx: cb.0 - r.x, ty: cb.1 - r.y })
}

/// Estimate moved into the ground-truth gauge, with the transform used.
///
/// Falls back to the identity when the least-squares transform would raise
/// the mean root position error on the evaluated frames.
pub fn gauge_align(
    est: &BodyTrajectory,
    cams: &[CameraTrack],
    gt: &BodyTrajectory,
    skip: usize,
) -> Result<(BodyTrajectory, Vec<CameraTrack>, PlanarTransform)> {
    let tf = fit_gauge(est, gt, skip)?;
    let moved = transform_segment(&Segment { start: 0, trajectory: est.clone(), cameras: cams.to_vec() }, &tf);
    if mpe(&moved.trajectory, gt, skip)?.mean > mpe(est, gt, skip)?.mean {
        return Ok((est.clone(), cams.to_vec(), PlanarTransform::IDENTITY));
    }
    Ok((moved.trajectory, moved.cameras, tf))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Variant {
    Raw,
    Aligned,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Aligned => "aligned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricRow {
    pub metric: &'static str,
    pub stat: Stat,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    pub gauge: PlanarTransform,
}

impl Evaluation {
    pub fn get(&self, metric: &str, variant: Variant) -> Option<Stat> {
        self.rows.iter().find(|r| r.metric == metric && r.variant == variant).map(|r| r.stat)
    }
}

pub const METRIC_NAMES: [&str; 6] = ["mcpe", "mcoe", "mpe", "moe", "ra_mpjpe", "shape_error"];

/// Every metric, raw and gauge-aligned.
pub fn evaluate(
    est: &BodyTrajectory,
    est_cams: &[CameraTrack],
    gt: &BodyTrajectory,
    gt_cams: &[CameraTrack],
    model: &SkeletonModel,
    skip: usize,
) -> Result<Evaluation> {
    let (aligned, aligned_cams, gauge) = gauge_align(est, est_cams, gt, skip)?;
    let mut rows = Vec::with_capacity(12);
    for (variant, traj, cams) in [(Variant::Raw, est, est_cams), (Variant::Aligned, &aligned, aligned_cams.as_slice())] {
        let stats = [
            mcpe(cams, gt_cams, skip)?,
            mcoe(cams, gt_cams, skip)?,
            mpe(traj, gt, skip)?,
            moe(traj, gt, skip)?,
            ra_mpjpe(traj, gt, model, skip)?,
            shape_error(&traj.beta, &gt.beta, model),
        ];
        for (metric, stat) in METRIC_NAMES.iter().zip(stats) {
            rows.push(MetricRow { metric, stat, variant });
        }
    }
    Ok(Evaluation { rows, gauge })
}
