//! Chunked estimation: initialise, optimise 25-frame chunks in three phases,
//! stitch them back together level by level, and refine the full sequence.

use alloc::vec::Vec;

use crate::camera::{pnp_resect, CameraPose, CameraTrack, Intrinsics, Pixel};
use crate::error::{Error, Result};
use crate::geometry::{exp_so3, log_so3, Anchor, PlanarTransform, Vec3};
use crate::kinematics::{forward_kinematics, BodyTrajectory, FramePose, SkeletonModel, NUM_JOINTS, SHAPE_DIM};
use crate::motion_prior::{PriorModel, WINDOW_LEN};
use crate::objective::{LossWeights, Objective, Observations, ParamLayout, ParamMask};
use crate::optim::{minimize, MinimizeConfig, MinimizeReport};

/// Iteration caps for the three optimisation phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PhaseCaps {
    pub cameras: usize,
    pub roots: usize,
    pub full: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FitConfig {
    pub chunk_len: usize,
    pub group_size: usize,
    /// Iteration cap of the per-frame refinement after initialisation; 0 skips it.
    pub init_iters: usize,
    pub chunk_iters: PhaseCaps,
    pub segment_iters: PhaseCaps,
    pub final_iters: PhaseCaps,
    pub optimizer: MinimizeConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            chunk_len: WINDOW_LEN,
            group_size: 4,
            init_iters: 100,
            chunk_iters: PhaseCaps { cameras: 100, roots: 100, full: 300 },
            segment_iters: PhaseCaps { cameras: 50, roots: 50, full: 150 },
            final_iters: PhaseCaps { cameras: 100, roots: 100, full: 1500 },
            optimizer: MinimizeConfig::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_len != WINDOW_LEN {
            return Err(Error::invalid("chunk_len must equal the motion window length (25)"));
        }
        if self.group_size < 2 {
            return Err(Error::invalid("group_size must be at least 2"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Phase {
    Cameras,
    CamerasAndRoots,
    All,
}

impl Phase {
    pub const ORDER: [Phase; 3] = [Phase::Cameras, Phase::CamerasAndRoots, Phase::All];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Cameras => "cameras",
            Phase::CamerasAndRoots => "cameras+roots",
            Phase::All => "all",
        }
    }

    /// Free parameters for this phase; the first frame's root stays fixed.
    pub fn mask(self, layout: &ParamLayout) -> ParamMask {
        let m = ParamMask::none(layout).free_cameras(layout);
        match self {
            Phase::Cameras => m,
            Phase::CamerasAndRoots => m.free_roots(layout).freeze_pivot(layout),
            Phase::All => m.free_roots(layout).free_pose_and_shape(layout).freeze_pivot(layout),
        }
    }

    fn cap(self, caps: &PhaseCaps) -> usize {
        match self {
            Phase::Cameras => caps.cameras,
            Phase::CamerasAndRoots => caps.roots,
            Phase::All => caps.full,
        }
    }
}

/// Where in the schedule an optimisation ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "stage", rename_all = "kebab-case"))]
pub enum Stage {
    Chunk { index: usize },
    Segment { level: usize, index: usize },
    Final,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseTrace {
    pub stage: Stage,
    pub phase: Phase,
    /// First global frame index of the optimised segment.
    pub start: usize,
    pub frames: usize,
    pub report: MinimizeReport,
    /// `[τ, φ]` of the segment's first frame before and after the phase.
    pub pivot_before: [f64; 6],
    pub pivot_after: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnostics {
    /// Global `(start, len)` of every chunk.
    pub chunks: Vec<(usize, usize)>,
    pub stitch_levels: usize,
    /// Anchor distance at every junction of every stitch.
    pub junction_distances: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitResult {
    pub trajectory: BodyTrajectory,
    pub cameras: Vec<CameraTrack>,
    pub traces: Vec<PhaseTrace>,
    pub diagnostics: Diagnostics,
}

/// A failed fit with whatever was finished before the error.
#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub error: Error,
    pub traces: Vec<PhaseTrace>,
    pub diagnostics: Diagnostics,
}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        FitFailure { error, traces: Vec::new(), diagnostics: Diagnostics::default() }
    }
}

/// Runs independent jobs, returning results in job order.
pub trait SegmentExecutor {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl SegmentExecutor for Sequential {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..jobs).map(f).collect()
    }
}

/// A contiguous piece of the sequence with its own world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub trajectory: BodyTrajectory,
    pub cameras: Vec<CameraTrack>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.len()
    }
}

/// Start frames of the chunks covering `frames`: stride `len − 1`, with the
/// last chunk shifted back to end on the final frame.
pub fn chunk_starts(frames: usize, len: usize) -> Result<Vec<usize>> {
    if frames < len || len < 2 {
        return Err(Error::invalid("sequence shorter than one chunk"));
    }
    let stride = len - 1;
    let n = (frames - len).div_ceil(stride) + 1;
    let mut starts: Vec<usize> = (0..n).map(|k| k * stride).collect();
    if let Some(last) = starts.last_mut() {
        *last = frames - len;
    }
    Ok(starts)
}

fn confident(obs: &Observations, t: usize, c: usize) -> (Vec<Pixel>, Vec<f64>) {
    (0..NUM_JOINTS)
        .map(|n| {
            let k = obs.get(t, c, n);
            (Pixel { u: k.u, v: k.v }, k.weight())
        })
        .unzip()
}

/// Initial body and cameras: mean prior motion, zero pose latents and shape,
/// and per-frame PnP against the resulting joints.
pub fn initialize(
    obs: &Observations,
    intrinsics: &[Intrinsics],
    prior: &PriorModel,
    model: &SkeletonModel,
) -> Result<(BodyTrajectory, Vec<CameraTrack>)> {
    obs.validate()?;
    if intrinsics.len() != obs.cameras {
        return Err(Error::invalid("number of intrinsics differs from observation cameras"));
    }
    let mean = prior.mean_motion();
    let track = mean.root_track()?;
    let mut roots = Vec::with_capacity(obs.frames);
    roots.push(track[0]);
    let first = Anchor::from_root(&track[0].0, &track[0].1).ok_or(Error::DegenerateHeading)?;
    while roots.len() < obs.frames {
        let (p, r) = roots[roots.len() - 1];
        let here = Anchor::from_root(&p, &r).ok_or(Error::DegenerateHeading)?;
        let tf = PlanarTransform::between(&first, &here);
        for (p, r) in track.iter().skip(1) {
            if roots.len() == obs.frames {
                break;
            }
            roots.push((tf.apply_point(p), tf.apply_rotation(r)));
        }
    }
    let frames: Vec<FramePose> = roots
        .iter()
        .map(|(p, r)| {
            let phi = log_so3(r);
            FramePose { tau: [p.x, p.y, p.z], phi: [phi.x, phi.y, phi.z], ..FramePose::default() }
        })
        .collect();
    let traj = BodyTrajectory { frames, beta: [0.0; SHAPE_DIM] };
    let joints: Vec<[Vec3; NUM_JOINTS]> =
        traj.frames.iter().map(|f| forward_kinematics(f, &traj.beta, model).joint_pos).collect();

    let mut cams = Vec::with_capacity(obs.cameras);
    for (c, k) in intrinsics.iter().enumerate() {
        let poses: Vec<Option<CameraPose>> = (0..obs.frames)
            .map(|t| {
                let (px, w) = confident(obs, t, c);
                pnp_resect(&joints[t], &px, &w, k).ok().map(|r| r.pose)
            })
            .collect();
        let ok: Vec<usize> = (0..obs.frames).filter(|&t| poses[t].is_some()).collect();
        if ok.is_empty() {
            return Err(Error::InitializationFailed { camera: c });
        }
        let frames = (0..obs.frames)
            .map(|t| {
                // Nearest successful frame; ties go to the earlier one.
                let i = ok.partition_point(|&s| s < t);
                let best = match (i.checked_sub(1).map(|j| ok[j]), ok.get(i).copied()) {
                    (Some(a), Some(b)) => {
                        if t - a <= b - t {
                            a
                        } else {
                            b
                        }
                    }
                    (Some(a), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => unreachable!("ok is non-empty"),
                };
                poses[best].expect("index taken from successful frames")
            })
            .collect();
        cams.push(CameraTrack { intrinsics: *k, frames });
    }
    Ok((traj, cams))
}

/// Per-frame refinement of the initial pose and camera poses.
///
/// The mean-pose stand-in used for resection is far from most observed
/// poses, so each frame is refitted on its own: the articulated pose and all
/// camera poses are free while the root and shape stay fixed. Only the 2D
/// term and the pose regulariser are active.
#[allow(clippy::too_many_arguments)]
pub fn refine_initialization(
    traj: &BodyTrajectory,
    cams: &[CameraTrack],
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
    weights: &LossWeights,
    iters: usize,
    optimizer: &MinimizeConfig,
) -> Result<(BodyTrajectory, Vec<CameraTrack>)> {
    let mut traj = traj.clone();
    let mut cams = cams.to_vec();
    if iters == 0 {
        return Ok((traj, cams));
    }
    let w = LossWeights { w_2d: weights.w_2d, w_z: weights.w_z, ..LossWeights::ZERO };
    let intrinsics: Vec<Intrinsics> = cams.iter().map(|c| c.intrinsics).collect();
    let cfg = optimizer.with_max_iters(iters);
    for round in 0..INIT_ROUNDS {
        if round > 0 {
            reresect(&traj, &mut cams, obs, model);
        }
        refine_frames(&mut traj, &mut cams, obs, prior, model, &w, &intrinsics, &cfg)?;
    }
    Ok((traj, cams))
}

const INIT_ROUNDS: usize = 3;

/// Resect every camera again against the current joints, keeping the new
/// pose only where it lowers the reprojection error.
fn reresect(traj: &BodyTrajectory, cams: &mut [CameraTrack], obs: &Observations, model: &SkeletonModel) {
    for t in 0..obs.frames {
        let joints = forward_kinematics(&traj.frames[t], &traj.beta, model).joint_pos;
        for (c, track) in cams.iter_mut().enumerate() {
            let (px, w) = confident(obs, t, c);
            let Ok(res) = pnp_resect(&joints, &px, &w, &track.intrinsics) else { continue };
            let current = track.frames[t]
                .rotation()
                .map(|rot| reprojection_rms(&rot, &track.frames[t].position(), &joints, &px, &w, &track.intrinsics))
                .unwrap_or(f64::INFINITY);
            if res.rms < current {
                track.frames[t] = res.pose;
            }
        }
    }
}

fn reprojection_rms(rot: &crate::geometry::Mat3, pos: &Vec3, joints: &[Vec3], px: &[Pixel], w: &[f64], k: &Intrinsics) -> f64 {
    let (mut sum, mut wsum) = (0.0, 0.0);
    for ((x, p), &wi) in joints.iter().zip(px).zip(w) {
        if wi <= 0.0 {
            continue;
        }
        let Ok(q) = crate::camera::project(rot, pos, k, x) else { return f64::INFINITY };
        sum += wi * ((q.u - p.u) * (q.u - p.u) + (q.v - p.v) * (q.v - p.v));
        wsum += wi;
    }
    if wsum > 0.0 {
        libm::sqrt(sum / wsum)
    } else {
        f64::INFINITY
    }
}

#[allow(clippy::too_many_arguments)]
fn refine_frames(
    traj: &mut BodyTrajectory,
    cams: &mut [CameraTrack],
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
    w: &LossWeights,
    intrinsics: &[Intrinsics],
    cfg: &MinimizeConfig,
) -> Result<()> {
    let w = *w;
    for t in 0..obs.frames {
        let sub = obs.slice(t, 1);
        let objective = Objective::new(&sub, prior, model, w, intrinsics.to_vec())?;
        let layout = objective.layout;
        let one = BodyTrajectory { frames: alloc::vec![traj.frames[t]], beta: traj.beta };
        let one_cams: Vec<CameraTrack> = cams.iter().map(|c| c.slice(t, 1)).collect();
        let mut x = layout.pack(&one, &one_cams);
        let mut mask = ParamMask::none(&layout).free_cameras(&layout);
        let o = layout.frame(0);
        mask.free[o + 6..o + crate::objective::FRAME_PARAMS].iter_mut().for_each(|f| *f = true);
        minimize(&mut x, &mask.free, cfg, |x, g| Ok(objective.evaluate(x, Some(g))?.total(&w)))?;
        traj.frames[t] = layout.unpack_body(&x).frames[0];
        for (c, track) in layout.unpack_cameras(&x, intrinsics).into_iter().enumerate() {
            cams[c].frames[t] = track.frames[0];
        }
    }
    Ok(())
}

fn pivot(x: &[f64]) -> [f64; 6] {
    core::array::from_fn(|i| x[i])
}

/// Three-phase optimisation of one segment; observations must already be
/// sliced to the segment.
pub fn optimize_segment(
    seg: &Segment,
    obs: &Observations,
    prior: &PriorModel,
    model: &SkeletonModel,
    weights: &LossWeights,
    caps: &PhaseCaps,
    optimizer: &MinimizeConfig,
    stage: Stage,
) -> Result<(Segment, Vec<PhaseTrace>)> {
    let intrinsics: Vec<Intrinsics> = seg.cameras.iter().map(|c| c.intrinsics).collect();
    let objective = Objective::new(obs, prior, model, *weights, intrinsics.clone())?;
    let layout = objective.layout;
    if layout.frames != seg.len() {
        return Err(Error::invalid("observation slice does not match segment length"));
    }
    let mut x = layout.pack(&seg.trajectory, &seg.cameras);
    let mut traces = Vec::with_capacity(3);
    for phase in Phase::ORDER {
        let mask = phase.mask(&layout);
        let before = pivot(&x);
        let cfg = optimizer.with_max_iters(phase.cap(caps));
        let report = minimize(&mut x, &mask.free, &cfg, |x, g| Ok(objective.evaluate(x, Some(g))?.total(weights)))?;
        traces.push(PhaseTrace {
            stage,
            phase,
            start: seg.start,
            frames: seg.len(),
            report,
            pivot_before: before,
            pivot_after: pivot(&x),
        });
    }
    let out = Segment {
        start: seg.start,
        trajectory: layout.unpack_body(&x),
        cameras: layout.unpack_cameras(&x, &intrinsics),
    };
    Ok((out, traces))
}

/// Apply a planar rigid transform to a body trajectory and its cameras.
pub fn transform_segment(seg: &Segment, tf: &PlanarTransform) -> Segment {
    let rot = tf.rotation();
    let t = Vec3::new(tf.tx, tf.ty, 0.0);
    let frames = seg
        .trajectory
        .frames
        .iter()
        .map(|f| {
            let phi = log_so3(&(rot * exp_so3(&Vec3::new(f.phi[0], f.phi[1], f.phi[2]))));
            let p = tf.apply_point(&f.root_position());
            FramePose { tau: [p.x, p.y, p.z], phi: [phi.x, phi.y, phi.z], z: f.z }
        })
        .collect();
    let cameras = seg
        .cameras
        .iter()
        .map(|c| CameraTrack { intrinsics: c.intrinsics, frames: c.frames.iter().map(|p| p.transformed(&rot, &t)).collect() })
        .collect();
    Segment { start: seg.start, trajectory: BodyTrajectory { frames, beta: seg.trajectory.beta }, cameras }
}

fn frame_anchor(f: &FramePose) -> Result<Anchor> {
    Anchor::from_root(&f.root_position(), &f.root_rotation()).ok_or(Error::DegenerateHeading)
}

/// Join overlapping segments in order. Each later segment is moved by the
/// planar transform that puts its first-frame anchor on the earlier
/// segment's anchor at the same global frame; overlapping frames are taken
/// from the later segment. Returns the joined segment and the anchor
/// distance at each junction.
pub fn stitch(segments: &[Segment]) -> Result<(Segment, Vec<f64>)> {
    let first = segments.first().ok_or_else(|| Error::invalid("nothing to stitch"))?;
    let mut frames: Vec<FramePose> = first.trajectory.frames.clone();
    let mut cams: Vec<Vec<CameraPose>> = first.cameras.iter().map(|c| c.frames.clone()).collect();
    let mut beta_sum = first.trajectory.beta;
    let mut distances = Vec::with_capacity(segments.len().saturating_sub(1));
    for seg in &segments[1..] {
        let end = first.start + frames.len();
        if seg.start < first.start || seg.start >= end || seg.end() <= end || seg.cameras.len() != cams.len() {
            return Err(Error::invalid("segments must overlap their predecessor and extend past it"));
        }
        let keep = seg.start - first.start;
        let target = frame_anchor(&frames[keep])?;
        let source = frame_anchor(&seg.trajectory.frames[0])?;
        let moved = transform_segment(seg, &PlanarTransform::between(&source, &target));
        distances.push(frame_anchor(&moved.trajectory.frames[0])?.distance(&target));
        frames.truncate(keep);
        frames.extend_from_slice(&moved.trajectory.frames);
        for (dst, src) in cams.iter_mut().zip(&moved.cameras) {
            dst.truncate(keep);
            dst.extend_from_slice(&src.frames);
        }
        for (b, s) in beta_sum.iter_mut().zip(&seg.trajectory.beta) {
            *b += s;
        }
    }
    let n = segments.len() as f64;
    let beta = beta_sum.map(|b| b / n);
    let cameras = cams
        .into_iter()
        .zip(&first.cameras)
        .map(|(frames, c)| CameraTrack { intrinsics: c.intrinsics, frames })
        .collect();
    Ok((Segment { start: first.start, trajectory: BodyTrajectory { frames, beta }, cameras }, distances))
}

fn record(diag: &mut Diagnostics, traces: &[PhaseTrace]) {
    for t in traces {
        diag.iterations += t.report.iterations;
        diag.evaluations += t.report.evaluations;
    }
}

/// Full pipeline from the built-in initialisation.
pub fn fit_sequence<E: SegmentExecutor>(
    obs: &Observations,
    intrinsics: &[Intrinsics],
    prior: &PriorModel,
    model: &SkeletonModel,
    weights: &LossWeights,
    config: &FitConfig,
    executor: &E,
) -> core::result::Result<FitResult, FitFailure> {
    let (traj, cams) = initialize(obs, intrinsics, prior, model)?;
    let (traj, cams) =
        refine_initialization(&traj, &cams, obs, prior, model, weights, config.init_iters, &config.optimizer)?;
    fit_sequence_from(obs, &traj, &cams, prior, model, weights, config, executor)
}

/// Chunk, optimise, stitch and refine, starting from a given estimate.
#[allow(clippy::too_many_arguments)]
pub fn fit_sequence_from<E: SegmentExecutor>(
    obs: &Observations,
    init_traj: &BodyTrajectory,
    init_cams: &[CameraTrack],
    prior: &PriorModel,
    model: &SkeletonModel,
    weights: &LossWeights,
    config: &FitConfig,
    executor: &E,
) -> core::result::Result<FitResult, FitFailure> {
    config.validate()?;
    weights.validate()?;
    obs.validate()?;
    prior.validate()?;
    if obs.cameras == 0 {
        return Err(Error::invalid("need at least one camera").into());
    }
    if init_traj.len() != obs.frames || init_cams.len() != obs.cameras || init_cams.iter().any(|c| c.len() != obs.frames) {
        return Err(Error::invalid("initial estimate does not match observations").into());
    }
    let starts = chunk_starts(obs.frames, config.chunk_len)?;
    let mut diag = Diagnostics {
        chunks: starts.iter().map(|&s| (s, config.chunk_len)).collect(),
        ..Default::default()
    };
    let mut traces = Vec::new();
    let fail = |error: Error, traces: Vec<PhaseTrace>, diagnostics: Diagnostics| FitFailure { error, traces, diagnostics };

    let optimize = |seg: &Segment, caps: &PhaseCaps, stage: Stage| {
        let sub = obs.slice(seg.start, seg.len());
        optimize_segment(seg, &sub, prior, model, weights, caps, &config.optimizer, stage)
    };

    let results = executor.run(starts.len(), |i| {
        let s = starts[i];
        let seg = Segment {
            start: s,
            trajectory: init_traj.slice(s, config.chunk_len),
            cameras: init_cams.iter().map(|c| c.slice(s, config.chunk_len)).collect(),
        };
        optimize(&seg, &config.chunk_iters, Stage::Chunk { index: i })
    });
    let mut segments = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok((seg, tr)) => {
                record(&mut diag, &tr);
                traces.extend(tr);
                segments.push(seg);
            }
            Err(e) => return Err(fail(e, traces, diag)),
        }
    }

    let mut level = 0;
    while segments.len() > config.group_size {
        level += 1;
        let groups: Vec<&[Segment]> = segments.chunks(config.group_size).collect();
        let results = executor.run(groups.len(), |i| -> Result<(Segment, Vec<PhaseTrace>, Vec<f64>)> {
            let group = groups[i];
            if group.len() == 1 {
                return Ok((group[0].clone(), Vec::new(), Vec::new()));
            }
            let (joined, dist) = stitch(group)?;
            let (seg, tr) = optimize(&joined, &config.segment_iters, Stage::Segment { level, index: i })?;
            Ok((seg, tr, dist))
        });
        let mut next = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok((seg, tr, dist)) => {
                    record(&mut diag, &tr);
                    traces.extend(tr);
                    diag.junction_distances.extend(dist);
                    next.push(seg);
                }
                Err(e) => return Err(fail(e, traces, diag)),
            }
        }
        segments = next;
    }
    diag.stitch_levels = level;

    let (full, dist) = match stitch(&segments) {
        Ok(v) => v,
        Err(e) => return Err(fail(e, traces, diag)),
    };
    diag.junction_distances.extend(dist);
    match optimize(&full, &config.final_iters, Stage::Final) {
        Ok((seg, tr)) => {
            record(&mut diag, &tr);
            traces.extend(tr);
            let (trajectory, cameras) = project_to_ground(&seg.trajectory, &seg.cameras, model);
            Ok(FitResult { trajectory, cameras, traces, diagnostics: diag })
        }
        Err(e) => Err(fail(e, traces, diag)),
    }
}

/// Lift every frame whose lowest joint is below the ground and every camera
/// position below it, so both ground penalties vanish exactly.
///
/// The penalties are soft during optimisation and typically leave
/// sub-millimetre penetration behind.
pub fn project_to_ground(
    traj: &BodyTrajectory,
    cams: &[CameraTrack],
    model: &SkeletonModel,
) -> (BodyTrajectory, Vec<CameraTrack>) {
    let mut traj = traj.clone();
    for f in traj.frames.iter_mut() {
        // Rounding can leave the lowest joint a few ulps below zero after a
        // single lift; a second pass always clears it.
        for _ in 0..4 {
            let low = forward_kinematics(f, &traj.beta, model).joint_pos.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
            if low >= 0.0 {
                break;
            }
            f.tau[2] -= low;
            if low > -f64::EPSILON {
                f.tau[2] += f64::EPSILON;
            }
        }
    }
    let mut cams = cams.to_vec();
    for pose in cams.iter_mut().flat_map(|c| c.frames.iter_mut()) {
        if pose.p[2] < 0.0 {
            pose.p[2] = 0.0;
        }
    }
    (traj, cams)
}

/// Per-camera frames in which that camera has no usable detection.
pub fn undetected_frames(obs: &Observations) -> Vec<Vec<usize>> {
    (0..obs.cameras)
        .map(|c| (0..obs.frames).filter(|&t| (0..NUM_JOINTS).all(|n| obs.get(t, c, n).weight() == 0.0)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_layout() {
        assert_eq!(chunk_starts(25, 25).unwrap(), vec![0]);
        assert_eq!(chunk_starts(49, 25).unwrap(), vec![0, 24]);
        assert_eq!(chunk_starts(50, 25).unwrap(), vec![0, 24, 25]);
        assert_eq!(chunk_starts(100, 25).unwrap(), vec![0, 24, 48, 72, 75]);
        assert!(chunk_starts(24, 25).is_err());
        for t in 25..400 {
            let s = chunk_starts(t, 25).unwrap();
            assert_eq!(*s.last().unwrap() + 25, t);
            assert!(s.windows(2).all(|w| w[1] > w[0] && w[1] <= w[0] + 24));
        }
    }

    #[test]
    fn phase_masks() {
        let layout = ParamLayout::new(25, 2);
        let all = Phase::All.mask(&layout);
        assert!(all.free[..6].iter().all(|f| !f));
        assert_eq!(all.free.iter().filter(|f| !**f).count(), 6);
        let cams = Phase::Cameras.mask(&layout);
        assert_eq!(cams.free.iter().filter(|f| **f).count(), 2 * 25 * 9);
        let roots = Phase::CamerasAndRoots.mask(&layout);
        assert_eq!(roots.free.iter().filter(|f| **f).count(), 2 * 25 * 9 + 24 * 6);
    }
}
