//! Parametric 22-joint stick skeleton: shape to bone lengths, a linear pose
//! space over joint angles, and forward kinematics with reverse-mode
//! sensitivities.
//!
//! Joint order and parents follow the SMPL body topology without the two hand
//! joints. The body frame has +Z up, +Y forward and +X to the subject's right,
//! so left-side bones point towards −X in the rest pose.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fingerprint::Fnv64;
use crate::geometry::{exp_so3, exp_so3_with_partials, norm3, Mat3, Vec3, PI};

pub const NUM_JOINTS: usize = 22;
pub const NUM_BONES: usize = NUM_JOINTS - 1;
pub const POSE_DIM: usize = 3 * NUM_BONES;
pub const POSE_LATENT_DIM: usize = 32;
pub const SHAPE_DIM: usize = 10;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

pub const STANDARD_PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

/// Rest-pose offset of each joint from its parent, metres (T-pose).
const STANDARD_OFFSETS: [[f64; 3]; NUM_BONES] = [
    [-0.06, -0.01, -0.09],
    [0.06, -0.01, -0.09],
    [0.0, -0.02, 0.11],
    [0.0, 0.0, -0.38],
    [0.0, 0.0, -0.38],
    [0.0, 0.01, 0.135],
    [0.0, -0.02, -0.40],
    [0.0, -0.02, -0.40],
    [0.0, 0.0, 0.055],
    [0.0, 0.12, -0.055],
    [0.0, 0.12, -0.055],
    [0.0, -0.02, 0.21],
    [-0.075, -0.005, 0.11],
    [0.075, -0.005, 0.11],
    [0.0, 0.04, 0.09],
    [-0.10, -0.01, 0.03],
    [0.10, -0.01, 0.03],
    [-0.26, 0.0, 0.0],
    [0.26, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
    [0.25, 0.0, 0.0],
];

/// Joint tree and rest geometry. Bone `b` connects joint `b + 1` to its parent.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkeletonDef {
    pub names: Vec<String>,
    pub parents: [Option<usize>; NUM_JOINTS],
    pub rest_dir: [[f64; 3]; NUM_BONES],
    pub base_len: [f64; NUM_BONES],
}

impl SkeletonDef {
    pub fn standard() -> Self {
        let mut rest_dir = [[0.0; 3]; NUM_BONES];
        let mut base_len = [0.0; NUM_BONES];
        for (b, off) in STANDARD_OFFSETS.iter().enumerate() {
            let v = Vec3::new(off[0], off[1], off[2]);
            let n = norm3(&v);
            base_len[b] = n;
            rest_dir[b] = [v.x / n, v.y / n, v.z / n];
        }
        SkeletonDef {
            names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parents: STANDARD_PARENTS,
            rest_dir,
            base_len,
        }
    }

    /// Validate and build a skeleton. Rest directions must be unit length to
    /// within 1e-9 and are stored as given.
    pub fn new(
        names: Vec<String>,
        parents: [Option<usize>; NUM_JOINTS],
        rest_dir: [[f64; 3]; NUM_BONES],
        base_len: [f64; NUM_BONES],
    ) -> Result<Self> {
        if names.len() != NUM_JOINTS {
            return Err(Error::invalid("skeleton needs exactly 22 joint names"));
        }
        if parents[0].is_some() {
            return Err(Error::invalid("joint 0 must be the root"));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => return Err(Error::invalid("parents must precede children (tree rooted at 0)")),
            }
        }
        for d in &rest_dir {
            let n = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("rest directions must be unit vectors"));
            }
        }
        if base_len.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("base bone lengths must be positive"));
        }
        Ok(SkeletonDef { names, parents, rest_dir, base_len })
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn rest_dir(&self, bone: usize) -> Vec3 {
        let d = self.rest_dir[bone];
        Vec3::new(d[0], d[1], d[2])
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        for n in &self.names {
            h.bytes(n.as_bytes()).bytes(&[0]);
        }
        for p in &self.parents {
            h.u64(p.map_or(u64::MAX, |p| p as u64));
        }
        for d in &self.rest_dir {
            h.f64s(d);
        }
        h.f64s(&self.base_len);
        h.finish()
    }
}

/// Linear shape space: bone lengths are `base_len + basis·β`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShapeBasis {
    /// Row `b` holds the offsets of bone `b` per shape coefficient.
    pub rows: [[f64; SHAPE_DIM]; NUM_BONES],
}

impl ShapeBasis {
    /// Seeded random orthonormal directions, scaled per bone by a quarter of
    /// its base length. Bone lengths therefore stay positive for ‖β‖ ≤ 3.
    pub fn standard(def: &SkeletonDef) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ba9e_b0de);
        let g = DMatrix::<f64>::from_fn(NUM_BONES, SHAPE_DIM, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let mut rows = [[0.0; SHAPE_DIM]; NUM_BONES];
        for (b, row) in rows.iter_mut().enumerate() {
            for (m, x) in row.iter_mut().enumerate() {
                *x = 0.25 * def.base_len[b] * q[(b, m)];
            }
        }
        ShapeBasis { rows }
    }
}

/// Principal-component pose space over the 63 joint angles:
/// `θ = mean + basis·(std ⊙ z)` with orthonormal basis columns.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoseBasis {
    pub mean: Vec<f64>,
    /// Row-major `POSE_DIM × POSE_LATENT_DIM`.
    pub basis: Vec<f64>,
    pub std: [f64; POSE_LATENT_DIM],
}

/// Components with less spread than this are clamped to keep encoding finite.
pub const POSE_STD_FLOOR: f64 = 1e-6;

impl PoseBasis {
    /// Fit the pose space to joint-angle samples (rows of length 63).
    pub fn fit(samples: &[[f64; POSE_DIM]]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: samples.len() });
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; POSE_DIM];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(POSE_DIM, POSE_DIM);
        for s in samples {
            let d = nalgebra::DVector::from_fn(POSE_DIM, |i, _| s[i] - mean[i]);
            cov.ger(1.0 / (n - 1.0), &d, &d, 1.0);
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..POSE_DIM).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut basis = vec![0.0; POSE_DIM * POSE_LATENT_DIM];
        let mut std = [0.0; POSE_LATENT_DIM];
        for (c, &k) in order.iter().take(POSE_LATENT_DIM).enumerate() {
            std[c] = libm::sqrt(eig.eigenvalues[k].max(0.0)).max(POSE_STD_FLOOR);
            let col = eig.eigenvectors.column(k);
            // Deterministic sign: largest-magnitude entry positive.
            let imax = col.iamax();
            let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
            for q in 0..POSE_DIM {
                basis[q * POSE_LATENT_DIM + c] = sign * col[q];
            }
        }
        Ok(PoseBasis { mean, basis, std })
    }

    #[inline]
    pub fn at(&self, q: usize, c: usize) -> f64 {
        self.basis[q * POSE_LATENT_DIM + c]
    }

    /// Latent pose code to joint angles.
    pub fn decode(&self, z: &[f64; POSE_LATENT_DIM]) -> [f64; POSE_DIM] {
        let mut theta = [0.0; POSE_DIM];
        let scaled: [f64; POSE_LATENT_DIM] = core::array::from_fn(|c| self.std[c] * z[c]);
        for (q, t) in theta.iter_mut().enumerate() {
            let row = &self.basis[q * POSE_LATENT_DIM..(q + 1) * POSE_LATENT_DIM];
            *t = self.mean[q] + row.iter().zip(&scaled).map(|(a, b)| a * b).sum::<f64>();
        }
        theta
    }

    /// Joint angles to latent code; least-squares projection for off-span input.
    pub fn encode(&self, theta: &[f64; POSE_DIM]) -> [f64; POSE_LATENT_DIM] {
        let mut z = [0.0; POSE_LATENT_DIM];
        for q in 0..POSE_DIM {
            let d = theta[q] - self.mean[q];
            let row = &self.basis[q * POSE_LATENT_DIM..(q + 1) * POSE_LATENT_DIM];
            for (zc, b) in z.iter_mut().zip(row) {
                *zc += b * d;
            }
        }
        for (zc, s) in z.iter_mut().zip(&self.std) {
            *zc /= s;
        }
        z
    }
}

/// Complete body model: topology, rest geometry, shape and pose spaces.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SkeletonModel {
    pub def: SkeletonDef,
    pub shape: ShapeBasis,
    pub pose: PoseBasis,
}

impl SkeletonModel {
    pub fn new(def: SkeletonDef, shape: ShapeBasis, pose: PoseBasis) -> Self {
        SkeletonModel { def, shape, pose }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::default();
        h.u64(self.def.fingerprint());
        for r in &self.shape.rows {
            h.f64s(r);
        }
        h.f64s(&self.pose.mean).f64s(&self.pose.basis).f64s(&self.pose.std);
        h.finish()
    }
}

/// Per-frame body parameters: root position, root axis-angle, pose latent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FramePose {
    pub tau: [f64; 3],
    pub phi: [f64; 3],
    pub z: [f64; POSE_LATENT_DIM],
}

impl Default for FramePose {
    fn default() -> Self {
        FramePose { tau: [0.0; 3], phi: [0.0; 3], z: [0.0; POSE_LATENT_DIM] }
    }
}

impl FramePose {
    pub fn root_position(&self) -> Vec3 {
        Vec3::new(self.tau[0], self.tau[1], self.tau[2])
    }

    pub fn root_rotation(&self) -> Mat3 {
        exp_so3(&Vec3::new(self.phi[0], self.phi[1], self.phi[2]))
    }

    pub fn with_root(&self, pos: &Vec3, rot: &Mat3) -> FramePose {
        let phi = crate::geometry::log_so3(rot);
        FramePose { tau: [pos.x, pos.y, pos.z], phi: [phi.x, phi.y, phi.z], z: self.z }
    }

    /// Bring `phi` back to the canonical range; used on input boundaries only.
    pub fn canonicalized(&self) -> FramePose {
        let phi = crate::geometry::wrap_axis_angle(&Vec3::new(self.phi[0], self.phi[1], self.phi[2]));
        FramePose { phi: [phi.x, phi.y, phi.z], ..*self }
    }

    pub fn is_canonical(&self) -> bool {
        libm::sqrt(self.phi.iter().map(|x| x * x).sum()) < PI + 1e-6
    }
}

/// Body motion: per-frame poses sharing one shape vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BodyTrajectory {
    pub frames: Vec<FramePose>,
    pub beta: [f64; SHAPE_DIM],
}

impl BodyTrajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> BodyTrajectory {
        BodyTrajectory { frames: self.frames[start..start + len].to_vec(), beta: self.beta }
    }
}

/// World-frame joint positions and orientations for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyState {
    pub joint_pos: [Vec3; NUM_JOINTS],
    pub joint_rot: [Mat3; NUM_JOINTS],
}

impl BodyState {
    pub fn rot6d(&self, joint: usize) -> [f64; 6] {
        crate::camera::matrix_to_rot6d(&self.joint_rot[joint])
    }
}

/// Intermediate values of a forward pass needed for its reverse pass.
#[derive(Debug, Clone)]
pub struct FkCache {
    local_partials: [[Mat3; 3]; NUM_JOINTS],
    local_rot: [Mat3; NUM_JOINTS],
    bone_len: [f64; NUM_BONES],
}

/// Gradient of a scalar with respect to one frame's parameters and β.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoseGrad {
    pub tau: Vec3,
    pub phi: Vec3,
    pub z: [f64; POSE_LATENT_DIM],
    pub beta: [f64; SHAPE_DIM],
}

pub fn pose_decode(z: &[f64; POSE_LATENT_DIM], model: &SkeletonModel) -> [f64; POSE_DIM] {
    model.pose.decode(z)
}

pub fn pose_encode(theta: &[f64; POSE_DIM], model: &SkeletonModel) -> [f64; POSE_LATENT_DIM] {
    model.pose.encode(theta)
}

pub fn bone_lengths(beta: &[f64; SHAPE_DIM], model: &SkeletonModel) -> [f64; NUM_BONES] {
    core::array::from_fn(|b| {
        model.def.base_len[b] + model.shape.rows[b].iter().zip(beta).map(|(s, x)| s * x).sum::<f64>()
    })
}

pub fn forward_kinematics(pose: &FramePose, beta: &[f64; SHAPE_DIM], model: &SkeletonModel) -> BodyState {
    forward_kinematics_cached(pose, beta, model).0
}

pub fn forward_kinematics_cached(
    pose: &FramePose,
    beta: &[f64; SHAPE_DIM],
    model: &SkeletonModel,
) -> (BodyState, FkCache) {
    let theta = model.pose.decode(&pose.z);
    let bone_len = bone_lengths(beta, model);
    let mut local_rot = [Mat3::identity(); NUM_JOINTS];
    let mut local_partials = [[Mat3::zeros(); 3]; NUM_JOINTS];
    let (r0, p0) = exp_so3_with_partials(&Vec3::new(pose.phi[0], pose.phi[1], pose.phi[2]));
    local_rot[0] = r0;
    local_partials[0] = p0;
    for b in 0..NUM_BONES {
        let (r, p) = exp_so3_with_partials(&Vec3::new(theta[3 * b], theta[3 * b + 1], theta[3 * b + 2]));
        local_rot[b + 1] = r;
        local_partials[b + 1] = p;
    }
    let mut joint_pos = [Vec3::zeros(); NUM_JOINTS];
    let mut joint_rot = [Mat3::identity(); NUM_JOINTS];
    joint_pos[0] = pose.root_position();
    joint_rot[0] = r0;
    for j in 1..NUM_JOINTS {
        let par = model.def.parents[j].expect("non-root joint has a parent");
        let b = j - 1;
        joint_pos[j] = joint_pos[par] + joint_rot[par] * (model.def.rest_dir(b) * bone_len[b]);
        joint_rot[j] = joint_rot[par] * local_rot[j];
    }
    (BodyState { joint_pos, joint_rot }, FkCache { local_partials, local_rot, bone_len })
}

/// Reverse pass of [`forward_kinematics`]: maps `∂L/∂joint_pos` and
/// `∂L/∂joint_rot` to parameter gradients.
pub fn forward_kinematics_vjp(
    state: &BodyState,
    cache: &FkCache,
    model: &SkeletonModel,
    g_pos: &[Vec3; NUM_JOINTS],
    g_rot: &[Mat3; NUM_JOINTS],
) -> FramePoseGrad {
    let mut gp = *g_pos;
    let mut gr = *g_rot;
    let mut g_theta = [0.0; POSE_DIM];
    let mut g_len = [0.0; NUM_BONES];
    for j in (1..NUM_JOINTS).rev() {
        let par = model.def.parents[j].expect("non-root joint has a parent");
        let b = j - 1;
        let dir = model.def.rest_dir(b);
        let off = dir * cache.bone_len[b];
        let gpj = gp[j];
        gp[par] += gpj;
        gr[par] += gpj * off.transpose();
        g_len[b] += gpj.dot(&(state.joint_rot[par] * dir));
        let grj = gr[j];
        gr[par] += grj * cache.local_rot[j].transpose();
        let g_local = state.joint_rot[par].tr_mul(&grj);
        for k in 0..3 {
            g_theta[3 * b + k] = g_local.dot(&cache.local_partials[j][k]);
        }
    }
    let phi = Vec3::new(
        gr[0].dot(&cache.local_partials[0][0]),
        gr[0].dot(&cache.local_partials[0][1]),
        gr[0].dot(&cache.local_partials[0][2]),
    );
    let mut z = [0.0; POSE_LATENT_DIM];
    for (q, gt) in g_theta.iter().enumerate() {
        if *gt == 0.0 {
            continue;
        }
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += model.pose.at(q, c) * gt;
        }
    }
    for (zc, s) in z.iter_mut().zip(&model.pose.std) {
        *zc *= s;
    }
    let mut beta = [0.0; SHAPE_DIM];
    for (b, gl) in g_len.iter().enumerate() {
        for (m, gb) in beta.iter_mut().enumerate() {
            *gb += model.shape.rows[b][m] * gl;
        }
    }
    FramePoseGrad { tau: gp[0], phi, z, beta }
}
