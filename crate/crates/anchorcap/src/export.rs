//! Point-cloud export of a fitted sequence for external viewers: skeleton
//! joints per frame and a wireframe frustum per camera and frame.

use std::io::{self, Write};

use anchorcap_core::camera::CameraTrack;
use anchorcap_core::geometry::Vec3;
use anchorcap_core::kinematics::{forward_kinematics, BodyTrajectory, SkeletonModel, NUM_JOINTS};
use serde::Serialize;

const BODY_RGB: [u8; 3] = [255, 140, 0];
const CAMERA_RGB: [u8; 3] = [0, 150, 255];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Body,
    Camera,
}

/// One exported point. `vertex` is the joint index for the body, and
/// 0 (centre) or 1..=4 (image-plane corners) for a camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub kind: Owner,
    pub frame: usize,
    pub owner: usize,
    pub vertex: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cloud {
    pub points: Vec<Point>,
    /// Index pairs into `points`: bones and frustum edges.
    pub edges: Vec<[usize; 2]>,
}

pub fn build_cloud(
    traj: &BodyTrajectory,
    cams: &[CameraTrack],
    model: &SkeletonModel,
    depth: f64,
    stride: usize,
) -> anchorcap_core::Result<Cloud> {
    let mut cloud = Cloud::default();
    for t in (0..traj.len()).step_by(stride.max(1)) {
        let state = forward_kinematics(&traj.frames[t], &traj.beta, model);
        let base = cloud.points.len();
        for (n, p) in state.joint_pos.iter().enumerate() {
            cloud.points.push(point(Owner::Body, t, 0, n, p));
        }
        for n in 1..NUM_JOINTS {
            let parent = model.def.parents[n].expect("non-root joints have parents");
            cloud.edges.push([base + parent, base + n]);
        }
        for (c, cam) in cams.iter().enumerate() {
            let pose = &cam.frames[t];
            let rot = pose.rotation()?;
            let centre = pose.position();
            let k = &cam.intrinsics;
            let base = cloud.points.len();
            cloud.points.push(point(Owner::Camera, t, c, 0, &centre));
            let corners = [(0.0, 0.0), (2.0 * k.cx, 0.0), (2.0 * k.cx, 2.0 * k.cy), (0.0, 2.0 * k.cy)];
            for (i, (u, v)) in corners.into_iter().enumerate() {
                let local = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
                cloud.points.push(point(Owner::Camera, t, c, i + 1, &(rot * local + centre)));
                cloud.edges.push([base, base + i + 1]);
                cloud.edges.push([base + i + 1, base + 1 + (i + 1) % 4]);
            }
        }
    }
    Ok(cloud)
}

fn point(kind: Owner, frame: usize, owner: usize, vertex: usize, p: &Vec3) -> Point {
    Point { kind, frame, owner, vertex, x: p.x, y: p.y, z: p.z }
}

/// ASCII PLY with vertex and edge elements.
pub fn write_ply<W: Write>(cloud: &Cloud, comments: &[String], mut w: W) -> io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    for c in comments {
        writeln!(w, "comment {}", c.replace(['\n', '\r'], " "))?;
    }
    writeln!(w, "element vertex {}", cloud.points.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    for p in ["red", "green", "blue"] {
        writeln!(w, "property uchar {p}")?;
    }
    writeln!(w, "property int frame")?;
    writeln!(w, "property int owner")?;
    writeln!(w, "property int vertex_id")?;
    writeln!(w, "element edge {}", cloud.edges.len())?;
    writeln!(w, "property int vertex1")?;
    writeln!(w, "property int vertex2")?;
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        let [r, g, b] = match p.kind {
            Owner::Body => BODY_RGB,
            Owner::Camera => CAMERA_RGB,
        };
        let owner = match p.kind {
            Owner::Body => -1,
            Owner::Camera => p.owner as i64,
        };
        writeln!(w, "{} {} {} {r} {g} {b} {} {owner} {}", p.x, p.y, p.z, p.frame, p.vertex)?;
    }
    for [a, b] in &cloud.edges {
        writeln!(w, "{a} {b}")?;
    }
    w.flush()
}

/// CSV with one row per point.
pub fn write_csv<W: Write>(cloud: &Cloud, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for p in &cloud.points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}
