//! Versioned JSON documents exchanged between commands.
//!
//! Every document starts with a `schema` tag of the form `name/major.minor`.
//! Readers accept any minor version of the major version they know.

use std::fmt;
use std::fs;
use std::path::Path;

use anchorcap_core::camera::{CameraTrack, Intrinsics};
use anchorcap_core::kinematics::{BodyTrajectory, NUM_JOINTS};
use anchorcap_core::metrics::Variant;
use anchorcap_core::motion_prior::{EpochStats, PriorKind, PriorModel};
use anchorcap_core::objective::{Keypoint, LossBreakdown, Observations};
use anchorcap_core::pipeline::{Diagnostics, PhaseTrace, Stage};
use anchorcap_core::synth::SceneSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::config::Config;
use crate::error::{describe_field, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub major: u32,
    pub minor: u32,
}

impl Schema {
    pub fn tag(&self) -> String {
        format!("{}/{}.{}", self.name, self.major, self.minor)
    }

    fn check(&self, doc: &Value, path: &Path) -> Result<()> {
        let tag = doc
            .get("schema")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::format(path, "field `schema`", format!("missing; expected `{}`", self.tag())))?;
        let bad = |msg: String| CliError::format(path, "field `schema`", msg);
        let (name, version) = tag.split_once('/').ok_or_else(|| bad(format!("malformed tag `{tag}`")))?;
        if name != self.name {
            return Err(bad(format!("expected a `{}` document, found `{name}`", self.name)));
        }
        let major: u32 = version
            .split('.')
            .next()
            .and_then(|m| m.parse().ok())
            .ok_or_else(|| bad(format!("malformed version in `{tag}`")))?;
        if major != self.major {
            return Err(bad(format!("unsupported major version {major}; this build reads {}.x", self.major)));
        }
        Ok(())
    }
}

pub const SCENE: Schema = Schema { name: "anchorcap.scene", major: 1, minor: 0 };
pub const TRUTH: Schema = Schema { name: "anchorcap.truth", major: 1, minor: 0 };
pub const PRIOR: Schema = Schema { name: "anchorcap.prior", major: 1, minor: 0 };
pub const RESULT: Schema = Schema { name: "anchorcap.result", major: 1, minor: 0 };

/// 64-bit fingerprint, written as 16 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(serde::de::Error::custom(format!("expected 16 hex digits, got `{s}`")));
        }
        u64::from_str_radix(&s, 16)
            .map(Fingerprint)
            .map_err(|_| serde::de::Error::custom(format!("expected 16 hex digits, got `{s}`")))
    }
}

/// Frame-indexed arrays, so diagnostics can name the frame.
const FRAME_ARRAYS: [&str; 2] = ["keypoints", "frames"];

/// Read a document, checking its schema tag before decoding the body.
pub fn read_document<T: DeserializeOwned>(path: &Path, schema: &Schema) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::format(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    schema.check(&doc, path)?;
    serde_path_to_error::deserialize(doc)
        .map_err(|e| CliError::format(path, describe_field(&e.path().to_string(), &FRAME_ARRAYS), e.inner().to_string()))
}

/// Pretty-printed JSON; floats use the shortest round-tripping form, so
/// equal values always produce equal bytes.
pub fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| CliError::format(path, "document", e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Synchronized 2D keypoint tracks plus per-camera intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema: String,
    pub fps: f64,
    pub frames: usize,
    /// One entry per camera.
    pub cameras: Vec<Intrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Config>,
    /// `keypoints[frame][camera][joint] = [u, v, confidence]`; confidence 0
    /// marks a missing detection.
    pub keypoints: Vec<Vec<Vec<[f64; 3]>>>,
}

impl SceneFile {
    pub fn new(obs: &Observations, intrinsics: &[Intrinsics], fps: f64, config: Option<Config>) -> Self {
        let keypoints = (0..obs.frames)
            .map(|t| (0..obs.cameras).map(|c| (0..NUM_JOINTS).map(|n| obs.get(t, c, n).into()).collect()).collect())
            .collect();
        SceneFile { schema: SCENE.tag(), fps, frames: obs.frames, cameras: intrinsics.to_vec(), config, keypoints }
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_document(path, &SCENE)
    }

    /// Check shapes and values, naming the first offending frame.
    pub fn decode(&self, path: &Path) -> Result<(Observations, Vec<Intrinsics>)> {
        if !(self.fps > 0.0) {
            return Err(CliError::format(path, "field `fps`", "must be positive"));
        }
        if self.cameras.is_empty() {
            return Err(CliError::format(path, "field `cameras`", "needs at least one camera"));
        }
        let mut intrinsics = Vec::with_capacity(self.cameras.len());
        for (c, k) in self.cameras.iter().enumerate() {
            let k = Intrinsics::new(k.fx, k.fy, k.cx, k.cy)
                .map_err(|e| CliError::format(path, format!("field `cameras[{c}]`"), e.to_string()))?;
            intrinsics.push(k);
        }
        if self.keypoints.len() != self.frames {
            return Err(CliError::format(
                path,
                "field `keypoints`",
                format!("holds {} frames but `frames` is {}", self.keypoints.len(), self.frames),
            ));
        }
        let cams = self.cameras.len();
        let mut data = Vec::with_capacity(self.frames * cams * NUM_JOINTS);
        for (t, frame) in self.keypoints.iter().enumerate() {
            if frame.len() != cams {
                return Err(CliError::format(
                    path,
                    format!("field `keypoints[{t}]` (frame {t})"),
                    format!("holds {} cameras, expected {cams}", frame.len()),
                ));
            }
            for (c, joints) in frame.iter().enumerate() {
                let at = format!("field `keypoints[{t}][{c}]` (frame {t})");
                if joints.len() != NUM_JOINTS {
                    return Err(CliError::format(
                        path,
                        at,
                        format!("holds {} joints, expected {NUM_JOINTS}", joints.len()),
                    ));
                }
                for (n, &[u, v, w]) in joints.iter().enumerate() {
                    if !u.is_finite() || !v.is_finite() || !(0.0..=1.0).contains(&w) {
                        return Err(CliError::format(
                            path,
                            format!("field `keypoints[{t}][{c}][{n}]` (frame {t})"),
                            "needs finite pixel coordinates and confidence in [0, 1]",
                        ));
                    }
                    data.push(Keypoint { u, v, w });
                }
            }
        }
        let obs = Observations::from_keypoints(self.frames, cams, data)
            .map_err(|e| CliError::format(path, "field `keypoints`", e.to_string()))?;
        Ok((obs, intrinsics))
    }
}

/// Ground-truth body and camera trajectories of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub schema: String,
    pub skeleton: Fingerprint,
    pub spec: SceneSpec,
    pub config: Config,
    pub trajectory: BodyTrajectory,
    pub cameras: Vec<CameraTrack>,
}

impl TruthFile {
    pub fn read(path: &Path) -> Result<Self> {
        let gt: TruthFile = read_document(path, &TRUTH)?;
        check_tracks(path, &gt.trajectory, &gt.cameras)?;
        Ok(gt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusInfo {
    pub windows: usize,
    pub seed: u64,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSummary {
    pub epochs: Vec<EpochStats>,
    pub final_rec: f64,
    pub pca_rec: Option<f64>,
    pub warning: Option<String>,
}

/// A trained motion prior together with what it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    pub schema: String,
    pub kind: PriorKind,
    pub latent_dim: usize,
    pub skeleton: Fingerprint,
    pub corpus: CorpusInfo,
    pub config: Config,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    pub model: PriorModel,
}

impl PriorFile {
    pub fn read(path: &Path) -> Result<Self> {
        let p: PriorFile = read_document(path, &PRIOR)?;
        p.model.validate().map_err(|e| CliError::format(path, "field `model`", e.to_string()))?;
        if p.model.kind() != p.kind {
            return Err(CliError::format(path, "field `kind`", "does not match the stored model"));
        }
        if p.model.latent_dim() != p.latent_dim {
            return Err(CliError::format(path, "field `latent_dim`", "does not match the stored model"));
        }
        Ok(p)
    }

    /// Reject priors trained on a different skeleton.
    pub fn check_skeleton(&self, path: &Path, expected: Fingerprint) -> Result<()> {
        if self.skeleton != expected {
            return Err(CliError::format(
                path,
                "field `skeleton`",
                format!("prior was trained for skeleton {} but the active skeleton is {expected}", self.skeleton),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRef {
    pub kind: PriorKind,
    pub latent_dim: usize,
    pub corpus: Fingerprint,
}

/// Estimated body and camera trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub schema: String,
    pub config: Config,
    pub skeleton: Fingerprint,
    pub prior: PriorRef,
    pub losses: LossBreakdown,
    pub total_loss: f64,
    pub diagnostics: Diagnostics,
    pub trajectory: BodyTrajectory,
    pub cameras: Vec<CameraTrack>,
}

impl ResultFile {
    pub fn read(path: &Path) -> Result<Self> {
        let r: ResultFile = read_document(path, &RESULT)?;
        check_tracks(path, &r.trajectory, &r.cameras)?;
        Ok(r)
    }
}

fn check_tracks(path: &Path, traj: &BodyTrajectory, cams: &[CameraTrack]) -> Result<()> {
    for (c, cam) in cams.iter().enumerate() {
        if cam.len() != traj.len() {
            return Err(CliError::format(
                path,
                format!("field `cameras[{c}].frames`"),
                format!("holds {} frames, the body holds {}", cam.len(), traj.len()),
            ));
        }
        if let Some(t) = cam.frames.iter().position(|p| p.rotation().is_err()) {
            return Err(CliError::format(
                path,
                format!("field `cameras[{c}].frames[{t}].r` (frame {t})"),
                "degenerate 6D rotation",
            ));
        }
    }
    Ok(())
}

/// One accepted iterate of one optimisation phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub stage: &'static str,
    pub level: Option<usize>,
    pub index: Option<usize>,
    pub phase: &'static str,
    pub start: usize,
    pub frames: usize,
    pub iteration: usize,
    pub loss: f64,
}

/// Flatten phase traces into log rows, in execution order.
pub fn log_rows(traces: &[PhaseTrace]) -> Vec<LogRow> {
    let mut rows = Vec::new();
    for t in traces {
        let (stage, level, index) = match t.stage {
            Stage::Chunk { index } => ("chunk", None, Some(index)),
            Stage::Segment { level, index } => ("segment", Some(level), Some(index)),
            Stage::Final => ("final", None, None),
        };
        for (iteration, &loss) in t.report.trace.iter().enumerate() {
            rows.push(LogRow {
                stage,
                level,
                index,
                phase: t.phase.name(),
                start: t.start,
                frames: t.frames,
                iteration,
                loss,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCsvRow {
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub variant: Variant,
}

/// Serialize rows to CSV text with a header line.
pub fn csv_text<T: Serialize>(rows: &[T]) -> std::result::Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8"))
}
