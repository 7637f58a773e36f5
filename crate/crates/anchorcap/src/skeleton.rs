//! Skeleton definitions in TOML.
//!
//! ```toml
//! [[joint]]
//! name = "pelvis"
//!
//! [[joint]]
//! name = "left_hip"
//! parent = "pelvis"
//! rest_dir = [1.0, 0.0, 0.0]
//! base_len = 0.1
//! ```
//!
//! Joints are listed in index order; joint `i > 0` ends bone `i - 1`.

use std::fs;
use std::path::Path;

use anchorcap_core::kinematics::{ShapeBasis, SkeletonDef, SkeletonModel, NUM_BONES, NUM_JOINTS};
use anchorcap_core::synth::standard_model;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rest_dir: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_len: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonToml {
    joint: Vec<JointEntry>,
}

pub fn parse_skeleton(text: &str, path: &Path) -> Result<SkeletonDef> {
    let doc: SkeletonToml = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => format!("line {}", text[..span.start.min(text.len())].matches('\n').count() + 1),
            None => "document".to_string(),
        };
        CliError::format(path, location, e.message())
    })?;
    if doc.joint.len() != NUM_JOINTS {
        return Err(CliError::format(path, "table `joint`", format!("needs {NUM_JOINTS} entries, found {}", doc.joint.len())));
    }
    let names: Vec<String> = doc.joint.iter().map(|j| j.name.clone()).collect();
    let mut parents = [None; NUM_JOINTS];
    let mut rest_dir = [[0.0; 3]; NUM_BONES];
    let mut base_len = [0.0; NUM_BONES];
    for (i, j) in doc.joint.iter().enumerate() {
        let at = |field: &str| format!("field `joint[{i}].{field}` ({})", j.name);
        if i == 0 {
            if j.parent.is_some() || j.rest_dir.is_some() || j.base_len.is_some() {
                return Err(CliError::format(path, at("parent"), "the root joint takes only a name"));
            }
            continue;
        }
        let parent = j.parent.as_deref().ok_or_else(|| CliError::format(path, at("parent"), "missing"))?;
        let p = names[..i]
            .iter()
            .position(|n| n == parent)
            .ok_or_else(|| CliError::format(path, at("parent"), format!("`{parent}` is not an earlier joint")))?;
        parents[i] = Some(p);
        rest_dir[i - 1] = j.rest_dir.ok_or_else(|| CliError::format(path, at("rest_dir"), "missing"))?;
        base_len[i - 1] = j.base_len.ok_or_else(|| CliError::format(path, at("base_len"), "missing"))?;
    }
    SkeletonDef::new(names, parents, rest_dir, base_len).map_err(|e| CliError::format(path, "table `joint`", e.to_string()))
}

pub fn load_skeleton(path: &Path) -> Result<SkeletonDef> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_skeleton(&text, path)
}

pub fn skeleton_to_toml(def: &SkeletonDef) -> String {
    let joint = (0..NUM_JOINTS)
        .map(|i| JointEntry {
            name: def.names[i].clone(),
            parent: def.parents[i].map(|p| def.names[p].clone()),
            rest_dir: (i > 0).then(|| def.rest_dir[i - 1]),
            base_len: (i > 0).then(|| def.base_len[i - 1]),
        })
        .collect();
    toml::to_string(&SkeletonToml { joint }).expect("skeleton serializes to TOML")
}

/// Body model for a skeleton: its own shape basis and the built-in pose space.
pub fn model_for(def: SkeletonDef) -> SkeletonModel {
    let shape = ShapeBasis::standard(&def);
    SkeletonModel::new(def, shape, standard_model().pose)
}

/// Active body model: from `path` when given, else the built-in skeleton.
pub fn active_model(path: Option<&Path>) -> Result<SkeletonModel> {
    match path {
        Some(p) => Ok(model_for(load_skeleton(p)?)),
        None => Ok(standard_model()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_round_trips_exactly() {
        let def = SkeletonDef::standard();
        let text = skeleton_to_toml(&def);
        let back = parse_skeleton(&text, Path::new("mem.toml")).unwrap();
        assert_eq!(back, def);
        assert_eq!(model_for(back), standard_model());
    }

    #[test]
    fn shipped_file_matches_builtin() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("skeletons/standard.toml");
        assert_eq!(load_skeleton(&path).unwrap(), SkeletonDef::standard());
    }

    #[test]
    fn unknown_parent_is_reported_with_joint() {
        let text = skeleton_to_toml(&SkeletonDef::standard()).replacen("parent = \"pelvis\"", "parent = \"nowhere\"", 1);
        let msg = parse_skeleton(&text, Path::new("s.toml")).unwrap_err().to_string();
        assert!(msg.contains("s.toml") && msg.contains("joint[1].parent") && msg.contains("nowhere"), "{msg}");
    }
}
