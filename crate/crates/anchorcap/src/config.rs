//! Layered configuration: built-in defaults, then a TOML file, then
//! command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anchorcap_core::motion_prior::{PriorKind, VaeConfig};
use anchorcap_core::objective::LossWeights;
use anchorcap_core::pipeline::FitConfig;
use anchorcap_core::synth::SceneSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{describe_field, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub kind: PriorKind,
    pub latent_dim: usize,
    /// Number of synthetic training windows.
    pub windows: usize,
    /// Seed of the synthetic training corpus.
    pub seed: u64,
    pub vae: VaeConfig,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings { kind: PriorKind::Pca, latent_dim: 64, windows: 1000, seed: 1, vae: VaeConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Leading frames excluded from the body metrics.
    pub skip: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { skip: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSettings {
    /// Distance of the drawn image plane in front of each camera, metres.
    pub frustum_depth: f64,
    /// Export every n-th frame.
    pub stride: usize,
}

impl Default for ExportSettings {
    fn default() -> Self {
        ExportSettings { frustum_depth: 0.3, stride: 1 }
    }
}

/// Effective settings of a run; echoed verbatim into every JSON output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Skeleton definition file; the built-in skeleton when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    pub scene: SceneSpec,
    pub prior: PriorSettings,
    pub fit: FitConfig,
    pub weights: LossWeights,
    pub eval: EvalSettings,
    pub export: ExportSettings,
}

impl Config {
    /// Build the effective config. `sets` are `dotted.key=value` pairs whose
    /// value is parsed as JSON, falling back to a plain string.
    pub fn load(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Config> {
        let mut doc = serde_json::to_value(Config::default()).expect("default config serializes");
        let origin = file.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("<defaults>"));
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let parsed: toml::Table = toml::from_str(&text).map_err(|e| {
                let location = match e.span() {
                    Some(span) => format!("line {}", line_of(&text, span.start)),
                    None => "document".to_string(),
                };
                CliError::format(path, location, e.message())
            })?;
            let parsed = serde_json::to_value(parsed).expect("TOML values map onto JSON");
            merge(&mut doc, parsed);
        }
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{set}`")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key.trim(), value)?;
        }
        let origin = if sets.is_empty() { origin } else { PathBuf::from(format!("{} + --set", origin.display())) };
        let mut config: Config = serde_path_to_error::deserialize(doc)
            .map_err(|e| CliError::format(&origin, describe_field(&e.path().to_string(), &[]), e.inner().to_string()))?;
        if let Some(seed) = seed {
            config.apply_seed(seed);
        }
        config.validate(&origin)?;
        Ok(config)
    }

    /// A single `--seed` drives every random stream.
    pub fn apply_seed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.prior.seed = seed;
        self.prior.vae.seed = seed;
        self.fit.seed = seed;
    }

    pub fn validate(&self, origin: &Path) -> Result<()> {
        let core = |field: &str, r: anchorcap_core::Result<()>| {
            r.map_err(|e| CliError::format(origin, format!("field `{field}`"), e.to_string()))
        };
        core("fit", self.fit.validate())?;
        core("weights", self.weights.validate())?;
        if self.prior.latent_dim == 0 {
            return Err(CliError::format(origin, "field `prior.latent_dim`", "must be positive"));
        }
        if !(self.export.frustum_depth > 0.0) || self.export.stride == 0 {
            return Err(CliError::format(origin, "field `export`", "frustum_depth and stride must be positive"));
        }
        Ok(())
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(CliError::Usage(format!("--set {key}: `{}` is not a table", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(CliError::Usage("--set needs a non-empty key".to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::load(None, &[], None).unwrap();
        assert_eq!(c, Config::default());
    }

    #[test]
    fn cli_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[weights]\nw_m = 0.5\nw_z = 2\n[fit]\nchunk_len = 25\n").unwrap();
        let c = Config::load(Some(&path), &["weights.w_m=0.25".into()], Some(9)).unwrap();
        assert_eq!(c.weights.w_m, 0.25);
        assert_eq!(c.weights.w_z, 2.0);
        assert_eq!(c.weights.w_2d, LossWeights::default().w_2d);
        assert_eq!(c.fit.seed, 9);
        assert_eq!(c.scene.seed, 9);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = Config::load(None, &["weights.w_nope=1".into()], None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("weights"), "{msg}");
        assert!(msg.contains("w_nope"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn toml_syntax_error_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "[fit]\nchunk_len = = 3\n").unwrap();
        let msg = Config::load(Some(&path), &[], None).unwrap_err().to_string();
        assert!(msg.contains("bad.toml") && msg.contains("line 2"), "{msg}");
    }
}
