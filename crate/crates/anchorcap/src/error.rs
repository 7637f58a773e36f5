use std::path::{Path, PathBuf};

/// Everything a command can fail with, each carrying enough context to
/// point at the offending file, field or frame.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {location}: {message}", path.display())]
    Format { path: PathBuf, location: String, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: anchorcap_core::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), location: location.into(), message: message.into() }
    }

    pub fn core(context: impl Into<String>, source: anchorcap_core::Error) -> Self {
        CliError::Core { context: context.into(), source }
    }

    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Human-readable location of a field path such as `keypoints[3][1][5]`,
/// naming the frame when one of `frame_arrays` is indexed.
pub fn describe_field(path: &str, frame_arrays: &[&str]) -> String {
    if path.is_empty() || path == "." {
        return "document".to_string();
    }
    for key in frame_arrays {
        let needle = format!("{key}[");
        if let Some(pos) = path.find(&needle) {
            let rest = &path[pos + needle.len()..];
            if let Some(idx) = rest.split(']').next().and_then(|s| s.parse::<usize>().ok()) {
                return format!("field `{path}` (frame {idx})");
            }
        }
    }
    format!("field `{path}`")
}
