use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PIXDIFF_OUTPUT_ROOT";
const FALLBACK_ROOT: &str = "pixdiff-out";

/// A configuration or input problem; mapped to exit code 2.
#[derive(Debug)]
pub struct Rejected(pub String);

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Rejected {}

pub fn reject(msg: impl Into<String>) -> anyhow::Error {
    Rejected(msg.into()).into()
}

/// 2 for rejected configuration or inputs, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let rejected = err.chain().any(|e| {
        e.downcast_ref::<Rejected>().is_some()
            || e.downcast_ref::<pixdiff_core::Error>().is_some_and(|e| e.is_rejection())
    });
    if rejected {
        2
    } else {
        1
    }
}

/// Reads a JSON config file, or returns the defaults when no file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| reject(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| reject(format!("invalid config {}: {e}", path.display())))
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(FALLBACK_ROOT))
}

/// `explicit`, or `<output root>/<command>`.
pub fn output_dir(explicit: Option<&Path>, command: &str) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| output_root().join(command))
}

#[derive(Serialize)]
struct Manifest<'a, T> {
    command: &'a str,
    version: &'a str,
    config: &'a T,
}

/// Echoes the resolved configuration into `dir/manifest.json`.
pub fn write_manifest<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(reject(format!("missing {what}: {}", path.display())))
    }
}

/// Copies every `Some` flag value over the matching config field.
macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $(
            if let Some(v) = $args.$field.clone() {
                $cfg.$field = v;
            }
        )*
    };
}

pub(crate) use overlay;
