//! Config loading and overrides.
//!
//! Precedence, lowest first: built-in defaults, the config file (or preset),
//! `--set key=value` overrides in command-line order, then dedicated flags
//! such as `--seed` and `--labels`.

use std::path::{Path, PathBuf};

use ladder_hsi::experiments::{preset, DatasetSpec, RunConfig, PRESETS};
use ladder_hsi::hsi::ArrayFile;
use toml::{Table, Value};

use crate::error::CliError;

/// Where a config came from and its exact text.
#[derive(Debug, Clone)]
pub struct Source {
    /// Preset name or file path as given.
    pub name: String,
    pub path: Option<PathBuf>,
    pub text: String,
}

pub fn read_source(spec: &str) -> Result<Source, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        return Ok(Source {
            name: spec.to_string(),
            path: Some(path.to_path_buf()),
            text,
        });
    }
    let stem = spec.strip_suffix(".toml").unwrap_or(spec);
    match preset(stem) {
        Some(text) => Ok(Source {
            name: stem.to_string(),
            path: None,
            text: text.to_string(),
        }),
        None => Err(CliError::config(format!(
            "config {spec:?} is neither a file nor a preset ({})",
            PRESETS.join(", ")
        ))),
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets a dotted key such as `train.ladder.noise_std`, creating tables on
/// the way. Unknown keys are left for deserialization to reject.
pub fn set_path(root: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("malformed key {key:?}")));
    }
    let mut table = root;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(CliError::config(format!(
                    "cannot set {key}: {} is not a table",
                    parts[..=i].join(".")
                )))
            }
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn apply_set(root: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got {assignment:?}")))?;
    set_path(root, key.trim(), parse_value(raw.trim()))
}

/// Dedicated flag overrides.
#[derive(Debug, Default, Clone)]
pub struct Flags {
    pub seed: Option<u64>,
    pub labels: Option<usize>,
}

pub fn build(source: &Source, sets: &[String], flags: &Flags) -> Result<RunConfig, CliError> {
    let mut root: Table = toml::from_str(&source.text).map_err(|e| CliError::config(e.message().to_string()))?;
    for s in sets {
        apply_set(&mut root, s)?;
    }
    if let Some(seed) = flags.seed {
        set_path(&mut root, "train.seed", Value::Integer(seed as i64))?;
    }
    if let Some(n) = flags.labels {
        set_path(&mut root, "data.labels_per_class", Value::Integer(n as i64))?;
    }
    let text = toml::to_string(&root).map_err(|e| CliError::config(e.to_string()))?;
    Ok(RunConfig::from_toml(&text)?)
}

/// Band count of the dataset, if it can be known without loading the cube.
pub fn bands(cfg: &RunConfig, data_dir: &Path) -> Result<Option<usize>, CliError> {
    if let DatasetSpec::Synthetic(s) = &cfg.dataset {
        return Ok(Some(s.bands));
    }
    match cfg.dataset.paths(data_dir) {
        None => Ok(None),
        Some((data, _)) if data.is_file() => {
            let dims = ArrayFile::read_dims(&data)?;
            if dims.len() != 3 {
                return Err(CliError::data(format!("{} is not a 3-d cube", data.display())));
            }
            Ok(Some(dims[2]))
        }
        Some(_) => Ok(None),
    }
}

/// Fills the input shape and validates. Without a band count the shape
/// stays empty and only the band-independent settings are checked.
pub fn resolve(cfg: &mut RunConfig, bands: Option<usize>) -> Result<(), CliError> {
    match bands {
        Some(b) => cfg.resolve(b)?,
        None => {
            let mut probe = cfg.clone();
            probe.resolve(cfg.data.pca_components.unwrap_or(1))?;
        }
    }
    if let Some(sw) = &cfg.sweep {
        if sw.values.is_empty() || sw.seeds.is_empty() {
            return Err(CliError::config("sweep needs at least one value and one seed"));
        }
    }
    Ok(())
}

/// Comma-joined λ vector.
pub fn lambda_line(cfg: &RunConfig) -> String {
    cfg.train
        .ladder
        .lambdas
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
