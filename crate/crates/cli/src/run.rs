//! Output directories and their manifests.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ladder_hsi::experiments::{DatasetSpec, RunConfig};
use ladder_hsi::train::CHECKPOINT_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Source;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f
            .read(&mut buf)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Serialize)]
pub struct ConfigRecord {
    pub source: String,
    pub path: Option<PathBuf>,
    pub sha256: String,
    pub resolved_sha256: String,
}

#[derive(Debug, Serialize)]
pub struct DatasetRecord {
    pub kind: &'static str,
    pub files: Vec<FileRecord>,
}

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub ladder_hsi: &'static str,
    pub ladder_cli: &'static str,
    pub cube_format: &'static str,
    pub checkpoint_format: u32,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: ConfigRecord,
    pub dataset: DatasetRecord,
    pub seeds: Vec<u64>,
    pub precision: String,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub created: String,
    pub versions: Versions,
}

pub fn dataset_record(ds: &DatasetSpec, data_dir: &Path) -> Result<DatasetRecord, CliError> {
    match ds.paths(data_dir) {
        None => Ok(DatasetRecord {
            kind: "synthetic",
            files: Vec::new(),
        }),
        Some((d, g)) => {
            let mut files = Vec::new();
            for p in [d, g] {
                let bytes = fs::metadata(&p).map(|m| m.len()).unwrap_or(0);
                files.push(FileRecord {
                    sha256: sha256_file(&p)?,
                    path: p,
                    bytes,
                });
            }
            Ok(DatasetRecord { kind: "files", files })
        }
    }
}

/// A fresh `<out>/<timestamp>-<hash8>/` directory.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, resolved_sha: &str) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{stamp}-{}", &resolved_sha[..8]);
        for n in 0.. {
            let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
            let path = out.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CliError::io(format!("{}: {e}", path.display()))),
            }
        }
        unreachable!()
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}

/// Everything needed to start a run directory.
pub struct RunContext<'a> {
    pub command: &'a str,
    pub source: &'a Source,
    pub config: &'a RunConfig,
    pub data_dir: &'a Path,
    pub seeds: Vec<u64>,
    pub precision: &'a str,
    pub workers: usize,
}

/// Creates the directory and writes `manifest.json` and the resolved
/// `config.toml` before any work starts.
pub fn start(out: &Path, ctx: &RunContext) -> Result<RunDir, CliError> {
    let resolved = ctx.config.to_toml();
    let resolved_sha256 = sha256_hex(resolved.as_bytes());
    let dataset = dataset_record(&ctx.config.dataset, ctx.data_dir)?;
    let dir = RunDir::create(out, &resolved_sha256)?;
    let manifest = RunManifest {
        command: ctx.command.to_string(),
        argv: std::env::args().collect(),
        config: ConfigRecord {
            source: ctx.source.name.clone(),
            path: ctx.source.path.clone(),
            sha256: sha256_hex(ctx.source.text.as_bytes()),
            resolved_sha256,
        },
        dataset,
        seeds: ctx.seeds.clone(),
        precision: ctx.precision.to_string(),
        workers: ctx.workers,
        output_dir: dir.path.clone(),
        created: chrono::Utc::now().to_rfc3339(),
        versions: Versions {
            ladder_hsi: ladder_hsi::VERSION,
            ladder_cli: env!("CARGO_PKG_VERSION"),
            cube_format: "HSICUBE1",
            checkpoint_format: CHECKPOINT_VERSION,
        },
    };
    dir.write(MANIFEST, serde_json::to_string_pretty(&manifest).unwrap().as_bytes())?;
    dir.write("config.toml", resolved.as_bytes())?;
    Ok(dir)
}
