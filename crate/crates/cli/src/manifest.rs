use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{CliError, CliResult};
use crate::Common;

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    tool_version: &'static str,
    seed: Option<u64>,
    config: FileHash,
    outputs: Vec<FileHash>,
}

fn hash(path: &Path) -> CliResult<FileHash> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { file: path.to_path_buf(), source })?;
    Ok(FileHash { path: path.display().to_string(), sha256: format!("{:x}", Sha256::digest(&bytes)) })
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn write(command: &str, c: &Common, outputs: &[PathBuf]) -> CliResult<()> {
    let m = RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
        seed: c.seed,
        config: hash(&c.config)?,
        outputs: outputs.iter().map(|p| hash(p)).collect::<CliResult<_>>()?,
    };
    let path = manifest_path(&c.out);
    let mut text = serde_json::to_string_pretty(&m).map_err(coefmon_core::Error::from)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| CliError::Io { file: path, source })
}
