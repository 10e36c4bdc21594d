//! Run manifests and on-disk imputed stacks.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mipipe::datamodel::{read_matrix, write_matrix, ReadOptions};
use mipipe::{EngineConfig, ImputedStack, Method};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Command;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    command: &'a Command,
    seed: Option<u64>,
    threads: usize,
    config_hash: String,
    inputs: Vec<FileEntry>,
    outputs: Vec<PathBuf>,
}

/// `<path>.manifest.json`
pub(crate) fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Record a run beside its primary output. The command with all resolved
/// flags is enough to replay it.
pub(crate) fn write_run_manifest(
    command: &Command,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
    primary: &Path,
) -> Result<()> {
    let config = serde_json::to_vec(command)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        library_version: mipipe::VERSION,
        command,
        seed,
        threads: rayon::current_num_threads(),
        config_hash: sha256_hex(&config),
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(FileEntry {
                    path: p.to_path_buf(),
                    sha256: file_digest(p)?,
                })
            })
            .collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
    };
    let path = manifest_path(primary);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Description of an imputed stack; draw files are relative to the manifest.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct StackManifest {
    pub method: Method,
    pub seed: u64,
    pub draws: usize,
    pub config: Option<EngineConfig>,
    pub missing_fraction: f64,
    pub protein_column: bool,
    pub aggregated: bool,
    pub files: Vec<String>,
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

pub(crate) fn write_stack(
    stack: &ImputedStack,
    config: Option<&EngineConfig>,
    aggregated: bool,
    manifest: &Path,
) -> Result<()> {
    let dir = base_dir(manifest);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = manifest
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("stack")
        .to_string();
    let width = stack.len().to_string().len().max(3);
    let mut files = Vec::with_capacity(stack.len());
    for (d, draw) in stack.draws().iter().enumerate() {
        let name = format!("{stem}_draw_{:0width$}.csv", d + 1);
        write_matrix(draw, dir.join(&name))?;
        files.push(name);
    }
    let m = StackManifest {
        method: stack.method(),
        seed: stack.seed(),
        draws: stack.len(),
        config: config.cloned(),
        missing_fraction: stack.missing_fraction(),
        protein_column: stack.draws()[0].protein_ids().is_some(),
        aggregated,
        files,
    };
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    fs::write(manifest, text).with_context(|| format!("writing {}", manifest.display()))
}

pub(crate) fn read_stack(manifest: &Path) -> Result<(StackManifest, ImputedStack)> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let m: StackManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest.display()))?;
    if m.files.len() != m.draws {
        bail!("{} lists {} files for {} draws", manifest.display(), m.files.len(), m.draws);
    }
    let dir = base_dir(manifest);
    let options = ReadOptions {
        protein_column: m.protein_column,
    };
    let draws = m
        .files
        .iter()
        .map(|f| read_matrix(dir.join(f), options).with_context(|| format!("reading draw {f}")))
        .collect::<Result<Vec<_>>>()?;
    let stack = ImputedStack::from_complete_draws(draws, m.method, m.seed, m.missing_fraction)?;
    Ok((m, stack))
}
