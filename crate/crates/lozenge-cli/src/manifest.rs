use crate::{Cli, CliError, CliResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a command.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Command line as given, without the program name.
    pub argv: Vec<String>,
    pub cli: Cli,
    pub seed: u64,
    pub threads: usize,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads an input file and records its hash.
pub fn read_input(path: &Path, inputs: &mut Vec<InputFile>) -> CliResult<String> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    inputs.push(InputFile { path: path.to_owned(), sha256: sha256_hex(text.as_bytes()) });
    Ok(text)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: bad manifest: {e}", path.display())))
    }

    /// Fails if any recorded input changed since the run.
    pub fn check_inputs(&self) -> CliResult<()> {
        for f in &self.inputs {
            let bytes = std::fs::read(&f.path).map_err(|source| CliError::Io { path: f.path.clone(), source })?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(CliError::Check(format!("input {} changed since the recorded run", f.path.display())));
            }
        }
        Ok(())
    }
}
