use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to a command's outputs. `wall_clock_seconds`
/// is the only field that differs between otherwise identical runs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

/// Collects inputs and outputs of one command run.
pub struct Run {
    command: &'static str,
    started: Instant,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<FileDigest>,
    out_dir: Option<PathBuf>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &'static str, out_dir: Option<PathBuf>) -> Self {
        Self {
            command,
            started: Instant::now(),
            config: serde_json::Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            out_dir,
            outputs: Vec::new(),
        }
    }

    pub fn set_config(&mut self, config: impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn set_seeds(&mut self, seeds: &[u64]) {
        self.seeds = seeds.to_vec();
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn has_out_dir(&self) -> bool {
        self.out_dir.is_some()
    }

    /// Queues an output file (written by [`Run::finish`]).
    pub fn output(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_string(), bytes));
    }

    /// Writes queued outputs and `manifest.json` into the output directory,
    /// or the single queued output to stdout when there is none.
    pub fn finish(self) -> Result<()> {
        let Some(dir) = self.out_dir else {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            for (_, bytes) in &self.outputs {
                match stdout.write_all(bytes).and_then(|()| stdout.flush()) {
                    Ok(()) => {}
                    // a closed reader (e.g. `| head`) is not an error
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
                    Err(e) => return Err(Error::io("<stdout>", e)),
                }
            }
            return Ok(());
        };
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut outputs = Vec::new();
        for (name, bytes) in &self.outputs {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            outputs.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let config_bytes = serde_json::to_vec(&self.config)?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(&config_bytes),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        let path = dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}
