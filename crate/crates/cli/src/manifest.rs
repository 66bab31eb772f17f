use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Audit record written for every invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub exit_code: i32,
}

pub fn version_string() -> String {
    match option_env!("SOM_GIT_DESCRIBE") {
        Some(d) => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Digest over the regular files directly inside `dir`: SHA-256 of the
/// lines `name<TAB>file-digest`, sorted by name.
pub fn sha256_dir(dir: &Path) -> Result<String, CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    entries.sort();
    let mut h = Sha256::new();
    for p in entries {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(format!("{name}\t{}\n", sha256_file(&p)?));
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Collects what a command read and wrote.
#[derive(Debug)]
pub struct Recorder {
    command: String,
    argv: Vec<String>,
    start: Instant,
    started_unix: u64,
    pub seed: Option<u64>,
    pub config: Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    /// Output directory receiving `run.json`, if the command has one.
    pub out_dir: Option<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Recorder {
            command: command.into(),
            argv,
            start: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seed: None,
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            out_dir: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = if path.is_dir() { sha256_dir(path)? } else { sha256_file(path)? };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(self, exit_code: i32) -> (RunManifest, Option<PathBuf>) {
        let m = RunManifest {
            command: self.command,
            argv: self.argv,
            version: version_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_unix: self.started_unix,
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            exit_code,
        };
        (m, self.out_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc.txt");
        fs::write(&p, "abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn directory_digest_tracks_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b"), "2").unwrap();
        fs::write(dir.path().join("a"), "1").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        let before = sha256_dir(dir.path()).unwrap();
        fs::write(dir.path().join("sub/ignored"), "x").unwrap();
        assert_eq!(sha256_dir(dir.path()).unwrap(), before);
        fs::write(dir.path().join("a"), "3").unwrap();
        assert_ne!(sha256_dir(dir.path()).unwrap(), before);
        let mut r = Recorder::new("x", vec![]);
        r.input(dir.path()).unwrap();
        assert_eq!(r.finish(0).0.inputs.len(), 1);
    }
}
