//! Run manifests: what was run, on which inputs, and how long it took.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputFile>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    /// Wall-clock seconds per phase, in the order they ran.
    pub timings: Vec<(String, f64)>,
    pub total_seconds: f64,
    #[serde(skip)]
    clock: Option<Instant>,
    #[serde(skip)]
    phase: Option<(String, Instant)>,
}

pub fn version() -> String {
    format!("rolelink v{}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn start() -> Self {
        RunManifest {
            command: std::env::args().collect(),
            version: version(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            seed: None,
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            timings: Vec::new(),
            total_seconds: 0.0,
            clock: Some(Instant::now()),
            phase: None,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputFile {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    /// Hashes every file directly inside `dir`, keyed `role/<file name>`.
    pub fn input_dir(&mut self, role: &str, dir: &Path) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            self.input(&format!("{role}/{name}"), &p)?;
        }
        Ok(())
    }

    pub fn config(&mut self, value: impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(value)?;
        Ok(())
    }

    /// Closes the running phase, if any, and opens `name`.
    pub fn phase(&mut self, name: &str) {
        self.end_phase();
        self.phase = Some((name.to_string(), Instant::now()));
    }

    fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase.take() {
            self.timings.push((name, t.elapsed().as_secs_f64()));
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.end_phase();
        self.total_seconds = self.clock.map_or(0.0, |c| c.elapsed().as_secs_f64());
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// `<output>.manifest.json` next to a file output.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_sits_beside_output() {
        assert_eq!(beside(Path::new("out/preds.jsonl")), Path::new("out/preds.jsonl.manifest.json"));
    }
}
