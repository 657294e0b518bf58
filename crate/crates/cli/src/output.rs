//! Run directories and manifests.

use selfsim_core::{LabError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SSLAB_OUTPUT_ROOT";

pub fn output_root(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")),
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub run_dir: PathBuf,
    pub exit_code: i32,
    pub error: Option<String>,
    pub files: Vec<Artifact>,
}

/// Output directory `<root>/<command>-<UTC timestamp>-<hash>`, created on first write.
pub struct RunDir {
    command: String,
    hash: String,
    path: PathBuf,
    created: bool,
    files: Vec<Artifact>,
}

impl RunDir {
    pub fn new(root: &Path, command: &str, hash: &str) -> Self {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = format!("{command}-{stamp}-{}", &hash[..12]);
        let mut path = root.join(&base);
        let mut k = 1;
        while path.exists() {
            path = root.join(format!("{base}-{k}"));
            k += 1;
        }
        Self { command: command.into(), hash: hash.into(), path, created: false, files: Vec::new() }
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if !self.created {
            fs::create_dir_all(&self.path)?;
            self.created = true;
        }
        fs::write(self.path.join(name), bytes)?;
        self.files.push(Artifact { name: name.into(), bytes: bytes.len(), sha256: hex_digest(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn has_outputs(&self) -> bool {
        self.created
    }

    /// Writes manifest.json next to the artifacts and returns it.
    pub fn finish(self, exit_code: i32, error: Option<String>) -> Result<Manifest> {
        let m = Manifest { command: self.command, config_hash: self.hash, run_dir: self.path.clone(), exit_code, error, files: self.files };
        let text = serde_json::to_vec_pretty(&m)?;
        fs::write(self.path.join("manifest.json"), text).map_err(LabError::from)?;
        Ok(m)
    }
}

/// CSV from a header and numeric rows; floats use the shortest round-trip form.
pub fn csv_bytes<I>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(header)?;
    for row in rows {
        wr.serialize(row)?;
    }
    wr.into_inner().map_err(|e| LabError::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(hex_digest(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn csv_rows_round_trip() {
        let b = csv_bytes(&["x", "y"], vec![vec![0.1, 1e-300], vec![-2.5, f64::NAN]]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "x,y\n0.1,1e-300\n-2.5,NaN\n");
    }
}
