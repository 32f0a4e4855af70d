//! Run provenance. Every subcommand drops a `run.toml` into its output
//! directory recording what ran, on what inputs, and a digest of what it
//! produced, so a result can be traced back to the exact invocation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "run.toml";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    /// Config file the run was launched with, if any.
    pub config_path: Option<String>,
    /// Paths the command read.
    pub inputs: Vec<String>,
    /// Files the command wrote, relative to the output directory.
    pub outputs: Vec<String>,
    /// Digest over every output's name and bytes, in listed order.
    pub output_sha256: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::format(&path, format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, format!("bad manifest: {e}")))
    }
}

/// Hashes `files` (relative to `out_dir`) as name bytes then content bytes,
/// in the order given. Listing order is part of the digest.
pub fn digest_outputs(out_dir: &Path, files: &[String]) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in files {
        let path = out_dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(name.as_bytes());
        hasher.update(u64::try_from(bytes.len()).unwrap_or(u64::MAX).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Collects every regular file under `out_dir` except the manifest itself,
/// as sorted relative paths. Sorting keeps the digest order stable.
pub fn list_outputs(out_dir: &Path) -> Result<Vec<String>> {
    let mut files = Vec::new();
    walk(out_dir, out_dir, &mut files)?;
    files.sort();
    Ok(files)
}

fn walk(root: &Path, dir: &Path, files: &mut Vec<String>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            walk(root, &path, files)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let rel = path
                .strip_prefix(root)
                .map_err(|_| Error::invalid("output path escaped the output directory"))?;
            files.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_covers_names_and_bytes_in_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"alpha").unwrap();
        std::fs::write(dir.path().join("b.txt"), b"beta").unwrap();

        let fwd = digest_outputs(dir.path(), &["a.txt".into(), "b.txt".into()]).unwrap();
        let rev = digest_outputs(dir.path(), &["b.txt".into(), "a.txt".into()]).unwrap();
        assert_ne!(fwd, rev);

        std::fs::write(dir.path().join("a.txt"), b"alphb").unwrap();
        let changed = digest_outputs(dir.path(), &["a.txt".into(), "b.txt".into()]).unwrap();
        assert_ne!(fwd, changed);
    }

    #[test]
    fn listing_skips_the_manifest_and_recurses() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/x.bin"), b"x").unwrap();
        std::fs::write(dir.path().join("top.csv"), b"y").unwrap();
        std::fs::write(dir.path().join(MANIFEST_FILE), b"stale").unwrap();

        let files = list_outputs(dir.path()).unwrap();
        assert_eq!(files, vec!["sub/x.bin".to_string(), "top.csv".to_string()]);
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "simulate".into(),
            code_version: "0.1.0".into(),
            seed: 7,
            config_path: None,
            inputs: vec!["cfg.toml".into()],
            outputs: vec!["events.evt".into()],
            output_sha256: "00".into(),
            wall_clock_seconds: 1.5,
        };
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.command, "simulate");
        assert_eq!(back.outputs, m.outputs);
    }
}
