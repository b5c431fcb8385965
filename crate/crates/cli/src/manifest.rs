//! Run manifests: enough to re-execute a command and check its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use talm::tools::ToolDescriptor;

use crate::failure::{Classify, CmdResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub talm_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub generator: Option<String>,
    /// Whether outputs are expected to reproduce byte for byte.
    pub reproducible: bool,
    pub tools: Vec<ToolDescriptor>,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Logical name → output file.
    pub artifacts: BTreeMap<String, Artifact>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            talm_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            generator: None,
            reproducible: true,
            tools: Vec::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CmdResult<()> {
        let digest = sha256_file(path).usage(format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_artifact(&mut self, name: &str, path: &Path) -> CmdResult<()> {
        let sha256 = sha256_file(path).io(format!("hashing {}", path.display()))?;
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn write(&mut self, path: &Path) -> CmdResult<()> {
        self.finished_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(self).io("serializing manifest")?;
        fs::write(path, text + "\n").io(format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).usage(format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).usage(format!("parsing manifest {}", path.display()))
    }

    /// Inputs whose contents no longer match the recorded digests.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(path, digest)| sha256_file(Path::new(path)).ok().as_ref() != Some(*digest))
            .map(|(path, _)| path.clone())
            .collect()
    }
}

/// Replaces the value of `--out` in an argument list.
pub fn replace_out(args: &[String], out: &Path) -> Option<Vec<String>> {
    let out = out.display().to_string();
    let mut result = args.to_vec();
    if let Some(i) = result.iter().position(|a| a == "--out") {
        *result.get_mut(i + 1)? = out;
        return Some(result);
    }
    let i = result.iter().position(|a| a.starts_with("--out="))?;
    result[i] = format!("--out={out}");
    Some(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn out_replacement() {
        let a = strings(&["eval", "--out", "a", "--beams", "4"]);
        assert_eq!(
            replace_out(&a, Path::new("b")).unwrap(),
            strings(&["eval", "--out", "b", "--beams", "4"])
        );
        let a = strings(&["eval", "--out=a"]);
        assert_eq!(replace_out(&a, Path::new("b")).unwrap(), strings(&["eval", "--out=b"]));
        assert!(replace_out(&strings(&["solve", "x"]), Path::new("b")).is_none());
        assert!(replace_out(&strings(&["eval", "--out"]), Path::new("b")).is_none());
    }

    #[test]
    fn manifest_tracks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "a").unwrap();
        let mut m = RunManifest::new("solve", &strings(&["solve", "Add(1, 2)"]));
        m.add_input(&input).unwrap();
        m.add_artifact("input", &input).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        m.write(&path).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.changed_inputs().is_empty());
        fs::write(&input, "b").unwrap();
        assert_eq!(back.changed_inputs(), vec![input.display().to_string()]);
        assert_eq!(RunManifest::add_input(&mut m, &dir.path().join("nope")).unwrap_err().code(), 2);
    }
}
