//! Run manifests: every command records its inputs and outputs with SHA-256
//! hashes, prefixed by the stages that produced its inputs, so any report can
//! be traced back to the generator config and seed.
//!
//! Paths are stored relative to the directory holding the manifest, which
//! keeps manifests identical across runs laid out the same way under
//! different roots.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub command: String,
    pub args: BTreeMap<String, String>,
    pub config_hash: String,
    pub seed: u64,
    /// Stage output directory, relative to the manifest's directory.
    pub dir: String,
    /// Paths relative to `dir`.
    pub inputs: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// UNIX seconds taken from `SOURCE_DATE_EPOCH`; absent otherwise so that
    /// reruns stay byte-identical.
    pub timestamp: Option<u64>,
    /// Upstream stages first, this command's stage last.
    pub stages: Vec<Stage>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.to_path_buf()),
        _ => CliError::Io {
            context: format!("reading {}", path.display()),
            source: e,
        },
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn canonical(path: &Path) -> Result<PathBuf> {
    path.canonicalize().map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.to_path_buf()),
        _ => CliError::Io {
            context: format!("resolving {}", path.display()),
            source: e,
        },
    })
}

/// Relative path from directory `from` to `to`, both existing.
pub fn relative(from: &Path, to: &Path) -> Result<String> {
    let from = canonical(from)?;
    let to = canonical(to)?;
    let a: Vec<Component> = from.components().collect();
    let b: Vec<Component> = to.components().collect();
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = vec!["..".to_string(); a.len() - common];
    parts.extend(b[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    Ok(if parts.is_empty() { ".".to_string() } else { parts.join("/") })
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.clone()),
            _ => CliError::Io {
                context: format!("reading {}", path.display()),
                source: e,
            },
        })?;
        serde_json::from_str(&text)
            .map_err(|e| extubation_core::Error::Format(format!("{}: {e}", path.display())).into())
    }

    pub fn last(&self) -> Option<&Stage> {
        self.stages.last()
    }
}

/// An upstream artifact directory whose manifest has been read.
#[derive(Debug, Clone)]
pub struct Upstream {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Upstream {
    pub fn open(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(CliError::MissingArtifact(dir.to_path_buf()));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest::load(dir)?,
        })
    }

    /// Path of one of this directory's outputs after checking it exists and
    /// matches the hash its manifest recorded.
    pub fn verified(&self, name: &str) -> Result<(PathBuf, String)> {
        let stage = self
            .manifest
            .last()
            .ok_or_else(|| CliError::MissingArtifact(self.dir.join(MANIFEST_FILE)))?;
        let stage_dir = self.dir.join(&stage.dir);
        let recorded = stage
            .outputs
            .iter()
            .find(|o| o.path == name)
            .ok_or_else(|| CliError::MissingArtifact(stage_dir.join(name)))?;
        let path = stage_dir.join(name);
        let actual = sha256_file(&path)?;
        if actual != recorded.sha256 {
            return Err(CliError::HashMismatch {
                path,
                expected: recorded.sha256.clone(),
                actual,
            });
        }
        Ok((path, actual))
    }
}

/// Accumulates one command's stage and writes the manifest at the end.
pub struct ManifestBuilder {
    out: PathBuf,
    config_hash: String,
    seed: u64,
    upstream_stages: Vec<Stage>,
    stage: Stage,
}

impl ManifestBuilder {
    pub fn new(command: &str, out: &Path, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(CliError::io(format!("creating {}", out.display())))?;
        let config_hash = cfg.hash();
        Ok(Self {
            out: out.to_path_buf(),
            config_hash: config_hash.clone(),
            seed: cfg.seed,
            upstream_stages: Vec::new(),
            stage: Stage {
                command: command.to_string(),
                args: BTreeMap::new(),
                config_hash,
                seed: cfg.seed,
                dir: ".".to_string(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) {
        self.stage.args.insert(key.to_string(), value.to_string());
    }

    /// Prepends the upstream stage chain, rebased onto this output directory.
    /// Refuses an output directory that holds any stage of the chain, since
    /// writing there would overwrite an input.
    pub fn chain(&mut self, up: &Upstream) -> Result<()> {
        let out = std::fs::canonicalize(&self.out).map_err(CliError::io(format!("resolving {}", self.out.display())))?;
        for s in &up.manifest.stages {
            if std::fs::canonicalize(up.dir.join(&s.dir)).is_ok_and(|d| d == out) {
                return Err(CliError::Config(format!(
                    "output directory {} already holds the {} stage this command reads from",
                    self.out.display(),
                    s.command
                )));
            }
        }
        for s in &up.manifest.stages {
            let mut s = s.clone();
            s.dir = relative(&self.out, &up.dir.join(&s.dir))?;
            if !self.upstream_stages.contains(&s) {
                self.upstream_stages.push(s);
            }
        }
        Ok(())
    }

    /// Verifies an upstream output and records it as an input.
    pub fn input(&mut self, up: &Upstream, name: &str) -> Result<PathBuf> {
        let (path, sha256) = up.verified(name)?;
        let rel = relative(&self.out, &path)?;
        if !self.stage.inputs.iter().any(|i| i.path == rel) {
            self.stage.inputs.push(ArtifactRef { path: rel, sha256 });
        }
        Ok(path)
    }

    /// Writes an output file and records its hash.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes.as_ref()).map_err(CliError::io(format!("writing {}", path.display())))?;
        self.stage.outputs.push(ArtifactRef {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes.as_ref())),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(extubation_core::Error::from)?;
        bytes.push(b'\n');
        self.write(name, bytes)
    }

    pub fn finish(self) -> Result<RunManifest> {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok());
        let mut stages = self.upstream_stages;
        stages.push(self.stage);
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config_hash,
            seed: self.seed,
            timestamp,
            stages,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(extubation_core::Error::from)?;
        bytes.push(b'\n');
        let path = self.out.join(MANIFEST_FILE);
        std::fs::write(&path, bytes).map_err(CliError::io(format!("writing {}", path.display())))?;
        Ok(manifest)
    }
}
