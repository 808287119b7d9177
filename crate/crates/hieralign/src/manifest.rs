//! Run manifests: what a command was run with and every file it wrote.
//!
//! ```text
//! # hieralign manifest v1
//! command gen-data
//! tool_version 0.1.0
//! config <path or -> <hash>
//! seed 3
//! dataset <manifest hash or ->
//! file <path relative to the manifest> <sha256>
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::{read_text, write_file};
use crate::hash::{file_sha256, sha256_hex};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_path: String,
    pub config_hash: String,
    pub seed: u64,
    /// hash of the dataset manifest the run consumed
    pub dataset: Option<String>,
    /// relative path and sha256, in write order
    pub files: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: Option<&Path>, config_hash: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_path: config_path.map_or("-".into(), |p| p.display().to_string()),
            config_hash: config_hash.into(),
            seed,
            dataset: None,
            files: Vec::new(),
        }
    }

    /// Writes `bytes` under `dir` and records the file.
    pub fn write(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        write_file(&dir.join(rel), bytes)?;
        self.files.push((rel.into(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# hieralign manifest v1\n");
        let _ = writeln!(s, "command {}", self.command);
        let _ = writeln!(s, "tool_version {}", self.tool_version);
        let _ = writeln!(s, "config {} {}", self.config_path, self.config_hash);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "dataset {}", self.dataset.as_deref().unwrap_or("-"));
        for (p, h) in &self.files {
            let _ = writeln!(s, "file {p} {h}");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<RunManifest> {
        let bad = |m: String| Error::format(path, m);
        let mut lines = text.lines();
        if lines.next() != Some("# hieralign manifest v1") {
            return Err(bad("missing manifest header".into()));
        }
        let mut m = RunManifest::new("", None, "", 0);
        for l in lines {
            let (k, rest) = l.split_once(' ').unwrap_or((l, ""));
            match k {
                "command" => m.command = rest.into(),
                "tool_version" => m.tool_version = rest.into(),
                "config" => {
                    let (p, h) = rest.rsplit_once(' ').ok_or_else(|| bad(format!("bad line {l:?}")))?;
                    m.config_path = p.into();
                    m.config_hash = h.into();
                }
                "seed" => m.seed = rest.parse().map_err(|_| bad(format!("bad seed {rest:?}")))?,
                "dataset" => m.dataset = (rest != "-").then(|| rest.to_string()),
                "file" => {
                    let (p, h) = rest.rsplit_once(' ').ok_or_else(|| bad(format!("bad line {l:?}")))?;
                    m.files.push((p.into(), h.into()));
                }
                _ => return Err(bad(format!("unknown manifest line {l:?}"))),
            }
        }
        Ok(m)
    }

    /// Writes the manifest into `dir` and returns its hash.
    pub fn save(&self, dir: &Path) -> Result<String> {
        let text = self.render();
        write_file(&dir.join(MANIFEST), text.as_bytes())?;
        Ok(sha256_hex(text.as_bytes()))
    }

    /// Loads `dir/manifest.txt`, returning it with its hash.
    pub fn load(dir: &Path) -> Result<(RunManifest, String)> {
        let path = dir.join(MANIFEST);
        let text = read_text(&path)?;
        Ok((RunManifest::parse(&text, &path)?, sha256_hex(text.as_bytes())))
    }

    pub fn file_hash(&self, rel: &str) -> Option<&str> {
        self.files.iter().find(|(p, _)| p == rel).map(|(_, h)| h.as_str())
    }

    /// Recomputes every listed file's hash under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (rel, want) in &self.files {
            let got = file_sha256(&dir.join(rel))?;
            if &got != want {
                return Err(Error::Mismatch {
                    what: "file hash",
                    expected: format!("{rel}={want}"),
                    found: got,
                });
            }
        }
        Ok(())
    }

    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.files.iter().map(|(p, _)| dir.join(p)).collect()
    }
}
