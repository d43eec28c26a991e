//! Run manifests: everything needed to reproduce an output file, written
//! next to it. A manifest never contains timestamps or host details — two
//! runs with the same inputs and parameters produce byte-identical
//! manifests, which is what makes "rerun and compare" a meaningful check.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct PipelineManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// On-disk format identifiers, recorded so a manifest pins not just the
    /// parameters but the encodings they produced.
    pub formats: Formats,
    pub inputs: Vec<InputDigest>,
    /// Full parameter set, defaults included.
    pub params: serde_json::Value,
}

#[derive(Serialize)]
pub struct Formats {
    pub vocab: &'static str,
    pub cooc: &'static str,
    pub checkpoint: &'static str,
}

impl Default for Formats {
    fn default() -> Self {
        Self {
            vocab: "tsv-v1",
            cooc: "LXF1",
            checkpoint: "LXM1",
        }
    }
}

#[derive(Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl PipelineManifest {
    pub fn new(command: &'static str, params: serde_json::Value) -> Self {
        Self {
            tool: "lexfact",
            version: env!("CARGO_PKG_VERSION"),
            command,
            formats: Formats::default(),
            inputs: Vec::new(),
            params,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        lexfact::atomic_write(path, |out| {
            out.write_all(json.as_bytes())?;
            out.write_all(b"\n")
        })
        .with_context(|| format!("writing manifest {}", path.display()))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("reading input {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .with_context(|| format!("reading input {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}
