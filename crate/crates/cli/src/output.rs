use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct Provenance {
    pub model_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(model_bytes: &[u8], seed: u64) -> Self {
        let digest = Sha256::digest(model_bytes);
        let model_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Provenance { model_sha256, seed }
    }

    pub fn csv_footer(&self) -> String {
        format!("# model_sha256={}, seed={}, version={}\n", self.model_sha256, self.seed, VERSION)
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::json!({ "model_sha256": self.model_sha256, "seed": self.seed, "version": VERSION })
    }
}

/// Files of one run. Nothing becomes visible in the output directory until
/// every file has been written to a temporary sibling.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, content: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), content.into()));
    }

    pub fn add_json(&mut self, name: &str, value: &serde_json::Value) {
        let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
        text.push('\n');
        self.add(name, text);
    }

    pub fn commit(self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, dir.join(name)));
        }
        let mut out = Vec::new();
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| e.error)?;
            out.push(path);
        }
        Ok(out)
    }
}
