//! Output directory handling: provenance, atomic writes and the marker that
//! flags an interrupted command.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lscale_core::matio::{self, Matrix2D};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_write, CliError, Result};

pub const PARTIAL_MARKER: &str = ".lscale-partial";

/// Attached to every output: what produced it and from which inputs.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_grid: Option<Vec<f64>>,
    /// Input name (as referenced, not absolute) to sha256.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str) -> Self {
        Provenance {
            tool: "lscale",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed: None,
            alpha_grid: None,
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), digest_file(path)?);
        Ok(())
    }

    /// Combined digest over the sorted input names and digests.
    pub fn inputs_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, digest) in &self.inputs {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(digest.as_bytes());
            h.update([0]);
        }
        hex(&h.finalize())
    }

    /// One-line form for tables; the full input list lives in JSON outputs.
    fn header_line(&self) -> String {
        let mut line = format!("# {} {} {}", self.tool, self.version, self.command);
        if let Some(seed) = self.seed {
            line.push_str(&format!(" seed={seed}"));
        }
        if let Some(grid) = &self.alpha_grid {
            let (lo, hi) = (grid.first().copied().unwrap_or(f64::NAN), grid.last().copied().unwrap_or(f64::NAN));
            line.push_str(&format!(" alphas={lo:e}..{hi:e}x{}", grid.len()));
        }
        line.push_str(&format!(" inputs_sha256={}\n", self.inputs_digest()));
        line
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Holds the partial-output marker while a command writes. Dropping it before
/// `finish` keeps the marker only if something was written.
pub struct OutputDir {
    root: PathBuf,
    provenance: Provenance,
    written: Cell<bool>,
    finished: bool,
}

impl OutputDir {
    /// Create `root` and drop the partial-output marker. A marker left by an
    /// earlier run is an error unless `force` is set.
    pub fn open(root: &Path, provenance: Provenance, force: bool) -> Result<Self> {
        let marker = root.join(PARTIAL_MARKER);
        if marker.exists() && !force {
            let what = std::fs::read_to_string(&marker).unwrap_or_default();
            return Err(CliError::validation(format!(
                "{} holds partial output from an interrupted `{}`; rerun with --force to overwrite",
                root.display(),
                what.trim()
            )));
        }
        matio::write_atomic(&marker, provenance.command.as_bytes()).map_err(io_write)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            provenance,
            written: Cell::new(false),
            finished: false,
        })
    }

    /// Path of an output about to be written.
    pub fn path(&self, rel: &str) -> PathBuf {
        self.written.set(true);
        self.root.join(rel)
    }

    pub fn bytes(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        matio::write_atomic(&self.path(rel), bytes).map_err(io_write)
    }

    pub fn matrix(&self, rel: &str, m: &Matrix2D) -> Result<()> {
        self.bytes(rel, &matio::encode_matrix(m))
    }

    /// Pretty JSON with the provenance under a `provenance` key.
    pub fn json<T: Serialize>(&self, rel: &str, body: &T) -> Result<()> {
        let mut value = serde_json::to_value(body).map_err(|e| CliError::runtime(e.to_string()))?;
        if let serde_json::Value::Object(map) = &mut value {
            map.insert(
                "provenance".into(),
                serde_json::to_value(&self.provenance).expect("plain data"),
            );
        }
        let mut text = serde_json::to_string_pretty(&value).expect("plain data");
        text.push('\n');
        self.bytes(rel, text.as_bytes())
    }

    /// Tab-separated table behind a `# provenance` comment line.
    pub fn tsv(&self, rel: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut text = self.provenance.header_line();
        text.push_str(&columns.join("\t"));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join("\t"));
            text.push('\n');
        }
        self.bytes(rel, text.as_bytes())
    }

    pub fn finish(mut self) -> Result<()> {
        self.finished = true;
        let marker = self.root.join(PARTIAL_MARKER);
        std::fs::remove_file(&marker).map_err(|e| CliError::runtime(format!("{}: {e}", marker.display())))
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.finished && !self.written.get() {
            let _ = std::fs::remove_file(self.root.join(PARTIAL_MARKER));
        }
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}
