//! JSON manifests describing a study (BOLD runs, events, geometry) and a set
//! of models (per-run, per-layer feature files and covariates).
//!
//! Relative paths are resolved against the directory holding the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, MatioError};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_err(path: impl Into<String>, msg: impl Into<String>) -> MatioError {
    MatioError::Schema {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    /// High-pass cutoff in seconds; `null` disables the filter.
    #[serde(default = "default_cutoff")]
    pub highpass_cutoff: Option<f64>,
    #[serde(default = "yes")]
    pub detrend: bool,
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn default_cutoff() -> Option<f64> {
    Some(128.0)
}

fn yes() -> bool {
    true
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            highpass_cutoff: default_cutoff(),
            detrend: true,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub run_id: usize,
    /// Group-level BOLD matrix (scans x voxels). May be omitted when the
    /// manifest lists subjects, in which case the group average is built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bold_path: Option<PathBuf>,
    pub events_path: PathBuf,
    pub n_scans: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRun {
    pub run_id: usize,
    pub bold_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub runs: Vec<SubjectRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    pub schema: u32,
    pub tr: f64,
    #[serde(default)]
    pub trim_seconds: f64,
    pub geometry_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    /// Temporal cleaning applied to every BOLD input before averaging.
    /// Absent means inputs are used as given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessSpec>,
    pub runs: Vec<RunEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subjects: Vec<SubjectEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl StudyManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> Result<(), MatioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(schema_err(
                "schema",
                format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        if !(self.tr.is_finite() && self.tr > 0.0) {
            return Err(schema_err("tr", "must be a positive number of seconds"));
        }
        if !(self.trim_seconds.is_finite() && self.trim_seconds >= 0.0) {
            return Err(schema_err("trim_seconds", "must be >= 0"));
        }
        if let Some(pp) = &self.preprocess {
            if let Some(c) = pp.highpass_cutoff {
                if !(c.is_finite() && c > 2.0 * self.tr) {
                    return Err(schema_err(
                        "preprocess.highpass_cutoff",
                        "must exceed twice the TR",
                    ));
                }
            }
        }
        if self.runs.is_empty() {
            return Err(schema_err("runs", "at least one run is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, r) in self.runs.iter().enumerate() {
            if !ids.insert(r.run_id) {
                return Err(schema_err(format!("runs[{i}].run_id"), "duplicate run id"));
            }
            if r.n_scans == 0 {
                return Err(schema_err(format!("runs[{i}].n_scans"), "must be positive"));
            }
            if r.bold_path.is_none() && self.subjects.is_empty() {
                return Err(schema_err(
                    format!("runs[{i}].bold_path"),
                    "required when no subjects are listed",
                ));
            }
        }
        let mut subject_ids = BTreeSet::new();
        for (s, subj) in self.subjects.iter().enumerate() {
            if !subject_ids.insert(subj.subject_id.as_str()) {
                return Err(schema_err(
                    format!("subjects[{s}].subject_id"),
                    "duplicate subject id",
                ));
            }
            let theirs: BTreeSet<usize> = subj.runs.iter().map(|r| r.run_id).collect();
            if theirs != ids || theirs.len() != subj.runs.len() {
                return Err(schema_err(
                    format!("subjects[{s}].runs"),
                    "must list each study run id exactly once",
                ));
            }
        }
        Ok(())
    }

    /// Every referenced file, resolved.
    pub fn referenced_paths(&self) -> Vec<PathBuf> {
        let mut out = vec![self.resolve(&self.geometry_path)];
        out.extend(self.mask_path.iter().map(|p| self.resolve(p)));
        for r in &self.runs {
            out.push(self.resolve(&r.events_path));
            out.extend(r.bold_path.iter().map(|p| self.resolve(p)));
        }
        for s in &self.subjects {
            out.extend(s.runs.iter().map(|r| self.resolve(&r.bold_path)));
        }
        out
    }

    /// Run ids in manifest order.
    pub fn run_ids(&self) -> Vec<usize> {
        self.runs.iter().map(|r| r.run_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRun {
    pub run_id: usize,
    /// One words x neurons matrix per layer, embedding layer first.
    pub layer_feature_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub family: String,
    pub n_parameters: u64,
    pub n_layers: usize,
    pub n_neurons: usize,
    pub runs: Vec<ModelRun>,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Model description used by the statistics layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub family: String,
    pub n_parameters: u64,
    pub n_layers: usize,
    pub n_neurons: usize,
    #[serde(default)]
    pub covariates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl ModelMeta {
    pub fn log10_params(&self) -> f64 {
        (self.n_parameters as f64).log10()
    }
}

impl From<&ModelEntry> for ModelMeta {
    fn from(m: &ModelEntry) -> Self {
        ModelMeta {
            name: m.name.clone(),
            family: m.family.clone(),
            n_parameters: m.n_parameters,
            n_layers: m.n_layers,
            n_neurons: m.n_neurons,
            covariates: m.covariates.clone(),
            checkpoint: m.checkpoint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub schema: u32,
    pub models: Vec<ModelEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Model names end up in file names.
fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl ModelManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn validate(&self) -> Result<(), MatioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(schema_err(
                "schema",
                format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        let mut names = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            let at = |field: &str| format!("models[{i}].{field}");
            if !valid_name(&m.name) {
                return Err(schema_err(at("name"), "must be non-empty [A-Za-z0-9._-]"));
            }
            if !names.insert(m.name.as_str()) {
                return Err(schema_err(at("name"), "duplicate model name"));
            }
            if m.n_parameters == 0 {
                return Err(schema_err(at("n_parameters"), "must be positive"));
            }
            if m.runs.is_empty() {
                return Err(schema_err(at("runs"), "at least one run is required"));
            }
            let mut run_ids = BTreeSet::new();
            for (k, r) in m.runs.iter().enumerate() {
                if !run_ids.insert(r.run_id) {
                    return Err(schema_err(at(&format!("runs[{k}].run_id")), "duplicate run id"));
                }
                if r.layer_feature_paths.len() != m.n_layers + 1 {
                    return Err(schema_err(
                        at(&format!("runs[{k}].layer_feature_paths")),
                        format!(
                            "expected n_layers + 1 = {} files, found {}",
                            m.n_layers + 1,
                            r.layer_feature_paths.len()
                        ),
                    ));
                }
            }
            for (name, v) in &m.covariates {
                if !v.is_finite() {
                    return Err(schema_err(at(&format!("covariates.{name}")), "must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn metas(&self) -> Vec<ModelMeta> {
        self.models.iter().map(ModelMeta::from).collect()
    }

    pub fn referenced_paths(&self) -> Vec<PathBuf> {
        self.models
            .iter()
            .flat_map(|m| m.runs.iter())
            .flat_map(|r| r.layer_feature_paths.iter())
            .map(|p| self.resolve(p))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Manifest {
    Study(StudyManifest),
    Models(ModelManifest),
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, MatioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema_err(path, e.into_inner().to_string())
    })
}

fn base_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn parse_study_manifest(text: &str, base_dir: &Path) -> Result<StudyManifest, MatioError> {
    let mut m: StudyManifest = parse_json(text)?;
    m.base_dir = base_dir.to_path_buf();
    m.validate()?;
    Ok(m)
}

pub fn parse_model_manifest(text: &str, base_dir: &Path) -> Result<ModelManifest, MatioError> {
    let mut m: ModelManifest = parse_json(text)?;
    m.base_dir = base_dir.to_path_buf();
    m.validate()?;
    Ok(m)
}

pub fn read_study_manifest(path: &Path) -> Result<StudyManifest, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_study_manifest(&text, &base_of(path))
}

pub fn read_model_manifest(path: &Path) -> Result<ModelManifest, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_model_manifest(&text, &base_of(path))
}

/// Read either manifest kind, told apart by a top-level `models` key.
pub fn read_manifest(path: &Path) -> Result<Manifest, MatioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| schema_err("", e.to_string()))?;
    if probe.get("models").is_some() {
        Ok(Manifest::Models(parse_model_manifest(&text, &base_of(path))?))
    } else {
        Ok(Manifest::Study(parse_study_manifest(&text, &base_of(path))?))
    }
}
