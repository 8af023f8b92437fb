//! Turning manifests into BOLD runs and convolved designs.

use std::path::{Path, PathBuf};

use lscale_core::design::{build_design_with_kernel, glover_hrf, trim_rows, HrfKernel, DEFAULT_HRF_LENGTH, DEFAULT_OVERSAMPLING};
use lscale_core::matio::{self, EventList, ModelEntry, ModelManifest, StudyManifest};
use lscale_core::preprocess::{average_subject_pipeline, clean_run, trim_run, trim_scans, BoldRun};
use lscale_core::{Mask, VoxelGeometry};
use nalgebra::DMatrix;

use crate::error::{CliError, Result};
use crate::out::Provenance;

pub struct Study {
    pub manifest: StudyManifest,
    pub path: PathBuf,
    pub geometry: VoxelGeometry,
    /// One list per run, manifest order.
    pub events: Vec<EventList>,
}

fn require_files(paths: &[PathBuf]) -> Result<()> {
    match paths.iter().find(|p| !p.is_file()) {
        Some(p) => Err(CliError::validation(format!("missing input {}", p.display()))),
        None => Ok(()),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl Study {
    /// Parse the manifest, check that every referenced file exists, and read
    /// the small tables.
    pub fn load(path: &Path) -> Result<Study> {
        let manifest = matio::read_study_manifest(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
        require_files(&manifest.referenced_paths())?;
        let geometry = matio::read_geometry(&manifest.resolve(&manifest.geometry_path))?;
        let events = manifest
            .runs
            .iter()
            .map(|r| matio::read_events(&manifest.resolve(&r.events_path)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Study {
            manifest,
            path: path.to_path_buf(),
            geometry,
            events,
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.geometry.len()
    }

    pub fn tr(&self) -> f64 {
        self.manifest.tr
    }

    pub fn trim(&self) -> usize {
        trim_scans(self.manifest.trim_seconds, self.manifest.tr)
    }

    pub fn kernel(&self) -> Result<HrfKernel> {
        Ok(glover_hrf(self.tr(), DEFAULT_OVERSAMPLING, DEFAULT_HRF_LENGTH)?)
    }

    /// Record the manifest and every file it references.
    pub fn add_inputs(&self, prov: &mut Provenance) -> Result<()> {
        prov.add_input(file_name(&self.path), &self.path)?;
        let m = &self.manifest;
        let mut rel: Vec<&Path> = vec![&m.geometry_path];
        rel.extend(m.mask_path.as_deref());
        for r in &m.runs {
            rel.push(&r.events_path);
            rel.extend(r.bold_path.as_deref());
        }
        for s in &m.subjects {
            rel.extend(s.runs.iter().map(|r| r.bold_path.as_path()));
        }
        for p in rel {
            prov.add_input(p.display().to_string(), &m.resolve(p))?;
        }
        Ok(())
    }

    /// `--mask` if given, else the manifest mask, else every voxel.
    pub fn mask(&self, flag: Option<&Path>) -> Result<Mask> {
        let n = self.n_voxels();
        let path = flag.map(Path::to_path_buf).or_else(|| self.manifest.mask_path.as_ref().map(|p| self.manifest.resolve(p)));
        match path {
            Some(p) => {
                let m = matio::read_mask(&p, n)?;
                if m.count() == 0 {
                    return Err(CliError::validation(format!("mask {} selects no voxels", p.display())));
                }
                Ok(m)
            }
            None => Ok(Mask::full(n, "all")),
        }
    }

    fn read_bold(&self, rel: &Path, run_id: usize, n_scans: usize) -> Result<BoldRun> {
        let path = self.manifest.resolve(rel);
        let m = matio::read_matrix(&path)?;
        if m.shape() != (n_scans, self.n_voxels()) {
            return Err(CliError::validation(format!(
                "{}: shape {:?}, expected ({n_scans}, {})",
                path.display(),
                m.shape(),
                self.n_voxels()
            )));
        }
        Ok(BoldRun::new(m.to_dmatrix(), self.tr(), run_id))
    }

    fn clean(&self, run: &BoldRun) -> Result<BoldRun> {
        Ok(match &self.manifest.preprocess {
            Some(spec) => clean_run(run, spec)?,
            None => run.clone(),
        })
    }

    /// Runs `[subject][run]` in manifest run order, raw.
    fn subject_bold(&self) -> Result<Vec<Vec<BoldRun>>> {
        self.manifest
            .subjects
            .iter()
            .map(|s| {
                self.manifest
                    .runs
                    .iter()
                    .map(|r| {
                        let sr = s.runs.iter().find(|x| x.run_id == r.run_id).expect("validated manifest");
                        self.read_bold(&sr.bold_path, r.run_id, r.n_scans)
                    })
                    .collect()
            })
            .collect()
    }

    /// Group-level runs, cleaned, trimmed and standardized.
    pub fn group_runs(&self) -> Result<Vec<BoldRun>> {
        let trim = self.manifest.trim_seconds;
        if self.manifest.runs.iter().all(|r| r.bold_path.is_some()) {
            return self
                .manifest
                .runs
                .iter()
                .map(|r| {
                    let raw = self.read_bold(r.bold_path.as_deref().expect("checked"), r.run_id, r.n_scans)?;
                    Ok(trim_run(&self.clean(&raw)?, trim)?)
                })
                .collect();
        }
        let subjects = self.subject_bold()?;
        Ok(average_subject_pipeline(&subjects, self.manifest.preprocess.as_ref(), trim)?)
    }

    /// Per-subject runs, cleaned, trimmed and standardized.
    pub fn subject_runs(&self) -> Result<Vec<Vec<BoldRun>>> {
        if self.manifest.subjects.is_empty() {
            return Err(CliError::validation(format!(
                "{} lists no subjects; ISC needs per-subject runs",
                self.path.display()
            )));
        }
        let trim = self.manifest.trim_seconds;
        self.subject_bold()?
            .iter()
            .map(|runs| runs.iter().map(|r| Ok(trim_run(&self.clean(r)?, trim)?)).collect())
            .collect()
    }
}

pub struct Models {
    pub manifest: ModelManifest,
    pub path: PathBuf,
}

impl Models {
    /// Parse and check that each model covers every study run and that all
    /// feature files exist.
    pub fn load(path: &Path, study: &Study) -> Result<Models> {
        let manifest = matio::read_model_manifest(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
        require_files(&manifest.referenced_paths())?;
        for m in &manifest.models {
            for r in &study.manifest.runs {
                if !m.runs.iter().any(|x| x.run_id == r.run_id) {
                    return Err(CliError::validation(format!(
                        "model {:?} has no features for study run {}",
                        m.name, r.run_id
                    )));
                }
            }
        }
        Ok(Models {
            manifest,
            path: path.to_path_buf(),
        })
    }

    /// Models named in `only` (all when empty), manifest order.
    pub fn select(&self, only: &[String]) -> Result<Vec<&ModelEntry>> {
        if let Some(missing) = only.iter().find(|n| !self.manifest.models.iter().any(|m| &m.name == *n)) {
            return Err(CliError::validation(format!("no model named {missing:?} in {}", self.path.display())));
        }
        Ok(self
            .manifest
            .models
            .iter()
            .filter(|m| only.is_empty() || only.contains(&m.name))
            .collect())
    }

    pub fn add_inputs(&self, prov: &mut Provenance, models: &[&ModelEntry]) -> Result<()> {
        prov.add_input(file_name(&self.path), &self.path)?;
        for m in models {
            for r in &m.runs {
                for p in &r.layer_feature_paths {
                    prov.add_input(p.display().to_string(), &self.manifest.resolve(p))?;
                }
            }
        }
        Ok(())
    }

    /// Trimmed designs `[layer][run]`, runs in study order.
    pub fn designs(&self, model: &ModelEntry, study: &Study, kernel: &HrfKernel) -> Result<Vec<Vec<DMatrix<f64>>>> {
        let trim = study.trim();
        (0..=model.n_layers)
            .map(|layer| {
                study
                    .manifest
                    .runs
                    .iter()
                    .zip(&study.events)
                    .map(|(run, events)| {
                        let mr = model.runs.iter().find(|x| x.run_id == run.run_id).expect("checked on load");
                        let path = self.manifest.resolve(&mr.layer_feature_paths[layer]);
                        let features = matio::read_matrix(&path)?.to_dmatrix();
                        let design = build_design_with_kernel(&features, events, run.n_scans, kernel)
                            .map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
                        Ok(trim_rows(&design, trim))
                    })
                    .collect()
            })
            .collect()
    }
}
