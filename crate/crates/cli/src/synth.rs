//! `lscale synth`: write a synthetic study (or ISC cohort) as manifests plus
//! matrix files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use lscale_core::matio::tables::format_events;
use lscale_core::matio::manifest::{ModelRun, RunEntry, SubjectEntry, SubjectRun, SCHEMA_VERSION};
use lscale_core::matio::{Dtype, EventList, Matrix2D, ModelEntry, ModelManifest, StudyManifest};
use lscale_core::synth::{gen_isc_cohort, gen_study, mirrored_geometry, IscCohortConfig, Lateralization, SynthConfig};
use lscale_core::VoxelGeometry;
use serde_json::json;

use crate::error::{io_write, CliError, Result};
use crate::out::{OutputDir, Provenance};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 9)]
    pub runs: usize,
    #[arg(long, default_value_t = 300)]
    pub scans: usize,
    #[arg(long, default_value_t = 200)]
    pub voxels: usize,
    #[arg(long, default_value_t = 2.0)]
    pub tr: f64,
    /// Measurement noise SD (signal has unit variance).
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Lag-one autocorrelation of the measurement noise.
    #[arg(long, default_value_t = 0.0)]
    pub ar1: f64,
    /// Latent sizes of the model family.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
    pub dims: Vec<usize>,
    #[arg(long, default_value = "symmetric", value_parser = parse_lateralization)]
    pub lateralization: Lateralization,
    /// Hidden layers per model (each also gets an embedding layer).
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// SD of model-specific feature noise.
    #[arg(long, default_value_t = 0.0)]
    pub model_noise: f64,
    /// Write a multi-subject cohort for `isc` instead of a model study.
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Subject noise variance in cohort mode (shared signal has variance 1).
    #[arg(long, default_value_t = 1.0)]
    pub subject_noise: f64,
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    pub dtype: Dtype,
    #[arg(long)]
    pub force: bool,
}

pub fn parse_lateralization(s: &str) -> std::result::Result<Lateralization, String> {
    Lateralization::parse(s).ok_or_else(|| format!("expected symmetric or left-only, got {s:?}"))
}

pub fn parse_dtype(s: &str) -> std::result::Result<Dtype, String> {
    Dtype::parse(s).ok_or_else(|| format!("expected f32 or f64, got {s:?}"))
}

fn run_file(run: usize) -> String {
    format!("run-{run:02}")
}

fn write_geometry(out: &OutputDir, g: &VoxelGeometry) -> Result<()> {
    lscale_core::matio::write_geometry(&out.path("geometry.tsv"), g).map_err(io_write)
}

fn write_study(out: &OutputDir, m: &StudyManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).expect("plain data");
    text.push('\n');
    out.bytes("study.json", text.as_bytes())
}

pub fn run(args: &SynthArgs) -> Result<()> {
    match args.subjects {
        Some(n) => cohort(args, n),
        None => study(args),
    }
}

fn study(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_runs: args.runs,
        n_scans_per_run: args.scans,
        n_voxels: args.voxels,
        tr: args.tr,
        noise_sigma: args.noise,
        noise_ar1: args.ar1,
        family_dims: args.dims.clone(),
        lateralization: args.lateralization,
        n_layers: args.layers,
        model_noise: args.model_noise,
        seed: args.seed,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    let s = gen_study(&cfg)?;

    let mut prov = Provenance::new("synth");
    prov.seed = Some(args.seed);
    let out = OutputDir::open(&args.out, prov, args.force)?;
    write_geometry(&out, &s.geometry)?;

    let mut runs = Vec::new();
    for (k, (bold, events)) in s.bold.iter().zip(&s.events).enumerate() {
        let bold_rel = format!("bold/{}.npy", run_file(k));
        let events_rel = format!("events/{}.tsv", run_file(k));
        out.matrix(&bold_rel, &Matrix2D::from_dmatrix(&bold.data, args.dtype))?;
        out.bytes(&events_rel, format_events(events).as_bytes())?;
        runs.push(RunEntry {
            run_id: k,
            bold_path: Some(bold_rel.into()),
            events_path: events_rel.into(),
            n_scans: bold.n_scans(),
        });
    }
    write_study(
        &out,
        &StudyManifest {
            schema: SCHEMA_VERSION,
            tr: cfg.tr,
            trim_seconds: 0.0,
            geometry_path: "geometry.tsv".into(),
            mask_path: None,
            preprocess: None,
            runs,
            subjects: Vec::new(),
            base_dir: PathBuf::new(),
        },
    )?;

    let mut models = Vec::new();
    for m in &s.models {
        let name = &m.meta.name;
        let mut model_runs: Vec<ModelRun> = (0..cfg.n_runs)
            .map(|k| ModelRun {
                run_id: k,
                layer_feature_paths: Vec::new(),
            })
            .collect();
        for (l, per_run) in m.features.iter().enumerate() {
            for (k, f) in per_run.iter().enumerate() {
                let rel = format!("features/{name}/{}_layer-{l:02}.npy", run_file(k));
                out.matrix(&rel, &Matrix2D::from_dmatrix(f, args.dtype))?;
                model_runs[k].layer_feature_paths.push(rel.into());
            }
        }
        let mut covariates = BTreeMap::new();
        covariates.insert("latent_dims".to_string(), m.meta.n_neurons as f64);
        models.push(ModelEntry {
            name: name.clone(),
            family: m.meta.family.clone(),
            n_parameters: m.meta.n_parameters,
            n_layers: m.meta.n_layers,
            n_neurons: m.meta.n_neurons,
            runs: model_runs,
            covariates,
            checkpoint: None,
        });
    }
    let manifest = ModelManifest {
        schema: SCHEMA_VERSION,
        models,
        base_dir: PathBuf::new(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("plain data");
    text.push('\n');
    out.bytes("models.json", text.as_bytes())?;

    let mean_ceiling = s.truth.ceiling.iter().sum::<f64>() / s.truth.ceiling.len() as f64;
    out.json(
        "truth.json",
        &json!({
            "config": {
                "n_runs": cfg.n_runs,
                "n_scans_per_run": cfg.n_scans_per_run,
                "n_voxels": cfg.n_voxels,
                "tr": cfg.tr,
                "noise_sigma": cfg.noise_sigma,
                "noise_ar1": cfg.noise_ar1,
                "family_dims": cfg.family_dims,
                "lateralization": cfg.lateralization.as_str(),
                "n_layers": cfg.n_layers,
                "model_noise": cfg.model_noise,
                "oversampling": cfg.oversampling,
                "seed": cfg.seed,
            },
            "mean_ceiling": mean_ceiling,
            "ceiling": s.truth.ceiling,
            "hemisphere": s.truth.hemisphere.iter().map(|h| h.as_str()).collect::<Vec<_>>(),
        }),
    )?;
    out.finish()
}

fn cohort(args: &SynthArgs, n_subjects: usize) -> Result<()> {
    if args.voxels % 2 != 0 {
        return Err(CliError::validation("--voxels must be even (mirror pairs)"));
    }
    let cfg = IscCohortConfig {
        n_subjects,
        shared_var: 1.0,
        noise_var: args.subject_noise,
        n_scans: args.scans * args.runs,
        n_runs: args.runs,
        n_voxels: args.voxels,
        tr: args.tr,
        seed: args.seed,
    };
    let subjects = gen_isc_cohort(&cfg)?;
    let mut prov = Provenance::new("synth");
    prov.seed = Some(args.seed);
    let out = OutputDir::open(&args.out, prov, args.force)?;
    write_geometry(&out, &mirrored_geometry(args.voxels))?;

    let empty = format_events(&EventList::new(Vec::new()).expect("empty list is valid"));
    let mut runs = Vec::new();
    for k in 0..args.runs {
        let events_rel = format!("events/{}.tsv", run_file(k));
        out.bytes(&events_rel, empty.as_bytes())?;
        runs.push(RunEntry {
            run_id: k,
            bold_path: None,
            events_path: events_rel.into(),
            n_scans: args.scans,
        });
    }
    let mut entries = Vec::new();
    for (s, subject) in subjects.iter().enumerate() {
        let id = format!("sub-{s:02}");
        let mut sr = Vec::new();
        for (k, run) in subject.iter().enumerate() {
            let rel = format!("bold/{id}/{}.npy", run_file(k));
            out.matrix(&rel, &Matrix2D::from_dmatrix(&run.data, args.dtype))?;
            sr.push(SubjectRun {
                run_id: k,
                bold_path: rel.into(),
            });
        }
        entries.push(SubjectEntry { subject_id: id, runs: sr });
    }
    write_study(
        &out,
        &StudyManifest {
            schema: SCHEMA_VERSION,
            tr: args.tr,
            trim_seconds: 0.0,
            geometry_path: "geometry.tsv".into(),
            mask_path: None,
            preprocess: None,
            runs,
            subjects: entries,
            base_dir: PathBuf::new(),
        },
    )?;
    out.finish()
}
