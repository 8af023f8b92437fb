//! `lscale fit` and `lscale isc`: score maps from a study.

use std::path::PathBuf;

use clap::Args;
use lscale_core::encoder::{nested_cv_score, AlphaGrid, CvConfig, FactorCache, InnerCv};
use lscale_core::matio::{Dtype, ModelMeta};
use lscale_core::preprocess::top_fraction;
use lscale_core::reliability::{isc, IscConfig};

use crate::cache::DiskCache;
use crate::error::{io_write, CliError, Result};
use crate::out::{num, OutputDir, Provenance};
use crate::store::{write_map, Sidecar, SplitJson};
use crate::study::{Models, Study};
use crate::synth::parse_dtype;

pub fn parse_alphas(s: &str) -> std::result::Result<AlphaGrid, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [min, max, count] = parts[..] else {
        return Err(format!("expected min,max,count, got {s:?}"));
    };
    let min: f64 = min.parse().map_err(|_| format!("bad minimum {min:?}"))?;
    let max: f64 = max.parse().map_err(|_| format!("bad maximum {max:?}"))?;
    let count: usize = count.parse().map_err(|_| format!("bad count {count:?}"))?;
    AlphaGrid::logspace(min, max, count).map_err(|e| e.to_string())
}

pub fn parse_inner(s: &str) -> std::result::Result<InnerCv, String> {
    InnerCv::parse(s).ok_or_else(|| format!("expected single or rotate, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct EncoderArgs {
    /// Ridge penalty grid as min,max,count (log-spaced).
    #[arg(long, default_value = "1e2,1e7,16", value_parser = parse_alphas)]
    pub alphas: AlphaGrid,
    #[arg(long, default_value = "single", value_parser = parse_inner)]
    pub inner_cv: InnerCv,
    /// Voxel mask table (voxel_id column); defaults to the study mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Element type of the written score matrices.
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    pub dtype: Dtype,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub study: PathBuf,
    #[arg(long)]
    pub models: PathBuf,
    /// Fit only these models (repeatable).
    #[arg(long = "model")]
    pub only: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub enc: EncoderArgs,
    /// Directory for cached ridge factorizations.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let study = Study::load(&args.study)?;
    let models = Models::load(&args.models, &study)?;
    let selected = models.select(&args.only)?;
    if selected.is_empty() {
        return Err(CliError::validation("no models to fit"));
    }
    let mask = study.mask(args.enc.mask.as_deref())?;
    let kernel = study.kernel()?;

    let mut prov = Provenance::new("fit");
    prov.alpha_grid = Some(args.enc.alphas.values().to_vec());
    study.add_inputs(&mut prov)?;
    models.add_inputs(&mut prov, &selected)?;
    if let Some(m) = &args.enc.mask {
        prov.add_input("--mask", m)?;
    }

    let bold: Vec<_> = study.group_runs()?.into_iter().map(|r| r.data).collect();
    let cache = args.cache.as_deref().map(DiskCache::new);
    let cfg = CvConfig {
        inner: args.enc.inner_cv,
        cache: cache.as_ref().map(|c| c as &dyn FactorCache),
    };
    let out = OutputDir::open(&args.out, prov, args.force)?;
    let mut index = Vec::new();
    for entry in selected {
        let designs = models.designs(entry, &study, &kernel)?;
        let map = nested_cv_score(&entry.name, &designs, &bold, &args.enc.alphas, &mask, &cfg)
            .map_err(|e| CliError::from(e).context(&format!("model {}", entry.name)))?;
        let meta = ModelMeta::from(entry);
        let mut side = Sidecar::describe(&map, Some(&meta), &mask);
        side.inner_cv = Some(args.enc.inner_cv.as_str().to_string());
        write_map(&out, &format!("scores/{}", entry.name), &map, &side, args.enc.dtype)?;
        index.push(vec![
            entry.name.clone(),
            entry.n_parameters.to_string(),
            num(meta.log10_params()),
            side.mean.map(num).unwrap_or_else(|| "nan".into()),
        ]);
    }
    out.tsv("scores/index.tsv", &["model", "n_parameters", "log10_params", "mean_r"], &index)?;
    out.finish()
}

#[derive(Debug, Args)]
pub struct IscArgs {
    #[arg(long)]
    pub study: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only let group B predict group A.
    #[arg(long)]
    pub one_direction: bool,
    /// Fraction of voxels written to masks/reliable.tsv.
    #[arg(long, default_value_t = 0.25)]
    pub reliable: f64,
    #[command(flatten)]
    pub enc: EncoderArgs,
    #[arg(long)]
    pub force: bool,
}

pub fn run_isc(args: &IscArgs) -> Result<()> {
    if !(args.reliable > 0.0 && args.reliable <= 1.0) {
        return Err(CliError::validation("--reliable must lie in (0, 1]"));
    }
    let study = Study::load(&args.study)?;
    let mask = study.mask(args.enc.mask.as_deref())?;
    let mut prov = Provenance::new("isc");
    prov.seed = Some(args.seed);
    prov.alpha_grid = Some(args.enc.alphas.values().to_vec());
    study.add_inputs(&mut prov)?;
    if let Some(m) = &args.enc.mask {
        prov.add_input("--mask", m)?;
    }
    let subjects = study.subject_runs()?;
    let cfg = IscConfig {
        n_splits: args.splits,
        seed: args.seed,
        both_directions: !args.one_direction,
        grid: args.enc.alphas.clone(),
        inner: args.enc.inner_cv,
    };
    let out = OutputDir::open(&args.out, prov, args.force)?;
    let result = isc(&subjects, &mask, &cfg)?;
    let mut side = Sidecar::describe(&result.map, None, &mask);
    side.inner_cv = Some(args.enc.inner_cv.as_str().to_string());
    side.splits = result
        .splits
        .iter()
        .map(|s| SplitJson {
            seed: s.seed,
            group_a: s.group_a.clone(),
            group_b: s.group_b.clone(),
        })
        .collect();
    write_map(&out, "isc/isc", &result.map, &side, args.enc.dtype)?;
    let reliable = top_fraction(&result.map.values, &mask, args.reliable, "reliable")?;
    lscale_core::matio::write_mask(&out.path("masks/reliable.tsv"), &reliable).map_err(io_write)?;
    out.finish()
}
