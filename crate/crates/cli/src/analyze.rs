//! `lscale analyze <kind>`: statistics over the score maps of a fit.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use lscale_core::analysis::roi::{default_rois, mirror_roi, parcel_summary, roi_interaction_corr, roi_mask, roi_slope_ttest};
use lscale_core::analysis::{
    covariate_fit, layer_profile, lr_series, mean_score, normalize_by_isc, scaling_fit, voxelwise_slopes,
    DEFAULT_BOOTSTRAP, DEFAULT_ISC_FLOOR, SLOPE_P_THRESHOLD,
};
use lscale_core::encoder::ScoreMap;
use lscale_core::matio::{self, Dtype, Matrix2D, ModelMeta};
use lscale_core::stats::TTestKind;
use lscale_core::Mask;
use nalgebra::DMatrix;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::out::{num, OutputDir, Provenance};
use crate::store::{list_score_maps, read_map};
use crate::study::Study;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Mean score against log10 parameter count, plus per-voxel slopes.
    Scaling,
    /// Left minus right mean score against log10 parameter count.
    Asymmetry,
    /// Spherical language regions and their mirrors.
    Roi,
    /// Atlas parcels (needs --labels).
    Parcels,
    /// Mean score against a model covariate (needs --covariate).
    Covariate,
    /// Mean score per layer depth.
    Layers,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Scaling => "scaling",
            Kind::Asymmetry => "asymmetry",
            Kind::Roi => "roi",
            Kind::Parcels => "parcels",
            Kind::Covariate => "covariate",
            Kind::Layers => "layers",
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: Kind,
    /// Output directory of `fit` (reads its scores/).
    #[arg(long)]
    pub scores: PathBuf,
    /// Study manifest, for geometry and the default mask.
    #[arg(long)]
    pub study: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Output directory of `isc`; scores are divided by the ISC first.
    #[arg(long)]
    pub isc: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ISC_FLOOR)]
    pub isc_floor: f64,
    #[arg(long, default_value_t = DEFAULT_BOOTSTRAP)]
    pub boot: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parcel label table (voxel_id, parcel_id, parcel_name, hemisphere).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Covariate name for `covariate`.
    #[arg(long)]
    pub covariate: Option<String>,
    #[arg(long, value_enum, default_value = "pooled")]
    pub ttest: TTestArg,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TTestArg {
    Pooled,
    Welch,
}

impl From<TTestArg> for TTestKind {
    fn from(t: TTestArg) -> Self {
        match t {
            TTestArg::Pooled => TTestKind::Pooled,
            TTestArg::Welch => TTestKind::Welch,
        }
    }
}

struct Inputs {
    maps: Vec<ScoreMap>,
    metas: Vec<ModelMeta>,
    mask: Mask,
    study: Option<Study>,
}

fn load(args: &AnalyzeArgs, prov: &mut Provenance) -> Result<Inputs> {
    let sidecars = list_score_maps(&args.scores)?;
    if sidecars.is_empty() {
        return Err(CliError::validation(format!("no score maps found in {}", args.scores.join("scores").display())));
    }
    let mut loaded = Vec::new();
    for path in &sidecars {
        let (map, side) = read_map(path)?;
        let meta = side
            .meta
            .ok_or_else(|| CliError::validation(format!("{}: no model metadata", path.display())))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for ext in ["npy", "layers.npy", "json"] {
            let name = format!("{stem}.{ext}");
            prov.add_input(format!("scores/{name}"), &path.with_file_name(&name))?;
        }
        loaded.push((meta, map));
    }
    // smallest model first; names break ties
    loaded.sort_by(|a, b| a.0.n_parameters.cmp(&b.0.n_parameters).then_with(|| a.0.name.cmp(&b.0.name)));
    let (metas, mut maps): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();

    if let Some(dir) = &args.isc {
        let json = dir.join("isc/isc.json");
        let (isc, _) = read_map(&json)?;
        prov.add_input("isc/isc.json", &json)?;
        prov.add_input("isc/isc.npy", &dir.join("isc/isc.npy"))?;
        maps = maps
            .iter()
            .map(|m| normalize_by_isc(m, &isc, args.isc_floor))
            .collect::<std::result::Result<_, _>>()?;
    }

    let study = args.study.as_deref().map(Study::load).transpose()?;
    if let Some(s) = &study {
        s.add_inputs(prov)?;
    }
    let n = maps[0].len();
    if let Some(m) = maps.iter().find(|m| m.len() != n) {
        return Err(CliError::validation(format!("score map {:?} has {} voxels, expected {n}", m.model, m.len())));
    }
    let mask = match (&study, &args.mask) {
        (Some(s), flag) => s.mask(flag.as_deref())?,
        (None, Some(p)) => matio::read_mask(p, n)?,
        (None, None) => Mask::full(n, "all"),
    };
    if let Some(p) = &args.mask {
        prov.add_input("--mask", p)?;
    }
    if mask.len() != n {
        return Err(CliError::validation(format!("mask covers {} voxels, maps have {n}", mask.len())));
    }
    Ok(Inputs {
        maps,
        metas,
        mask,
        study,
    })
}

fn need_study(inp: &Inputs, kind: Kind) -> Result<&Study> {
    inp.study
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("analyze {} needs --study for voxel coordinates", kind.name())))
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    let mut prov = Provenance::new(&format!("analyze {}", args.kind.name()));
    prov.seed = Some(args.seed);
    match args.kind {
        Kind::Parcels if args.labels.is_none() => return Err(CliError::validation("analyze parcels needs --labels")),
        Kind::Covariate if args.covariate.is_none() => {
            return Err(CliError::validation("analyze covariate needs --covariate NAME"))
        }
        _ => {}
    }
    if let Some(name) = &args.covariate {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) {
            return Err(CliError::validation(format!("covariate name {name:?} must be [A-Za-z0-9._-]")));
        }
    }
    if let Some(l) = &args.labels {
        prov.add_input("--labels", l)?;
    }
    let inp = load(args, &mut prov)?;
    if matches!(args.kind, Kind::Asymmetry | Kind::Roi) {
        need_study(&inp, args.kind)?;
    }
    let labels = match &args.labels {
        Some(p) => Some(matio::read_parcel_labels(p, inp.mask.len())?),
        None => None,
    };
    let out = OutputDir::open(&args.out, prov, args.force)?;
    match args.kind {
        Kind::Scaling => scaling(args, &inp, &out)?,
        Kind::Asymmetry => asymmetry(args, &inp, &out)?,
        Kind::Roi => roi(args, &inp, &out)?,
        Kind::Parcels => parcels(&inp, labels.as_ref().expect("checked"), &out)?,
        Kind::Covariate => covariate(args, &inp, &out)?,
        Kind::Layers => layers(&inp, &out)?,
    }
    out.finish()
}

fn scaling(args: &AnalyzeArgs, inp: &Inputs, out: &OutputDir) -> Result<()> {
    let x: Vec<f64> = inp.metas.iter().map(ModelMeta::log10_params).collect();
    let y = inp
        .maps
        .iter()
        .map(|m| mean_score(m, &inp.mask))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<String>> = inp
        .metas
        .iter()
        .zip(&y)
        .map(|(m, v)| vec![m.name.clone(), m.n_parameters.to_string(), num(m.log10_params()), num(*v)])
        .collect();
    let fit = scaling_fit(&x, &y, args.boot, args.seed)?;
    let slopes = voxelwise_slopes(&inp.maps, &inp.metas)?;
    let n = inp.mask.len();
    let scored: Vec<bool> = (0..n).map(|v| inp.mask.get(v) && inp.maps.iter().all(|m| !m.excluded[v])).collect();
    let slope_p = DMatrix::from_fn(n, 2, |v, c| match (scored[v], c) {
        (true, 0) => slopes.slope[v],
        (true, _) if slopes.p[v].is_finite() => slopes.p[v],
        (_, 0) => 0.0,
        _ => 1.0,
    });
    out.tsv("analysis/scaling.tsv", &["model", "n_parameters", "log10_params", "mean_r"], &rows)?;
    out.matrix("analysis/voxel_slopes.npy", &Matrix2D::from_dmatrix(&slope_p, Dtype::F64))?;
    let significant = (0..n).filter(|v| scored[*v] && slope_p[(*v, 1)] < SLOPE_P_THRESHOLD).count();
    out.json(
        "analysis/scaling.json",
        &json!({
            "mask": inp.mask.label(),
            "models": inp.metas.iter().map(|m| &m.name).collect::<Vec<_>>(),
            "fit": fit,
            "voxel_slopes": {
                "file": "voxel_slopes.npy",
                "p_threshold": SLOPE_P_THRESHOLD,
                "significant": significant,
                "scored": scored.iter().filter(|s| **s).count(),
            },
        }),
    )
}

fn asymmetry(args: &AnalyzeArgs, inp: &Inputs, out: &OutputDir) -> Result<()> {
    let geometry = &need_study(inp, Kind::Asymmetry)?.geometry;
    let series = lr_series(&inp.maps, &inp.metas, geometry, &inp.mask, args.boot, args.seed)?;
    let rows: Vec<Vec<String>> = series
        .points
        .iter()
        .map(|p| vec![p.model.clone(), num(p.log10_params), num(p.mean_left), num(p.mean_right), num(p.diff)])
        .collect();
    out.tsv(
        "analysis/asymmetry.tsv",
        &["model", "log10_params", "mean_left", "mean_right", "diff"],
        &rows,
    )?;
    out.json("analysis/asymmetry.json", &json!({"mask": inp.mask.label(), "series": series}))
}

fn roi(args: &AnalyzeArgs, inp: &Inputs, out: &OutputDir) -> Result<()> {
    let geometry = &need_study(inp, Kind::Roi)?.geometry;
    let slopes = if inp.maps.len() >= 3 {
        Some(voxelwise_slopes(&inp.maps, &inp.metas)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut regions = Vec::new();
    for spec in default_rois() {
        let mirror = mirror_roi(&spec);
        let here = roi_mask(&spec, geometry).and(&inp.mask);
        let there = roi_mask(&mirror, geometry).and(&inp.mask);
        let usable = |m: &Mask| inp.maps.iter().all(|s| m.ids().any(|v| !s.excluded[v]));
        if !(usable(&here) && usable(&there)) {
            regions.push(json!({"roi": spec, "n_left": here.count(), "n_right": there.count(), "skipped": "no scored voxels on one side"}));
            continue;
        }
        for (m, meta) in inp.maps.iter().zip(&inp.metas) {
            let l = mean_score(m, &here)?;
            let r = mean_score(m, &there)?;
            rows.push(vec![spec.label.clone(), meta.name.clone(), num(meta.log10_params()), num(l), num(r), num(l - r)]);
        }
        let interaction = if inp.maps.len() >= 3 {
            Some(roi_interaction_corr(&inp.maps, &inp.metas, geometry, &spec, args.boot, args.seed)?)
        } else {
            None
        };
        let ttest = slopes.as_ref().and_then(|s| {
            let pick = |m: &Mask| m.ids().filter(|v| inp.maps.iter().all(|x| !x.excluded[*v])).map(|v| s.slope[v]).collect::<Vec<_>>();
            roi_slope_ttest(&pick(&here), &pick(&there), args.ttest.into()).ok()
        });
        regions.push(json!({
            "roi": spec,
            "n_left": here.count(),
            "n_right": there.count(),
            "interaction": interaction,
            "slope_ttest": ttest,
        }));
    }
    out.tsv(
        "analysis/roi.tsv",
        &["roi", "model", "log10_params", "mean_left", "mean_right", "diff"],
        &rows,
    )?;
    out.json("analysis/roi.json", &json!({"mask": inp.mask.label(), "regions": regions}))
}

fn parcels(inp: &Inputs, labels: &matio::ParcelLabels, out: &OutputDir) -> Result<()> {
    let mut rows = Vec::new();
    let mut pair_rows = Vec::new();
    let mut per_model = Vec::new();
    for (m, meta) in inp.maps.iter().zip(&inp.metas) {
        let s = parcel_summary(m, labels, &inp.mask)?;
        for r in &s.rows {
            rows.push(vec![
                meta.name.clone(),
                r.parcel_id.to_string(),
                r.parcel_name.clone(),
                r.hemisphere.as_str().to_string(),
                r.n_voxels.to_string(),
                num(r.mean),
            ]);
        }
        for p in &s.pairs {
            let (t, df, pv) = match p.ttest {
                Some(t) => (num(t.t), num(t.df), num(t.p)),
                None => ("nan".into(), "nan".into(), "nan".into()),
            };
            pair_rows.push(vec![meta.name.clone(), p.parcel_name.clone(), num(p.mean_left), num(p.mean_right), num(p.diff), t, df, pv]);
        }
        per_model.push(json!({"model": meta.name, "summary": s}));
    }
    out.tsv(
        "analysis/parcels.tsv",
        &["model", "parcel_id", "parcel_name", "hemisphere", "n_voxels", "mean_r"],
        &rows,
    )?;
    out.tsv(
        "analysis/parcel_pairs.tsv",
        &["model", "parcel_name", "mean_left", "mean_right", "diff", "t", "df", "p"],
        &pair_rows,
    )?;
    out.json("analysis/parcels.json", &json!({"mask": inp.mask.label(), "models": per_model}))
}

fn covariate(args: &AnalyzeArgs, inp: &Inputs, out: &OutputDir) -> Result<()> {
    let name = args.covariate.as_deref().expect("checked");
    let fit = covariate_fit(&inp.metas, &inp.maps, name, &inp.mask, args.boot, args.seed)?;
    let rows = inp
        .maps
        .iter()
        .zip(&inp.metas)
        .map(|(m, meta)| Ok(vec![meta.name.clone(), num(meta.covariates[name]), num(mean_score(m, &inp.mask)?)]))
        .collect::<Result<Vec<_>>>()?;
    out.tsv(&format!("analysis/covariate-{name}.tsv"), &["model", name, "mean_r"], &rows)?;
    out.json(
        &format!("analysis/covariate-{name}.json"),
        &json!({"mask": inp.mask.label(), "covariate": name, "fit": fit}),
    )
}

fn layers(inp: &Inputs, out: &OutputDir) -> Result<()> {
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for (m, meta) in inp.maps.iter().zip(&inp.metas) {
        let profile = layer_profile(m, &inp.mask)?;
        for p in &profile {
            rows.push(vec![meta.name.clone(), p.layer.to_string(), num(p.depth), num(p.mean)]);
        }
        profiles.push(json!({"model": meta.name, "profile": profile}));
    }
    out.tsv("analysis/layers.tsv", &["model", "layer", "depth", "mean_r"], &rows)?;
    out.json("analysis/layers.json", &json!({"mask": inp.mask.label(), "models": profiles}))
}
