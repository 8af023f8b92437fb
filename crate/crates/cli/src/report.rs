//! `lscale report`: one JSON document and plot-ready tables gathered from a
//! results directory.

use std::path::PathBuf;

use clap::Args;
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::out::{num, OutputDir, Provenance};
use crate::store::list_score_maps;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results directory holding scores/ (and optionally isc/, analysis/).
    #[arg(long)]
    pub dir: PathBuf,
    /// Where report/ is written; defaults to --dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn read_json(path: &std::path::Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn strip_provenance(mut v: Value) -> Value {
    if let Value::Object(m) = &mut v {
        m.remove("provenance");
    }
    v
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let sidecars = list_score_maps(&args.dir)?;
    if sidecars.is_empty() {
        return Err(CliError::validation(format!("no score maps found in {}", args.dir.display())));
    }
    let mut prov = Provenance::new("report");
    let mut models = Vec::new();
    let mut score_rows = Vec::new();
    let mut layer_rows = Vec::new();
    for path in &sidecars {
        let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
        prov.add_input(format!("scores/{name}"), path)?;
        let side = read_json(path)?;
        let model = side["model"].as_str().unwrap_or_default().to_string();
        let params = side["meta"]["n_parameters"].as_u64();
        let mean = side["mean"].as_f64();
        let layer_means: Vec<Option<f64>> = side["layer_means"]
            .as_array()
            .map(|a| a.iter().map(Value::as_f64).collect())
            .unwrap_or_default();
        let fmt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "nan".into());
        score_rows.push(vec![
            model.clone(),
            params.map(|p| p.to_string()).unwrap_or_default(),
            params.map(|p| num((p as f64).log10())).unwrap_or_default(),
            fmt(mean),
        ]);
        let deepest = layer_means.len().saturating_sub(1).max(1) as f64;
        for (l, m) in layer_means.iter().enumerate() {
            layer_rows.push(vec![model.clone(), l.to_string(), num(l as f64 / deepest), fmt(*m)]);
        }
        let alphas: Vec<f64> = side["folds"]
            .as_array()
            .map(|a| a.iter().filter_map(|f| f["alpha"].as_f64()).collect())
            .unwrap_or_default();
        models.push(json!({
            "model": model,
            "n_parameters": params,
            "mean_r": mean,
            "layer_means": layer_means,
            "mask": side["mask_label"],
            "chosen_alphas": alphas,
        }));
    }

    let isc_path = args.dir.join("isc/isc.json");
    let isc = if isc_path.is_file() {
        prov.add_input("isc/isc.json", &isc_path)?;
        let side = read_json(&isc_path)?;
        Some(json!({"mean": side["mean"], "n_splits": side["splits"].as_array().map(Vec::len)}))
    } else {
        None
    };

    let mut analyses = serde_json::Map::new();
    if let Ok(entries) = std::fs::read_dir(args.dir.join("analysis")) {
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let stem = p.file_stem().expect("listed file").to_string_lossy().into_owned();
            prov.add_input(format!("analysis/{stem}.json"), &p)?;
            analyses.insert(stem, strip_provenance(read_json(&p)?));
        }
    }

    let out = OutputDir::open(args.out.as_ref().unwrap_or(&args.dir), prov, args.force)?;
    out.tsv("report/scores.tsv", &["model", "n_parameters", "log10_params", "mean_r"], &score_rows)?;
    out.tsv("report/layers.tsv", &["model", "layer", "depth", "mean_r"], &layer_rows)?;
    out.json(
        "report/report.json",
        &json!({"models": models, "isc": isc, "analyses": Value::Object(analyses)}),
    )?;
    out.finish()
}
