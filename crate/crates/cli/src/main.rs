mod import;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use floodpix::features::{build_feature_matrix, FeatureOptions, LeeSigmaParams};
use floodpix::harness::{
    evaluate_matrix, export_boxplot_data, export_prediction_raster, load_split_tiles, run_grid_search,
    run_pipeline, ExperimentResult, GridSearchConfig,
};
use floodpix::metrics::{regionwise, regionwise_csv, report_csv, EmptyPolicy};
use floodpix::model::{ModelKind, ModelParams};
use floodpix::raster::{dataset_statistics, load_tile_bands, write_file_atomic};
use floodpix::{BandId, FeatureSpaceSpec, Model, ModelDocument, SplitManifest, SplitName};
use serde_json::{json, Value};

use crate::import::{import_tile, parse_catalog, upsert_manifest, TileSource};

/// Pixel-wise flood mapping from Sentinel-1 and Sentinel-2 tiles.
#[derive(Parser)]
#[command(name = "floodpix", version)]
struct Cli {
    /// Directory holding the split manifests and the files they reference.
    #[arg(long, env = "FLOODPIX_DATA_ROOT", global = true)]
    data_root: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Apply the Lee sigma filter to the SAR bands before featurizing.
    #[arg(long, global = true)]
    speckle_filter: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert GeoTIFF tiles into canonical files and add them to a split manifest.
    Import(ImportArgs),
    /// Class and region distribution of one or more splits.
    Stats {
        /// Splits to include; every split with a manifest when omitted.
        #[arg(long, value_delimiter = ',')]
        splits: Vec<SplitName>,
    },
    /// Write the feature matrix of a split as raw little-endian f32 rows.
    Featurize {
        #[arg(long)]
        feature_space: String,
        #[arg(long, default_value = "train")]
        split: SplitName,
        /// Output prefix; writes `<prefix>.f32`, `<prefix>.labels.u8` and `<prefix>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model on a split and save it.
    Train {
        #[arg(long)]
        feature_space: String,
        #[arg(long)]
        model: ModelKind,
        /// Hyperparameter override `name=value`, repeatable (e.g. `alpha=0.01`).
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "train")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
    /// Colour-coded prediction PNGs and raw prediction grids for every tile of a split.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Restrict to these tile ids.
        #[arg(long, value_delimiter = ',')]
        tiles: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Metrics of a saved model on a split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Score metrics that are 0/0 on a tile as 1 (`perfect`) or leave the tile out (`exclude`).
        #[arg(long, default_value = "perfect")]
        empty_policy: String,
        /// Also write `<split>_metrics.csv` and `<split>_regionwise.csv` here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Grid search, selection on validation and final evaluation.
    Gridsearch(GridsearchArgs),
    /// Box-plot statistics of validation metrics from a finished grid search.
    Report {
        /// Output directory of the grid search.
        #[arg(long)]
        output_dir: PathBuf,
        /// `feature_space`, `model` or a hyperparameter name.
        #[arg(long, default_value = "feature_space")]
        group_by: String,
        /// CSV destination; printed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ImportArgs {
    /// Split manifest the tiles are added to.
    #[arg(long)]
    split: SplitName,
    /// Split listing with `<id>_S1Hand.tif,<id>_LabelHand.tif` lines.
    #[arg(long, requires_all = ["s1_dir", "label_dir"], conflicts_with_all = ["tile_id", "raster", "label"])]
    catalog: Option<PathBuf>,
    #[arg(long)]
    s1_dir: Option<PathBuf>,
    /// Directory of the matching `<id>_S2Hand.tif` files; optical bands are skipped without it.
    #[arg(long)]
    s2_dir: Option<PathBuf>,
    #[arg(long)]
    label_dir: Option<PathBuf>,
    /// Single-tile mode: id of the tile.
    #[arg(long, requires_all = ["region", "label"])]
    tile_id: Option<String>,
    #[arg(long)]
    region: Option<String>,
    /// `<file>:<band,band,...>`, repeatable. `s1` and `s2` name the standard band orders.
    #[arg(long)]
    raster: Vec<String>,
    #[arg(long)]
    label: Option<PathBuf>,
}

#[derive(Args)]
struct GridsearchArgs {
    /// TOML configuration; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long = "feature-space")]
    feature_spaces: Vec<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Stop after the grid search.
    #[arg(long)]
    search_only: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Import(args) => cmd_import(&cli, args),
        Command::Stats { splits } => cmd_stats(&cli, splits),
        Command::Featurize {
            feature_space,
            split,
            out,
        } => cmd_featurize(&cli, feature_space, *split, out),
        Command::Train {
            feature_space,
            model,
            set,
            seed,
            split,
            out,
        } => cmd_train(&cli, feature_space, *model, set, *seed, *split, out),
        Command::Predict {
            model,
            split,
            tiles,
            out_dir,
        } => cmd_predict(&cli, model, *split, tiles, out_dir),
        Command::Evaluate {
            model,
            split,
            empty_policy,
            out_dir,
        } => cmd_evaluate(&cli, model, *split, empty_policy, out_dir.as_deref()),
        Command::Gridsearch(args) => cmd_gridsearch(&cli, args),
        Command::Report {
            output_dir,
            group_by,
            out,
        } => {
            let result = ExperimentResult::load(&output_dir.join("search"))?;
            let csv = export_boxplot_data(&result.validation_rows(), group_by, out.as_deref())?;
            if out.is_none() {
                print!("{csv}");
            }
            Ok(())
        }
    }
}

impl Cli {
    fn data_root(&self) -> Result<&Path> {
        self.data_root
            .as_deref()
            .ok_or_else(|| anyhow!("no data root: pass --data-root or set FLOODPIX_DATA_ROOT"))
    }

    fn manifest(&self, split: SplitName) -> Result<SplitManifest> {
        let path = self.data_root()?.join(format!("{split}.json"));
        SplitManifest::load(split, &path).with_context(|| format!("loading the {split} manifest"))
    }

    fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            speckle: self.speckle_filter.then(LeeSigmaParams::default),
            ..FeatureOptions::default()
        }
    }
}

fn print_json(value: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_bands(spec: &str) -> Result<Vec<BandId>> {
    match spec {
        "s1" => Ok(import::s1_bands()),
        "s2" => Ok(import::s2_bands()),
        _ => spec
            .split(',')
            .map(|b| b.trim().parse().map_err(|_| anyhow!("unknown band `{b}`")))
            .collect(),
    }
}

fn cmd_import(cli: &Cli, args: &ImportArgs) -> Result<()> {
    let root = cli.data_root()?;
    let sources = match (&args.catalog, &args.tile_id) {
        (Some(catalog), _) => {
            let text = fs::read_to_string(catalog).with_context(|| format!("reading {}", catalog.display()))?;
            let s1 = args.s1_dir.as_deref().expect("required by clap");
            let labels = args.label_dir.as_deref().expect("required by clap");
            parse_catalog(&text, s1, args.s2_dir.as_deref(), labels)?
        }
        (None, Some(tile_id)) => {
            if args.raster.is_empty() {
                bail!("single-tile import needs at least one --raster");
            }
            let rasters = args
                .raster
                .iter()
                .map(|r| {
                    let (file, bands) = r
                        .rsplit_once(':')
                        .ok_or_else(|| anyhow!("--raster `{r}` is not <file>:<bands>"))?;
                    Ok((PathBuf::from(file), parse_bands(bands)?))
                })
                .collect::<Result<_>>()?;
            vec![TileSource {
                tile_id: tile_id.clone(),
                region: args.region.clone().expect("required by clap"),
                rasters,
                label: args.label.clone().expect("required by clap"),
            }]
        }
        (None, None) => bail!("pass either --catalog or --tile-id"),
    };
    let entries = sources
        .iter()
        .map(|s| import_tile(s, root).with_context(|| format!("importing {}", s.tile_id)))
        .collect::<Result<Vec<_>>>()?;
    let n = entries.len();
    let manifest_path = root.join(format!("{}.json", args.split));
    let manifest = upsert_manifest(&manifest_path, args.split, entries)?;
    eprintln!(
        "imported {n} tiles; {} now lists {} tiles",
        manifest_path.display(),
        manifest.len()
    );
    Ok(())
}

fn cmd_stats(cli: &Cli, splits: &[SplitName]) -> Result<()> {
    let root = cli.data_root()?;
    let splits: Vec<SplitName> = if splits.is_empty() {
        SplitName::ALL
            .into_iter()
            .filter(|s| root.join(format!("{s}.json")).is_file())
            .collect()
    } else {
        splits.to_vec()
    };
    if splits.is_empty() {
        bail!("no split manifests under {}", root.display());
    }
    let manifests = splits.iter().map(|s| cli.manifest(*s)).collect::<Result<Vec<_>>>()?;
    let describe = |ms: &[SplitManifest]| -> Result<Value> {
        let s = dataset_statistics(ms, root)?;
        Ok(json!({
            "tiles": ms.iter().map(SplitManifest::len).sum::<usize>(),
            "pixels": s,
            "class_fractions": s.class_fractions(),
            "region_fractions": s.region_fractions(),
        }))
    };
    let mut per_split = BTreeMap::new();
    for m in &manifests {
        per_split.insert(m.split.to_string(), describe(std::slice::from_ref(m))?);
    }
    print_json(&json!({ "splits": per_split, "combined": describe(&manifests)? }))
}

/// Loads a split restricted to the bands of `fs`, applying the speckle filter once.
fn load_split(
    cli: &Cli,
    fs: &FeatureSpaceSpec,
    split: SplitName,
    opts: &FeatureOptions,
) -> Result<floodpix::FeatureMatrix> {
    let manifest = cli.manifest(split)?;
    let tiles = load_split_tiles(&manifest, cli.data_root()?, &fs.required_bands(), opts)?;
    let plain = FeatureOptions { speckle: None, ..*opts };
    Ok(build_feature_matrix(fs, &tiles, &plain)?)
}

fn cmd_featurize(cli: &Cli, feature_space: &str, split: SplitName, out: &Path) -> Result<()> {
    let fs = FeatureSpaceSpec::parse(feature_space)?;
    let m = load_split(cli, &fs, split, &cli.feature_options())?;
    let with_ext = |ext: &str| {
        let mut s = out.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let values: Vec<u8> = m.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file_atomic(&with_ext(".f32"), &values)?;
    let labels: Vec<u8> = m.labels().iter().map(|c| u8::from(c.is_water())).collect();
    write_file_atomic(&with_ext(".labels.u8"), &labels)?;
    let (dry, water) = m.class_counts();
    let header = json!({
        "feature_space": fs.name(),
        "split": split,
        "n_rows": m.n_rows(),
        "n_cols": m.n_cols(),
        "columns": m.column_names(),
        "dry_rows": dry,
        "water_rows": water,
        "features": cli.feature_options(),
    });
    write_file_atomic(&with_ext(".json"), serde_json::to_string_pretty(&header)?.as_bytes())?;
    print_json(&header)
}

/// Default hyperparameters of `kind` with `name=value` overrides applied.
fn model_params(kind: ModelKind, overrides: &[String]) -> Result<ModelParams> {
    let defaults = match kind {
        ModelKind::GaussianNb => ModelParams::GaussianNb,
        ModelKind::Lda => ModelParams::Lda { shrinkage: 0.0 },
        ModelKind::Qda => ModelParams::Qda { regularization: 0.0 },
        ModelKind::Sgd => ModelParams::Sgd(Default::default()),
        ModelKind::Gbdt => ModelParams::Gbdt(Default::default()),
    };
    let mut value = serde_json::to_value(defaults)?;
    let obj = value.as_object_mut().expect("params serialize to an object");
    for o in overrides {
        let (name, raw) = o
            .split_once('=')
            .ok_or_else(|| anyhow!("--set `{o}` is not name=value"))?;
        if name == "kind" || !obj.contains_key(name) {
            let known: Vec<&str> = obj.keys().filter(|k| *k != "kind").map(String::as_str).collect();
            bail!("{kind} has no parameter `{name}`; known: {}", known.join(", "));
        }
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        obj.insert(name.to_string(), v);
    }
    serde_json::from_value(value).context("invalid hyperparameter value")
}

fn cmd_train(
    cli: &Cli,
    feature_space: &str,
    kind: ModelKind,
    overrides: &[String],
    seed: u64,
    split: SplitName,
    out: &Path,
) -> Result<()> {
    let fs = FeatureSpaceSpec::parse(feature_space)?;
    let params = model_params(kind, overrides)?;
    let opts = cli.feature_options();
    let m = load_split(cli, &fs, split, &opts)?;
    let model = Model::fit(&params, m.rows(), m.labels(), seed)?;
    let fit = evaluate_matrix(&model, &m, EmptyPolicy::default())?;
    ModelDocument::new(fs.clone(), opts, params, seed, model).save(out)?;
    print_json(&json!({
        "model": out,
        "feature_space": fs.name(),
        "params": params,
        "rows": m.n_rows(),
        "split": split,
        "fit": { "mean": fit.report.mean, "total": fit.report.total },
    }))
}

fn cmd_predict(cli: &Cli, model: &Path, split: SplitName, only: &[String], out_dir: &Path) -> Result<()> {
    let doc = ModelDocument::load(model)?;
    let root = cli.data_root()?;
    let manifest = cli.manifest(split)?;
    let bands = doc.feature_space.required_bands();
    let mut summary = Vec::new();
    for e in &manifest.entries {
        if !only.is_empty() && !only.contains(&e.tile_id) {
            continue;
        }
        let (tile, labels) = load_tile_bands(e, root, Some(&bands))?;
        let png = out_dir.join(format!("{}.png", e.tile_id));
        let grid = out_dir.join(format!("{}_pred.i8", e.tile_id));
        let export = export_prediction_raster(&doc, &tile, &labels, &png, &grid)?;
        summary.push(json!({ "tile_id": e.tile_id, "region": e.region, "png": png, "grid": grid, "export": export }));
    }
    if summary.is_empty() {
        bail!("no matching tiles in the {split} manifest");
    }
    let summary = Value::Array(summary);
    write_file_atomic(
        &out_dir.join("predictions.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    eprintln!("wrote {} predictions to {}", summary.as_array().map_or(0, Vec::len), out_dir.display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, model: &Path, split: SplitName, policy: &str, out_dir: Option<&Path>) -> Result<()> {
    let policy: EmptyPolicy = serde_json::from_value(Value::String(policy.to_string()))
        .map_err(|_| anyhow!("unknown empty policy `{policy}`"))?;
    let doc = ModelDocument::load(model)?;
    let m = load_split(cli, &doc.feature_space, split, &doc.features)?;
    let eval = evaluate_matrix(&doc.model, &m, policy)?;
    let regions = regionwise(&eval.tiles)?;
    if let Some(dir) = out_dir {
        write_file_atomic(&dir.join(format!("{split}_metrics.csv")), report_csv(&eval.report).as_bytes())?;
        write_file_atomic(
            &dir.join(format!("{split}_regionwise.csv")),
            regionwise_csv(&regions).as_bytes(),
        )?;
    }
    print_json(&json!({
        "split": split,
        "feature_space": doc.feature_space.name(),
        "params": doc.params,
        "report": eval.report,
        "regionwise": regions,
    }))
}

fn cmd_gridsearch(cli: &Cli, args: &GridsearchArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => GridSearchConfig::load(path)?,
        None => {
            let model = args.model.ok_or_else(|| anyhow!("pass --config or --model"))?;
            if args.feature_spaces.is_empty() {
                bail!("pass --config or at least one --feature-space");
            }
            let out = args
                .output_dir
                .as_deref()
                .ok_or_else(|| anyhow!("pass --config or --output-dir"))?;
            let spaces: Vec<&str> = args.feature_spaces.iter().map(String::as_str).collect();
            GridSearchConfig::new(model, &spaces, cli.data_root()?, out)
        }
    };
    if args.config.is_some() {
        if let Some(model) = args.model {
            if model != cfg.model {
                cfg.grid = Default::default();
            }
            cfg.model = model;
        }
        if !args.feature_spaces.is_empty() {
            cfg.feature_spaces = args.feature_spaces.clone();
        }
        if let Some(out) = &args.output_dir {
            cfg.output_dir = out.clone();
        }
        if let Some(root) = &cli.data_root {
            cfg.data_root = root.clone();
        }
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if cli.speckle_filter {
        cfg.speckle_filter = true;
    }
    cfg.validate()?;
    if args.search_only {
        let result = run_grid_search(&cfg)?;
        let failed = result.failures().count();
        eprintln!(
            "{} cells ({failed} failed); results in {}",
            result.cells.len(),
            cfg.output_dir.join("search").display()
        );
        return Ok(());
    }
    let out = run_pipeline(&cfg)?;
    let splits: BTreeMap<String, Value> = out
        .report
        .splits
        .iter()
        .map(|s| {
            let a = &s.averaged;
            (s.split.to_string(), json!({ "mean": a.mean, "total": a.total }))
        })
        .collect();
    print_json(&json!({
        "feature_space": out.chosen.feature_space,
        "params": out.chosen.params,
        "validation": { "mean": out.chosen.validation.mean, "total": out.chosen.validation.total },
        "final": splits,
        "output_dir": cfg.output_dir,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_to_defaults() {
        let p = model_params(ModelKind::Sgd, &["alpha=0.01".into(), "loss=logistic".into()]).unwrap();
        let ModelParams::Sgd(s) = p else { panic!() };
        assert_eq!(s.alpha, 0.01);
        assert_eq!(s.loss, floodpix::classifiers::SgdLoss::Logistic);
        let g = model_params(ModelKind::Gbdt, &["subsample_size=null".into(), "max_leaves=4".into()]).unwrap();
        let ModelParams::Gbdt(g) = g else { panic!() };
        assert_eq!((g.subsample_size, g.max_leaves), (None, 4));
    }

    #[test]
    fn unknown_and_malformed_overrides_fail() {
        assert!(model_params(ModelKind::Lda, &["alpha=1".into()]).is_err());
        assert!(model_params(ModelKind::Lda, &["shrinkage".into()]).is_err());
        assert!(model_params(ModelKind::Lda, &["shrinkage=much".into()]).is_err());
        assert!(model_params(ModelKind::Lda, &["kind=qda".into()]).is_err());
    }

    #[test]
    fn band_lists_parse() {
        assert_eq!(parse_bands("s1").unwrap(), vec![BandId::VV, BandId::VH]);
        assert_eq!(parse_bands("B4,b3, B2").unwrap(), vec![BandId::B4, BandId::B3, BandId::B2]);
        assert!(parse_bands("B4,X").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
