use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evaluate_matrix, load_manifest, load_split_tiles, thread_pool, write_json, write_text, ChosenConfig,
    GridSearchConfig, Result,
};
use crate::features::{build_feature_matrix, FeatureOptions, FeatureSpaceSpec};
use crate::metrics::{
    correlation_test, mean, regionwise, Aggregate, Correlation, Metric, MetricReport, MetricSet, RegionwiseReport,
    Summary, TileCounts,
};
use crate::model::{Model, ModelDocument, ModelParams};
use crate::raster::SplitName;

/// Correlation between per-region water-pixel counts and one per-region metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutcome {
    pub metric: Metric,
    pub kind: Correlation,
    pub n_regions: usize,
    pub coefficient: Option<f64>,
    pub p_value: Option<f64>,
    /// Why the test could not be computed, e.g. fewer than three regions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn correlations(water: &[f64], values: impl Fn(Metric) -> Vec<f64>) -> Vec<CorrelationOutcome> {
    let mut out = Vec::new();
    for m in Metric::ALL {
        let y = values(m);
        for kind in [Correlation::Pearson, Correlation::Spearman] {
            let (coefficient, p_value, error) = match correlation_test(water, &y, kind) {
                Ok(r) => (Some(r.coefficient), Some(r.p_value), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            out.push(CorrelationOutcome {
                metric: m,
                kind,
                n_regions: water.len(),
                coefficient,
                p_value,
                error,
            });
        }
    }
    out
}

/// Results of one seed on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    pub seed: u64,
    pub report: MetricReport,
    pub regionwise: RegionwiseReport,
    pub correlations: Vec<CorrelationOutcome>,
    pub tiles: Vec<TileCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedRegion {
    pub region: String,
    pub n_tiles: usize,
    pub water_pixels: u64,
    pub metrics: MetricSet,
}

/// Metric values averaged over seeds. Region summaries and correlations are computed
/// from the averaged per-region values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedEvaluation {
    pub n_seeds: usize,
    pub n_tiles: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub total: MetricSet,
    pub regions: Vec<AveragedRegion>,
    pub region_summary: BTreeMap<Metric, Summary>,
    pub correlations: Vec<CorrelationOutcome>,
}

impl AveragedEvaluation {
    pub fn get(&self, kind: Aggregate, m: Metric) -> f64 {
        match kind {
            Aggregate::Mean => self.mean.get(m),
            Aggregate::Std => self.std.get(m),
            Aggregate::Total => self.total.get(m),
        }
    }

    fn from_seeds(per_seed: &[SeedEvaluation]) -> AveragedEvaluation {
        let avg = |f: &dyn Fn(&SeedEvaluation) -> f64| mean(&per_seed.iter().map(f).collect::<Vec<_>>());
        let set = |kind: Aggregate| MetricSet::from_fn(|m| avg(&|s| s.report.get(kind, m)));
        // Every seed sees the same tiles, so the regions line up.
        let regions: Vec<AveragedRegion> = per_seed[0]
            .regionwise
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| AveragedRegion {
                region: r.region.clone(),
                n_tiles: r.n_tiles,
                water_pixels: r.water_pixels,
                metrics: MetricSet::from_fn(|m| avg(&|s| s.regionwise.regions[i].metrics.get(m))),
            })
            .collect();
        let values = |m: Metric| regions.iter().map(|r| r.metrics.get(m)).collect::<Vec<_>>();
        let water: Vec<f64> = regions.iter().map(|r| r.water_pixels as f64).collect();
        AveragedEvaluation {
            n_seeds: per_seed.len(),
            n_tiles: per_seed[0].report.n_tiles,
            mean: set(Aggregate::Mean),
            std: set(Aggregate::Std),
            total: set(Aggregate::Total),
            region_summary: Metric::ALL.into_iter().map(|m| (m, Summary::of(&values(m)))).collect(),
            correlations: correlations(&water, values),
            regions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: SplitName,
    pub averaged: AveragedEvaluation,
    pub per_seed: Vec<SeedEvaluation>,
}

/// Final evaluation of the chosen configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub feature_space: String,
    pub params: ModelParams,
    pub seeds: Vec<u64>,
    /// Model documents, relative to the output directory.
    pub models: Vec<PathBuf>,
    pub splits: Vec<SplitReport>,
    /// Fit time per seed; written to `timing.json`, never to the report.
    #[serde(skip)]
    pub fit_secs: Vec<f64>,
}

impl FinalReport {
    pub fn split(&self, split: SplitName) -> Option<&SplitReport> {
        self.splits.iter().find(|s| s.split == split)
    }
}

/// Retrains the chosen configuration on the train split with every final seed and
/// evaluates each model on the configured final splits.
pub fn final_eval(cfg: &GridSearchConfig, chosen: &ChosenConfig) -> Result<FinalReport> {
    let fs = FeatureSpaceSpec::parse(&chosen.feature_space)?;
    let opts = cfg.feature_options();
    let plain = FeatureOptions { speckle: None, ..opts };
    // Resolve every manifest before any training.
    let train_manifest = load_manifest(cfg, SplitName::Train)?;
    let manifests = cfg
        .final_splits
        .iter()
        .map(|s| load_manifest(cfg, *s))
        .collect::<Result<Vec<_>>>()?;
    let bands = fs.required_bands();
    let pool = thread_pool(cfg.threads())?;
    pool.install(|| {
        let train_tiles = load_split_tiles(&train_manifest, &cfg.data_root, &bands, &opts)?;
        let train = build_feature_matrix(&fs, &train_tiles, &plain)?;
        drop(train_tiles);
        let eval_sets = manifests
            .iter()
            .map(|m| {
                let tiles = load_split_tiles(m, &cfg.data_root, &bands, &opts)?;
                Ok((m.split, build_feature_matrix(&fs, &tiles, &plain)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let runs = cfg
            .final_seeds
            .par_iter()
            .map(|&seed| {
                let start = Instant::now();
                let model = Model::fit(&chosen.params, train.rows(), train.labels(), seed)?;
                let secs = start.elapsed().as_secs_f64();
                let evals = eval_sets
                    .iter()
                    .map(|(_, m)| {
                        let e = evaluate_matrix(&model, m, cfg.empty_policy)?;
                        let rw = regionwise(&e.tiles)?;
                        let water = rw.water_pixels();
                        Ok(SeedEvaluation {
                            seed,
                            correlations: correlations(&water, |m| rw.values(m)),
                            regionwise: rw,
                            report: e.report,
                            tiles: e.tiles,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rel = PathBuf::from("final").join("models").join(format!("seed{seed}.json"));
                ModelDocument::new(fs.clone(), opts, chosen.params, seed, model).save(&cfg.output_dir.join(&rel))?;
                Ok((rel, secs, evals))
            })
            .collect::<Result<Vec<_>>>()?;
        let splits = eval_sets
            .iter()
            .enumerate()
            .map(|(k, (split, _))| {
                let per_seed: Vec<SeedEvaluation> = runs.iter().map(|r| r.2[k].clone()).collect();
                SplitReport {
                    split: *split,
                    averaged: AveragedEvaluation::from_seeds(&per_seed),
                    per_seed,
                }
            })
            .collect();
        Ok(FinalReport {
            feature_space: chosen.feature_space.clone(),
            params: chosen.params,
            seeds: cfg.final_seeds.clone(),
            models: runs.iter().map(|r| r.0.clone()).collect(),
            fit_secs: runs.iter().map(|r| r.1).collect(),
            splits,
        })
    })
}

fn csv_string(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn metric_header(first: &[&str]) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain(Metric::ALL.iter().map(|m| m.name().to_string()))
        .collect()
}

fn metric_cells(prefix: Vec<String>, set: &MetricSet) -> Vec<String> {
    prefix
        .into_iter()
        .chain(Metric::ALL.iter().map(|m| format!("{:.6}", set.get(*m))))
        .collect()
}

fn metrics_csv(r: &SplitReport) -> String {
    let mut rows = vec![metric_header(&["seed", "aggregate"])];
    let a = &r.averaged;
    for (name, set) in [("mean", &a.mean), ("std", &a.std), ("total", &a.total)] {
        rows.push(metric_cells(vec!["average".into(), name.into()], set));
    }
    for s in &r.per_seed {
        for (name, set) in [("mean", &s.report.mean), ("std", &s.report.std), ("total", &s.report.total)] {
            rows.push(metric_cells(vec![s.seed.to_string(), name.into()], set));
        }
    }
    csv_string(rows)
}

fn regionwise_csv(r: &SplitReport) -> String {
    let mut rows = vec![metric_header(&["region", "n_tiles", "water_pixels"])];
    for reg in &r.averaged.regions {
        rows.push(metric_cells(
            vec![reg.region.clone(), reg.n_tiles.to_string(), reg.water_pixels.to_string()],
            &reg.metrics,
        ));
    }
    let summary = &r.averaged.region_summary;
    for (name, pick) in [
        ("mean", (|s: &Summary| s.mean) as fn(&Summary) -> f64),
        ("std", |s| s.std),
        ("min", |s| s.min),
        ("max", |s| s.max),
        ("median", |s| s.median),
    ] {
        let set = MetricSet::from_fn(|m| pick(&summary[&m]));
        rows.push(metric_cells(vec![format!("summary:{name}"), String::new(), String::new()], &set));
    }
    csv_string(rows)
}

fn tiles_csv(r: &SplitReport) -> String {
    let mut rows = vec![["seed", "tile_id", "region", "tp", "fp", "tn", "fn"].map(String::from).to_vec()];
    for s in &r.per_seed {
        for t in &s.tiles {
            let c = t.counts;
            rows.push(vec![
                s.seed.to_string(),
                t.tile_id.clone(),
                t.region.clone(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.tn.to_string(),
                c.fn_.to_string(),
            ]);
        }
    }
    csv_string(rows)
}

fn correlations_csv(r: &SplitReport) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut rows = vec![["metric", "kind", "n_regions", "coefficient", "p_value", "error"]
        .map(String::from)
        .to_vec()];
    for c in &r.averaged.correlations {
        rows.push(vec![
            c.metric.name().to_string(),
            format!("{:?}", c.kind).to_lowercase(),
            c.n_regions.to_string(),
            opt(c.coefficient),
            opt(c.p_value),
            c.error.clone().unwrap_or_default(),
        ]);
    }
    csv_string(rows)
}

/// Writes `report.json`, the per-split CSV tables and `timing.json` into `dir`.
pub fn write_final_report(dir: &Path, report: &FinalReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    for r in &report.splits {
        write_text(&dir.join(format!("{}_metrics.csv", r.split)), &metrics_csv(r))?;
        write_text(&dir.join(format!("{}_regionwise.csv", r.split)), &regionwise_csv(r))?;
        write_text(&dir.join(format!("{}_tiles.csv", r.split)), &tiles_csv(r))?;
        write_text(&dir.join(format!("{}_correlations.csv", r.split)), &correlations_csv(r))?;
    }
    let timing: BTreeMap<String, f64> = report
        .seeds
        .iter()
        .zip(&report.fit_secs)
        .map(|(s, t)| (format!("seed{s}"), *t))
        .collect();
    write_json(&dir.join("timing.json"), &timing)
}

