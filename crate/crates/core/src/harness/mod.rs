//! Grid search, model selection, final evaluation and report export.
//!
//! A run lays out its output directory as
//!
//! ```text
//! config.resolved.toml
//! search/cells/<feature space>__<params>__seed<k>.json   one file per grid cell
//! search/results.json  search/summary.csv  search/timing.json
//! selection.json
//! final/report.json  final/<split>_{metrics,regionwise,tiles,correlations}.csv
//! final/models/seed<k>.json  final/timing.json
//! ```
//!
//! Wall-clock times only ever go to `timing.json` files so that every other file is
//! byte-identical across reruns.

mod config;
mod evaluate;
mod export;
mod search;
mod select;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{GridSearchConfig, HyperGrid, SplitPaths};
pub use evaluate::{
    final_eval, write_final_report, AveragedEvaluation, AveragedRegion, CorrelationOutcome, FinalReport,
    SeedEvaluation, SplitReport,
};
pub use export::{
    boxplot_csv, boxplot_rows, export_boxplot_data, export_prediction_raster, quantile_type7, BoxplotRow,
    PredictionExport, COLOUR_FN, COLOUR_FP, COLOUR_TP,
};
pub use search::{cell_file_name, run_grid_search, CellOutcome, CellResult, ExperimentResult};
pub use select::{select_best, summarize, ChosenConfig, ConfigSummary, SelectionRule, ValidationRow};

use crate::classifiers::{predict, ClassifierError};
use crate::features::{despeckle_tile, FeatureError, FeatureMatrix, FeatureOptions};
use crate::metrics::{aggregate, ConfusionCounts, EmptyPolicy, MetricReport, MetricsError, TileCounts};
use crate::model::{Model, ModelIoError};
use crate::raster::{load_tile_bands, BandId, LabelGrid, RasterError, SplitManifest, SplitName, Tile};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no manifest for split {split} at {path}")]
    MissingSplit { split: SplitName, path: PathBuf },
    #[error("no successful grid cell to select from")]
    NothingToSelect,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("png encoding: {0}")]
    Png(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Evaluation of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvaluation {
    pub report: MetricReport,
    /// Per-tile counts every metric of `report` is computed from.
    pub tiles: Vec<TileCounts>,
}

/// Per-tile confusion counts of `pred` against the labels of `m`. Tiles without a
/// single labelled row are left out.
pub fn tile_counts(m: &FeatureMatrix, pred: &[crate::raster::Class]) -> Vec<TileCounts> {
    let mut counts = vec![ConfusionCounts::default(); m.tiles().len()];
    for ((t, p), truth) in m.row_tiles().iter().zip(pred).zip(m.labels()) {
        counts[*t as usize].record(*p, *truth);
    }
    m.tiles()
        .iter()
        .zip(counts)
        .filter(|(_, c)| c.total() > 0)
        .map(|(t, counts)| TileCounts {
            tile_id: t.tile_id.clone(),
            region: t.region.clone(),
            counts,
        })
        .collect()
}

pub fn evaluate_matrix(model: &Model, m: &FeatureMatrix, policy: EmptyPolicy) -> Result<SplitEvaluation> {
    let pred = predict(model, m.rows())?;
    let tiles = tile_counts(m, &pred);
    let report = aggregate(&tiles, policy)?;
    Ok(SplitEvaluation { report, tiles })
}

/// Loads the manifest of `split`, failing with [`HarnessError::MissingSplit`] when the
/// file does not exist.
pub fn load_manifest(cfg: &GridSearchConfig, split: SplitName) -> Result<SplitManifest> {
    let path = cfg.manifest_path(split);
    if !path.is_file() {
        return Err(HarnessError::MissingSplit { split, path });
    }
    Ok(SplitManifest::load(split, &path)?)
}

/// Loads the tiles of a manifest restricted to `bands` and applies the speckle filter
/// of `opts` once. Featurize the result with `opts.speckle` unset.
pub fn load_split_tiles(
    manifest: &SplitManifest,
    data_root: &Path,
    bands: &[BandId],
    opts: &FeatureOptions,
) -> Result<Vec<(Tile, LabelGrid)>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let (tile, labels) = load_tile_bands(e, data_root, Some(bands))?;
            Ok((despeckle_tile(&tile, opts)?, labels))
        })
        .collect()
}

/// Union of the bands needed by `spaces`, in canonical order.
pub fn required_bands(spaces: &[crate::features::FeatureSpaceSpec]) -> Vec<BandId> {
    let mut bands: Vec<BandId> = spaces.iter().flat_map(|s| s.required_bands()).collect();
    bands.sort();
    bands.dedup();
    bands
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::raster::write_file_atomic(path, text.as_bytes()).map_err(io_error(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_error(path))?;
    serde_json::from_slice(&bytes).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub search: ExperimentResult,
    pub chosen: ChosenConfig,
    pub report: FinalReport,
}

/// Grid search, selection on validation and final evaluation, with every report
/// written below the configured output directory.
pub fn run_pipeline(cfg: &GridSearchConfig) -> Result<PipelineOutput> {
    let search = run_grid_search(cfg)?;
    let rows = search.validation_rows();
    let chosen = select_best(&rows, &SelectionRule::default())?;
    write_json(&cfg.output_dir.join("selection.json"), &chosen)?;
    let report = final_eval(cfg, &chosen)?;
    write_final_report(&cfg.output_dir.join("final"), &report)?;
    Ok(PipelineOutput { search, chosen, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSpaceSpec;

    #[test]
    fn tile_counts_group_rows_by_tile() {
        let spec = FeatureSpaceSpec::parse("SAR").unwrap();
        let synth = crate::synthetic::SyntheticSpec {
            width: 4,
            height: 4,
            n_tiles: 5,
            n_bolivia_tiles: 0,
            nodata_every: 2,
            nodata_rows: 4,
            ..crate::synthetic::SyntheticSpec::gaussian_mixture(1)
        };
        let tiles = synth.tiles(SplitName::Train);
        let m = crate::features::build_feature_matrix(&spec, &tiles, &FeatureOptions::default()).unwrap();
        let pred: Vec<_> = m.labels().to_vec();
        let counts = tile_counts(&m, &pred);
        // Tiles 0 and 2 are entirely NoData.
        assert_eq!(counts.len(), 1);
        assert_eq!(counts[0].tile_id, "synth_001");
        assert_eq!(counts[0].counts.fp + counts[0].counts.fn_, 0);
        assert_eq!(counts[0].counts.total(), 16);
    }
}
