use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::select::{summarize, summary_csv, ValidationRow};
use super::{
    evaluate_matrix, load_manifest, load_split_tiles, read_json, required_bands, thread_pool, write_json, write_text,
    GridSearchConfig, Result, SplitEvaluation,
};
use crate::features::{build_feature_matrix, FeatureMatrix, FeatureOptions, FeatureSpaceSpec};
use crate::model::{Model, ModelDocument, ModelParams};
use crate::raster::{LabelGrid, SplitName, Tile};

/// One trained and evaluated (feature space, hyperparameters, seed) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub feature_space: String,
    pub params: ModelParams,
    pub seed: u64,
    pub features: FeatureOptions,
    pub outcome: CellOutcome,
    /// Model document, relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Kept out of the cell file; see the cell's `.timing.json`.
    #[serde(skip)]
    pub wall_clock_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum CellOutcome {
    Ok {
        train: SplitEvaluation,
        valid: SplitEvaluation,
    },
    Failed {
        error: String,
    },
}

impl CellResult {
    pub fn file_name(&self) -> String {
        cell_file_name(&self.feature_space, &self.params, self.seed)
    }

    pub fn valid(&self) -> Option<&SplitEvaluation> {
        match &self.outcome {
            CellOutcome::Ok { valid, .. } => Some(valid),
            CellOutcome::Failed { .. } => None,
        }
    }

    fn matches(&self, fs: &str, params: &ModelParams, seed: u64, features: &FeatureOptions) -> bool {
        self.feature_space == fs && &self.params == params && self.seed == seed && &self.features == features
    }
}

/// Every cell of a grid search, ordered by feature space, grid point and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
}

impl ExperimentResult {
    /// Validation reports of the successful cells; the only input selection gets.
    pub fn validation_rows(&self) -> Vec<ValidationRow> {
        self.cells
            .iter()
            .filter_map(|c| {
                c.valid().map(|v| ValidationRow {
                    feature_space: c.feature_space.clone(),
                    params: c.params,
                    seed: c.seed,
                    report: v.report.clone(),
                })
            })
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = (&CellResult, &str)> {
        self.cells.iter().filter_map(|c| match &c.outcome {
            CellOutcome::Failed { error } => Some((c, error.as_str())),
            CellOutcome::Ok { .. } => None,
        })
    }

    pub fn load(search_dir: &Path) -> Result<Self> {
        read_json(&search_dir.join("results.json"))
    }
}

/// File stem of a grid cell: readable and free of path-hostile characters.
pub fn cell_file_name(feature_space: &str, params: &ModelParams, seed: u64) -> String {
    let slug = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || "+=.-".contains(c) { c } else { '_' })
            .collect()
    };
    format!("{}__{}__seed{seed}", slug(feature_space), slug(&params.key()))
}

#[derive(Serialize, Deserialize)]
struct CellTiming {
    wall_clock_secs: f64,
}

struct Job<'a> {
    fs: &'a FeatureSpaceSpec,
    fs_name: String,
    params: ModelParams,
    seed: u64,
    file: PathBuf,
}

struct SearchContext<'a> {
    cfg: &'a GridSearchConfig,
    features: FeatureOptions,
    cells_dir: PathBuf,
}

impl SearchContext<'_> {
    fn cached(&self, job: &Job) -> Option<CellResult> {
        let mut cell: CellResult = read_json(&job.file).ok()?;
        if !cell.matches(&job.fs_name, &job.params, job.seed, &self.features) {
            return None;
        }
        if let Some(rel) = &cell.model_path {
            if !self.cfg.output_dir.join(rel).is_file() {
                return None;
            }
        } else if self.cfg.save_search_models && matches!(cell.outcome, CellOutcome::Ok { .. }) {
            return None;
        }
        cell.wall_clock_secs = read_json::<CellTiming>(&timing_path(&job.file))
            .ok()
            .map(|t| t.wall_clock_secs);
        Some(cell)
    }

    fn run(&self, job: &Job, train: &FeatureMatrix, valid: &FeatureMatrix) -> Result<CellResult> {
        let start = Instant::now();
        let policy = self.cfg.empty_policy;
        let mut model_path = None;
        let outcome = match Model::fit(&job.params, train.rows(), train.labels(), job.seed) {
            Err(e) => CellOutcome::Failed { error: e.to_string() },
            Ok(model) => {
                let evaluated = evaluate_matrix(&model, train, policy)
                    .and_then(|t| Ok((t, evaluate_matrix(&model, valid, policy)?)));
                match evaluated {
                    Err(e) => CellOutcome::Failed { error: e.to_string() },
                    Ok((train, valid)) => {
                        if self.cfg.save_search_models {
                            let rel = PathBuf::from("search")
                                .join("models")
                                .join(format!("{}.json", file_stem(&job.file)));
                            ModelDocument::new(job.fs.clone(), self.features, job.params, job.seed, model)
                                .save(&self.cfg.output_dir.join(&rel))?;
                            model_path = Some(rel);
                        }
                        CellOutcome::Ok { train, valid }
                    }
                }
            }
        };
        let cell = CellResult {
            feature_space: job.fs_name.clone(),
            params: job.params,
            seed: job.seed,
            features: self.features,
            outcome,
            model_path,
            wall_clock_secs: Some(start.elapsed().as_secs_f64()),
        };
        write_json(&job.file, &cell)?;
        write_json(
            &timing_path(&job.file),
            &CellTiming {
                wall_clock_secs: cell.wall_clock_secs.unwrap_or_default(),
            },
        )?;
        Ok(cell)
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn timing_path(cell_file: &Path) -> PathBuf {
    cell_file.with_file_name(format!("{}.timing.json", file_stem(cell_file)))
}

type SplitTiles = Vec<(Tile, LabelGrid)>;

/// Trains every (feature space, grid point, seed) cell on the train split and
/// evaluates it on train and validation.
///
/// Cells are persisted one file each as soon as they finish; cells whose file already
/// exists with matching settings are read back instead of recomputed. Fit failures
/// are recorded in the cell, not raised.
pub fn run_grid_search(cfg: &GridSearchConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    write_text(&cfg.output_dir.join("config.resolved.toml"), &cfg.to_toml())?;
    let search_dir = cfg.output_dir.join("search");
    let ctx = SearchContext {
        cfg,
        features: cfg.feature_options(),
        cells_dir: search_dir.join("cells"),
    };
    let spaces = cfg.parsed_feature_spaces()?;
    let plain = FeatureOptions {
        speckle: None,
        ..ctx.features
    };
    let pool = thread_pool(cfg.threads())?;
    let mut data: Option<(SplitTiles, SplitTiles)> = None;
    let mut cells = Vec::new();
    for fs in &spaces {
        let fs_name = fs.name();
        let jobs: Vec<Job> = cfg
            .grid_points(fs)
            .into_iter()
            .flat_map(|params| {
                let fs_name = &fs_name;
                let dir = &ctx.cells_dir;
                cfg.search_seeds.iter().map(move |&seed| Job {
                    fs,
                    fs_name: fs_name.clone(),
                    params,
                    seed,
                    file: dir.join(format!("{}.json", cell_file_name(fs_name, &params, seed))),
                })
            })
            .collect();
        let cached: Vec<Option<CellResult>> = jobs.iter().map(|j| ctx.cached(j)).collect();
        if cached.iter().all(Option::is_some) {
            cells.extend(cached.into_iter().flatten());
            continue;
        }
        if data.is_none() {
            let bands = required_bands(&spaces);
            let load = |split| -> Result<SplitTiles> {
                let manifest = load_manifest(cfg, split)?;
                pool.install(|| load_split_tiles(&manifest, &cfg.data_root, &bands, &ctx.features))
            };
            data = Some((load(SplitName::Train)?, load(SplitName::Valid)?));
        }
        let (train_tiles, valid_tiles) = data.as_ref().expect("loaded above");
        let done: Vec<CellResult> = pool.install(|| -> Result<Vec<CellResult>> {
            let train = build_feature_matrix(fs, train_tiles, &plain)?;
            let valid = build_feature_matrix(fs, valid_tiles, &plain)?;
            jobs.par_iter()
                .zip(cached)
                .map(|(job, hit)| match hit {
                    Some(cell) => Ok(cell),
                    None => ctx.run(job, &train, &valid),
                })
                .collect()
        })?;
        cells.extend(done);
    }
    let result = ExperimentResult { cells };
    write_json(&search_dir.join("results.json"), &result)?;
    write_text(
        &search_dir.join("summary.csv"),
        &summary_csv(&summarize(&result.validation_rows())),
    )?;
    let timing: BTreeMap<String, Option<f64>> = result
        .cells
        .iter()
        .map(|c| (c.file_name(), c.wall_clock_secs))
        .collect();
    write_json(&search_dir.join("timing.json"), &timing)?;
    Ok(result)
}
