use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::classifiers::{SgdLoss, SgdParams};
use crate::features::{FeatureOptions, FeatureSpaceSpec, LeeSigmaParams, NormalizationConfig};
use crate::gbdt::{leaf_grid, GbdtParams};
use crate::metrics::EmptyPolicy;
use crate::model::{ModelKind, ModelParams};
use crate::raster::SplitName;

/// Cartesian hyperparameter grid. Only the lists of the configured model kind are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub lda_shrinkage: Vec<f64>,
    pub qda_regularization: Vec<f64>,
    pub sgd_loss: Vec<SgdLoss>,
    pub sgd_alpha: Vec<f64>,
    pub sgd_rebalance: Vec<bool>,
    /// Learning-rate schedule shared by every SGD grid point.
    pub sgd_schedule: SgdParams,
    pub gbdt_n_trees: Vec<usize>,
    /// Leaf budgets; chosen by feature-space dimensionality when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gbdt_max_leaves: Option<Vec<usize>>,
    pub gbdt_lambda: Vec<f64>,
    pub gbdt_learning_rate: Vec<f64>,
    /// Rows per tree; 0 uses every row.
    pub gbdt_subsample: Vec<usize>,
    pub gbdt_max_bins: usize,
    pub gbdt_bin_sample_rows: usize,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let gbdt = GbdtParams::default();
        HyperGrid {
            lda_shrinkage: (0..=10).map(|i| i as f64 / 10.0).collect(),
            qda_regularization: vec![0.0, 1e-5, 1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 10.0],
            sgd_loss: vec![SgdLoss::Hinge, SgdLoss::Logistic, SgdLoss::Huber],
            sgd_alpha: vec![1.0, 0.1, 0.01, 0.001, 0.0001],
            sgd_rebalance: vec![false, true],
            sgd_schedule: SgdParams::default(),
            gbdt_n_trees: vec![50, 100, 200],
            gbdt_max_leaves: None,
            gbdt_lambda: vec![1.0],
            gbdt_learning_rate: vec![0.1],
            gbdt_subsample: vec![262_144],
            gbdt_max_bins: gbdt.max_bins,
            gbdt_bin_sample_rows: gbdt.bin_sample_rows,
        }
    }
}

impl HyperGrid {
    /// Every grid point for `kind` on a feature space of dimensionality `dim`, in a
    /// fixed order.
    pub fn expand(&self, kind: ModelKind, dim: usize) -> Vec<ModelParams> {
        match kind {
            ModelKind::GaussianNb => vec![ModelParams::GaussianNb],
            ModelKind::Lda => self
                .lda_shrinkage
                .iter()
                .map(|&shrinkage| ModelParams::Lda { shrinkage })
                .collect(),
            ModelKind::Qda => self
                .qda_regularization
                .iter()
                .map(|&regularization| ModelParams::Qda { regularization })
                .collect(),
            ModelKind::Sgd => {
                let mut out = Vec::new();
                for &loss in &self.sgd_loss {
                    for &alpha in &self.sgd_alpha {
                        for &rebalance in &self.sgd_rebalance {
                            out.push(ModelParams::Sgd(SgdParams {
                                loss,
                                alpha,
                                rebalance,
                                ..self.sgd_schedule
                            }));
                        }
                    }
                }
                out
            }
            ModelKind::Gbdt => {
                let leaves = self
                    .gbdt_max_leaves
                    .clone()
                    .unwrap_or_else(|| leaf_grid(dim).to_vec());
                let mut out = Vec::new();
                for &n_trees in &self.gbdt_n_trees {
                    for &max_leaves in &leaves {
                        for &lambda in &self.gbdt_lambda {
                            for &learning_rate in &self.gbdt_learning_rate {
                                for &sub in &self.gbdt_subsample {
                                    out.push(ModelParams::Gbdt(GbdtParams {
                                        n_trees,
                                        max_leaves,
                                        lambda,
                                        learning_rate,
                                        subsample_size: (sub > 0).then_some(sub),
                                        max_bins: self.gbdt_max_bins,
                                        bin_sample_rows: self.gbdt_bin_sample_rows,
                                    }));
                                }
                            }
                        }
                    }
                }
                out
            }
        }
    }
}

/// Manifest files, relative to the data root unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub bolivia_test: PathBuf,
}

impl Default for SplitPaths {
    fn default() -> Self {
        SplitPaths {
            train: "train.json".into(),
            valid: "valid.json".into(),
            test: "test.json".into(),
            bolivia_test: "bolivia_test.json".into(),
        }
    }
}

impl SplitPaths {
    pub fn get(&self, split: SplitName) -> &Path {
        match split {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
            SplitName::BoliviaTest => &self.bolivia_test,
        }
    }
}

fn default_search_seeds() -> Vec<u64> {
    (0..4).collect()
}

fn default_final_seeds() -> Vec<u64> {
    (0..16).collect()
}

fn default_final_splits() -> Vec<SplitName> {
    vec![SplitName::Test, SplitName::BoliviaTest]
}

/// Everything a grid search and its final evaluation depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchConfig {
    pub model: ModelKind,
    pub feature_spaces: Vec<String>,
    #[serde(default = "default_search_seeds")]
    pub search_seeds: Vec<u64>,
    #[serde(default = "default_final_seeds")]
    pub final_seeds: Vec<u64>,
    /// Splits reported by the final evaluation.
    #[serde(default = "default_final_splits")]
    pub final_splits: Vec<SplitName>,
    pub data_root: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub splits: SplitPaths,
    #[serde(default)]
    pub speckle_filter: bool,
    #[serde(default)]
    pub empty_policy: EmptyPolicy,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub jobs: usize,
    /// Keep a model document for every grid cell, not only the final runs.
    #[serde(default)]
    pub save_search_models: bool,
    #[serde(default)]
    pub speckle: LeeSigmaParams,
    #[serde(default)]
    pub normalization: NormalizationConfig,
    #[serde(default)]
    pub grid: HyperGrid,
}

impl GridSearchConfig {
    /// A config with default grid, seeds and splits.
    pub fn new(model: ModelKind, feature_spaces: &[&str], data_root: &Path, output_dir: &Path) -> Self {
        GridSearchConfig {
            model,
            feature_spaces: feature_spaces.iter().map(|s| s.to_string()).collect(),
            search_seeds: default_search_seeds(),
            final_seeds: default_final_seeds(),
            final_splits: default_final_splits(),
            data_root: data_root.to_path_buf(),
            output_dir: output_dir.to_path_buf(),
            splits: SplitPaths::default(),
            speckle_filter: false,
            empty_policy: EmptyPolicy::default(),
            jobs: 0,
            save_search_models: false,
            speckle: LeeSigmaParams::default(),
            normalization: NormalizationConfig::default(),
            grid: HyperGrid::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GridSearchConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.feature_spaces.is_empty() {
            return fail("feature_spaces is empty".into());
        }
        let mut names = BTreeSet::new();
        for fs in self.parsed_feature_spaces()? {
            if !names.insert(fs.name()) {
                return fail(format!("feature space {} listed twice", fs.name()));
            }
            if self.grid.expand(self.model, fs.dimensionality()).is_empty() {
                return fail(format!("empty {} grid for {}", self.model, fs.name()));
            }
        }
        for (what, seeds) in [("search_seeds", &self.search_seeds), ("final_seeds", &self.final_seeds)] {
            if seeds.is_empty() {
                return fail(format!("{what} is empty"));
            }
            if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
                return fail(format!("{what} contains duplicates"));
            }
        }
        if self.final_splits.contains(&SplitName::Train) {
            return fail("final_splits may not include the train split".into());
        }
        if self.speckle_filter {
            self.speckle.validate()?;
        }
        Ok(())
    }

    pub fn parsed_feature_spaces(&self) -> Result<Vec<FeatureSpaceSpec>> {
        self.feature_spaces
            .iter()
            .map(|s| FeatureSpaceSpec::parse(s).map_err(HarnessError::from))
            .collect()
    }

    pub fn feature_options(&self) -> FeatureOptions {
        FeatureOptions {
            normalization: self.normalization,
            speckle: self.speckle_filter.then_some(self.speckle),
        }
    }

    pub fn manifest_path(&self, split: SplitName) -> PathBuf {
        self.data_root.join(self.splits.get(split))
    }

    /// Grid points for one feature space.
    pub fn grid_points(&self, fs: &FeatureSpaceSpec) -> Vec<ModelParams> {
        self.grid.expand(self.model, fs.dimensionality())
    }

    pub fn threads(&self) -> usize {
        if self.jobs == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.jobs
        }
    }
}
