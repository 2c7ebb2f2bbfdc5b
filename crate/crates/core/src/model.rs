//! Model dispatch and the versioned on-disk model document.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{
    fit_gaussian_nb, fit_lda, fit_qda, fit_sgd, Classifier, ClassifierError, GaussianNbModel, LdaModel,
    LinearSgdModel, QdaModel, SgdLoss, SgdParams,
};
use crate::features::{FeatureOptions, FeatureSpaceSpec, Rows};
use crate::gbdt::{fit_gbdt, GbdtModel, GbdtParams};
use crate::raster::Class;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GaussianNb,
    Lda,
    Qda,
    Sgd,
    Gbdt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::GaussianNb,
        ModelKind::Lda,
        ModelKind::Qda,
        ModelKind::Sgd,
        ModelKind::Gbdt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GaussianNb => "gaussian_nb",
            ModelKind::Lda => "lda",
            ModelKind::Qda => "qda",
            ModelKind::Sgd => "sgd",
            ModelKind::Gbdt => "gbdt",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "nb" | "naive_bayes" => Ok(ModelKind::GaussianNb),
            _ => ModelKind::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| format!("unknown model kind `{s}`")),
        }
    }
}

/// Hyperparameters of one model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    GaussianNb,
    Lda { shrinkage: f64 },
    Qda { regularization: f64 },
    Sgd(SgdParams),
    Gbdt(GbdtParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::GaussianNb => ModelKind::GaussianNb,
            ModelParams::Lda { .. } => ModelKind::Lda,
            ModelParams::Qda { .. } => ModelKind::Qda,
            ModelParams::Sgd(_) => ModelKind::Sgd,
            ModelParams::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    /// Short stable description of the searched hyperparameters.
    pub fn key(&self) -> String {
        match self {
            ModelParams::GaussianNb => "gaussian_nb".into(),
            ModelParams::Lda { shrinkage } => format!("lda(shrinkage={shrinkage})"),
            ModelParams::Qda { regularization } => format!("qda(reg={regularization})"),
            ModelParams::Sgd(p) => format!(
                "sgd(loss={},alpha={},rebalance={})",
                p.loss.name(),
                p.alpha,
                p.rebalance
            ),
            ModelParams::Gbdt(p) => format!(
                "gbdt(trees={},leaves={},lambda={},eta={},subsample={})",
                p.n_trees,
                p.max_leaves,
                p.lambda,
                p.learning_rate,
                p.subsample_size.map_or("all".to_string(), |s| s.to_string())
            ),
        }
    }

    /// Named hyperparameter values, for grouping results.
    pub fn values(&self) -> Vec<(&'static str, String)> {
        match self {
            ModelParams::GaussianNb => vec![],
            ModelParams::Lda { shrinkage } => vec![("shrinkage", shrinkage.to_string())],
            ModelParams::Qda { regularization } => vec![("regularization", regularization.to_string())],
            ModelParams::Sgd(p) => vec![
                ("loss", p.loss.name().to_string()),
                ("alpha", p.alpha.to_string()),
                ("rebalance", p.rebalance.to_string()),
            ],
            ModelParams::Gbdt(p) => vec![
                ("n_trees", p.n_trees.to_string()),
                ("max_leaves", p.max_leaves.to_string()),
                ("lambda", p.lambda.to_string()),
                ("learning_rate", p.learning_rate.to_string()),
                (
                    "subsample_size",
                    p.subsample_size.map_or("all".to_string(), |s| s.to_string()),
                ),
            ],
        }
    }

    pub fn sgd(loss: SgdLoss, alpha: f64, rebalance: bool) -> Self {
        ModelParams::Sgd(SgdParams {
            loss,
            alpha,
            rebalance,
            ..Default::default()
        })
    }
}

/// A trained model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Model {
    GaussianNb(GaussianNbModel),
    Lda(LdaModel),
    Qda(QdaModel),
    Sgd(LinearSgdModel),
    Gbdt(GbdtModel),
}

impl Model {
    pub fn fit(params: &ModelParams, x: Rows<'_>, y: &[Class], seed: u64) -> Result<Model, ClassifierError> {
        Ok(match params {
            ModelParams::GaussianNb => Model::GaussianNb(fit_gaussian_nb(x, y)?),
            ModelParams::Lda { shrinkage } => Model::Lda(fit_lda(x, y, *shrinkage)?),
            ModelParams::Qda { regularization } => Model::Qda(fit_qda(x, y, *regularization)?),
            ModelParams::Sgd(p) => Model::Sgd(fit_sgd(x, y, p, seed)?),
            ModelParams::Gbdt(p) => Model::Gbdt(fit_gbdt(x, y, p, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::GaussianNb(_) => ModelKind::GaussianNb,
            Model::Lda(_) => ModelKind::Lda,
            Model::Qda(_) => ModelKind::Qda,
            Model::Sgd(_) => ModelKind::Sgd,
            Model::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    fn inner(&self) -> &(dyn Classifier + Sync) {
        match self {
            Model::GaussianNb(m) => m,
            Model::Lda(m) => m,
            Model::Qda(m) => m,
            Model::Sgd(m) => m,
            Model::Gbdt(m) => m,
        }
    }
}

impl Classifier for Model {
    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn score(&self, x: &[f32]) -> f64 {
        self.inner().score(x)
    }

    fn probability(&self, score: f64) -> f64 {
        self.inner().probability(score)
    }
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: unsupported model format version {found} (expected {FORMAT_VERSION})")]
    Version { path: String, found: u32 },
}

/// A trained model together with everything needed to featurize new tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub feature_space: FeatureSpaceSpec,
    pub features: FeatureOptions,
    pub params: ModelParams,
    pub seed: u64,
    pub model: Model,
}

impl ModelDocument {
    pub fn new(
        feature_space: FeatureSpaceSpec,
        features: FeatureOptions,
        params: ModelParams,
        seed: u64,
        model: Model,
    ) -> Self {
        ModelDocument {
            format_version: FORMAT_VERSION,
            feature_space,
            features,
            params,
            seed,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        let p = path.display().to_string();
        let json = serde_json::to_vec(self).map_err(|source| ModelIoError::Json { path: p.clone(), source })?;
        crate::raster::write_file_atomic(path, &json).map_err(|source| ModelIoError::Io { path: p, source })
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let p = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| ModelIoError::Io { path: p.clone(), source })?;
        let doc: ModelDocument =
            serde_json::from_slice(&bytes).map_err(|source| ModelIoError::Json { path: p.clone(), source })?;
        if doc.format_version != FORMAT_VERSION {
            return Err(ModelIoError::Version {
                path: p,
                found: doc.format_version,
            });
        }
        Ok(doc)
    }
}
