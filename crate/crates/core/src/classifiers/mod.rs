//! Non-ensemble pixel classifiers behind a shared predict contract.

mod bayes;
mod sgd;

use rayon::prelude::*;
use thiserror::Error;

pub use bayes::{fit_gaussian_nb, fit_lda, fit_qda, GaussianNbModel, LdaModel, QdaModel};
pub use sgd::{fit_sgd, LinearSgdModel, SgdLoss, SgdParams};

use crate::features::Rows;
use crate::raster::Class;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("training data is empty")]
    Empty,
    #[error("training data contains only {0:?} pixels")]
    SingleClass(Class),
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("model expects {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need more rows than features ({rows} <= {dims})")]
    TooFewRows { rows: usize, dims: usize },
    #[error("covariance not positive definite: {0}")]
    Singular(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("non-finite feature value in row {0}")]
    NonFinite(usize),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

/// A trained binary model. `score` is a decision value whose sign gives the class.
pub trait Classifier {
    fn n_features(&self) -> usize;

    /// Decision value for one row; Water iff positive.
    fn score(&self, x: &[f32]) -> f64;

    /// Posterior probability of Water given the decision value.
    fn probability(&self, score: f64) -> f64 {
        sigmoid(score)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dims<C: Classifier + ?Sized>(model: &C, rows: &Rows<'_>) -> Result<()> {
    if rows.n_cols() != model.n_features() {
        return Err(ClassifierError::DimensionMismatch {
            expected: model.n_features(),
            got: rows.n_cols(),
        });
    }
    Ok(())
}

pub fn decision_function<C: Classifier + Sync + ?Sized>(model: &C, rows: Rows<'_>) -> Result<Vec<f64>> {
    check_dims(model, &rows)?;
    Ok((0..rows.n_rows()).into_par_iter().map(|i| model.score(rows.row(i))).collect())
}

pub fn predict<C: Classifier + Sync + ?Sized>(model: &C, rows: Rows<'_>) -> Result<Vec<Class>> {
    Ok(decision_function(model, rows)?
        .into_iter()
        .map(|s| Class::from_water(s > 0.0))
        .collect())
}

/// Rows of `[P(Dry), P(Water)]`.
pub fn predict_proba<C: Classifier + Sync + ?Sized>(model: &C, rows: Rows<'_>) -> Result<Vec<[f64; 2]>> {
    Ok(decision_function(model, rows)?
        .into_iter()
        .map(|s| {
            let p = model.probability(s);
            [1.0 - p, p]
        })
        .collect())
}

/// Validates a training set and returns its class counts `(dry, water)`.
pub(crate) fn check_training(x: &Rows<'_>, y: &[Class]) -> Result<(usize, usize)> {
    if x.n_rows() != y.len() {
        return Err(ClassifierError::LabelCount {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    if y.is_empty() {
        return Err(ClassifierError::Empty);
    }
    if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(ClassifierError::NonFinite(i));
    }
    let water = y.iter().filter(|c| c.is_water()).count();
    match water {
        0 => Err(ClassifierError::SingleClass(Class::Dry)),
        w if w == y.len() => Err(ClassifierError::SingleClass(Class::Water)),
        w => Ok((y.len() - w, w)),
    }
}
