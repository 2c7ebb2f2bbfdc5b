//! Gaussian generative classifiers: naive Bayes, LDA with shrinkage, regularized QDA.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{check_training, Classifier, ClassifierError, Result};
use crate::features::Rows;
use crate::raster::Class;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-class sample moments (maximum-likelihood covariance).
struct ClassMoments {
    count: [usize; 2],
    mean: [DVector<f64>; 2],
    cov: [DMatrix<f64>; 2],
}

fn class_index(c: Class) -> usize {
    usize::from(c.is_water())
}

fn moments(x: &Rows<'_>, y: &[Class], transform: impl Fn(usize, f32) -> f64) -> ClassMoments {
    let d = x.n_cols();
    let mut count = [0usize; 2];
    let mut sum = [DVector::zeros(d), DVector::zeros(d)];
    for (row, c) in x.iter().zip(y) {
        let k = class_index(*c);
        count[k] += 1;
        for (j, v) in row.iter().enumerate() {
            sum[k][j] += transform(j, *v);
        }
    }
    let mean = [0, 1].map(|k| &sum[k] / count[k] as f64);
    let mut cov = [DMatrix::zeros(d, d), DMatrix::zeros(d, d)];
    let mut centered = DVector::zeros(d);
    for (row, c) in x.iter().zip(y) {
        let k = class_index(*c);
        for (j, v) in row.iter().enumerate() {
            centered[j] = transform(j, *v) - mean[k][j];
        }
        cov[k].syger(1.0, &centered, &centered, 1.0);
    }
    for k in 0..2 {
        cov[k] /= count[k] as f64;
        cov[k].fill_upper_triangle_with_lower_triangle();
    }
    ClassMoments { count, mean, cov }
}

fn priors(count: [usize; 2]) -> [f64; 2] {
    let n = (count[0] + count[1]) as f64;
    [count[0] as f64 / n, count[1] as f64 / n]
}

/// Cholesky factorization that also rejects numerically singular matrices.
fn checked_cholesky(cov: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = cov.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let chol = cov.cholesky()?;
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v * v));
    (min_pivot > 1e-12 * scale).then_some(chol)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNbModel {
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub var_epsilon: f64,
}

pub fn fit_gaussian_nb(x: Rows<'_>, y: &[Class]) -> Result<GaussianNbModel> {
    check_training(&x, y)?;
    let d = x.n_cols();
    let m = moments(&x, y, |_, v| v as f64);
    // Floor relative to the largest overall feature variance.
    let n = y.len() as f64;
    let mut max_var: f64 = 0.0;
    for j in 0..d {
        let mut s = 0.0;
        let mut s2 = 0.0;
        for row in x.iter() {
            let v = row[j] as f64;
            s += v;
            s2 += v * v;
        }
        let mu = s / n;
        max_var = max_var.max(s2 / n - mu * mu);
    }
    let eps = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };
    Ok(GaussianNbModel {
        priors: priors(m.count),
        means: [0, 1].map(|k| m.mean[k].iter().copied().collect()),
        variances: [0, 1].map(|k| (0..d).map(|j| m.cov[k][(j, j)] + eps).collect()),
        var_epsilon: eps,
    })
}

impl GaussianNbModel {
    fn joint_log_likelihood(&self, k: usize, x: &[f32]) -> f64 {
        let mut ll = self.priors[k].ln();
        for ((v, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let diff = *v as f64 - mu;
            ll -= 0.5 * (LN_2PI + var.ln() + diff * diff / var);
        }
        ll
    }
}

impl Classifier for GaussianNbModel {
    fn n_features(&self) -> usize {
        self.means[0].len()
    }

    fn score(&self, x: &[f32]) -> f64 {
        self.joint_log_likelihood(1, x) - self.joint_log_likelihood(0, x)
    }
}

/// Linear discriminant with a pooled, shrunk covariance. The log posterior odds are
/// `weights . x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub shrinkage: f64,
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub covariance: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Applies `(1 - rho) * cov + rho * (trace(cov) / d) * I`.
pub(crate) fn shrink(cov: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let target = cov.trace() / d as f64;
    cov * (1.0 - rho) + DMatrix::identity(d, d) * (rho * target)
}

pub fn fit_lda(x: Rows<'_>, y: &[Class], shrinkage: f64) -> Result<LdaModel> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(ClassifierError::InvalidHyper(format!(
            "shrinkage must lie in [0, 1], got {shrinkage}"
        )));
    }
    let (dry, water) = check_training(&x, y)?;
    let d = x.n_cols();
    if dry + water <= d {
        return Err(ClassifierError::TooFewRows { rows: dry + water, dims: d });
    }
    let m = moments(&x, y, |_, v| v as f64);
    let pi = priors(m.count);
    let pooled = &m.cov[0] * pi[0] + &m.cov[1] * pi[1];
    let cov = shrink(&pooled, shrinkage);
    let chol = checked_cholesky(cov.clone())
        .ok_or_else(|| ClassifierError::Singular(format!("pooled covariance, shrinkage {shrinkage}")))?;
    let diff = &m.mean[1] - &m.mean[0];
    let w = chol.solve(&diff);
    let q1 = m.mean[1].dot(&chol.solve(&m.mean[1]));
    let q0 = m.mean[0].dot(&chol.solve(&m.mean[0]));
    let bias = -0.5 * (q1 - q0) + (pi[1] / pi[0]).ln();
    Ok(LdaModel {
        shrinkage,
        priors: pi,
        means: [0, 1].map(|k| m.mean[k].iter().copied().collect()),
        covariance: to_rows(&cov),
        weights: w.iter().copied().collect(),
        bias,
    })
}

impl LdaModel {
    /// Replaces the class priors (normalized to sum to 1).
    pub fn with_priors(mut self, priors: [f64; 2]) -> Self {
        let s = priors[0] + priors[1];
        let new = [priors[0] / s, priors[1] / s];
        self.bias += (new[1] / new[0]).ln() - (self.priors[1] / self.priors[0]).ln();
        self.priors = new;
        self
    }
}

impl Classifier for LdaModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, x: &[f32]) -> f64 {
        self.bias + x.iter().zip(&self.weights).map(|(v, w)| *v as f64 * w).sum::<f64>()
    }
}

/// Quadratic discriminant on standardized features with covariances
/// `(1 - r) * cov_k + r * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdaModel {
    pub regularization: f64,
    pub priors: [f64; 2],
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Class means in standardized units.
    pub means: [Vec<f64>; 2],
    /// Row-major lower Cholesky factors of the regularized covariances.
    pub cholesky: [Vec<f64>; 2],
    pub log_det: [f64; 2],
}

pub fn fit_qda(x: Rows<'_>, y: &[Class], regularization: f64) -> Result<QdaModel> {
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(ClassifierError::InvalidHyper(format!(
            "regularization must be non-negative, got {regularization}"
        )));
    }
    let (dry, water) = check_training(&x, y)?;
    let d = x.n_cols();
    if dry.min(water) <= d {
        return Err(ClassifierError::TooFewRows {
            rows: dry.min(water),
            dims: d,
        });
    }
    let n = y.len() as f64;
    let mut feature_mean = vec![0.0; d];
    let mut feature_sq = vec![0.0; d];
    for row in x.iter() {
        for (j, v) in row.iter().enumerate() {
            feature_mean[j] += *v as f64;
            feature_sq[j] += (*v as f64) * (*v as f64);
        }
    }
    let feature_scale: Vec<f64> = (0..d)
        .map(|j| {
            feature_mean[j] /= n;
            let var = feature_sq[j] / n - feature_mean[j] * feature_mean[j];
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let m = moments(&x, y, |j, v| (v as f64 - feature_mean[j]) / feature_scale[j]);
    let mut cholesky = [Vec::new(), Vec::new()];
    let mut log_det = [0.0; 2];
    for k in 0..2 {
        let cov = &m.cov[k] * (1.0 - regularization) + DMatrix::identity(d, d) * regularization;
        let chol = checked_cholesky(cov).ok_or_else(|| {
            ClassifierError::Singular(format!("class {k} covariance, regularization {regularization}"))
        })?;
        let l = chol.l();
        log_det[k] = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        cholesky[k] = l.transpose().as_slice().to_vec();
    }
    Ok(QdaModel {
        regularization,
        priors: priors(m.count),
        feature_mean,
        feature_scale,
        means: [0, 1].map(|k| m.mean[k].iter().copied().collect()),
        cholesky,
        log_det,
    })
}

impl QdaModel {
    fn discriminant(&self, k: usize, z: &[f64], buf: &mut [f64]) -> f64 {
        let d = z.len();
        let l = &self.cholesky[k];
        // Forward substitution: L u = z - mu.
        let mut maha = 0.0;
        for i in 0..d {
            let mut s = z[i] - self.means[k][i];
            for j in 0..i {
                s -= l[i * d + j] * buf[j];
            }
            buf[i] = s / l[i * d + i];
            maha += buf[i] * buf[i];
        }
        self.priors[k].ln() - 0.5 * (self.log_det[k] + maha)
    }
}

impl Classifier for QdaModel {
    fn n_features(&self) -> usize {
        self.feature_mean.len()
    }

    fn score(&self, x: &[f32]) -> f64 {
        let z: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, v)| (*v as f64 - self.feature_mean[j]) / self.feature_scale[j])
            .collect();
        let mut buf = vec![0.0; z.len()];
        self.discriminant(1, &z, &mut buf) - self.discriminant(0, &z, &mut buf)
    }
}
