//! Gradient boosting on the logistic loss with histogram-based, leaf-wise grown trees.
//!
//! The model margin is `base_score + learning_rate * sum(tree outputs)`; each tree is a
//! second-order fit to the loss at the current margins.

mod binning;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use binning::{bin_features, bin_value, feature_cuts, BinIndex};
pub use tree::{find_best_split, grow_tree_leafwise, split_gain, GradSum, Histogram, Node, SplitCandidate, Tree};

use crate::classifiers::{check_training, sigmoid, Classifier, ClassifierError, Result};
use crate::features::Rows;
use crate::raster::Class;

/// Candidate leaf budgets for a feature space of the given dimensionality.
pub fn leaf_grid(dimensionality: usize) -> &'static [usize] {
    match dimensionality {
        0..=2 => &[2, 4],
        3 => &[4, 8],
        4 => &[4, 8, 16],
        5 => &[8, 16, 32],
        6 | 7 => &[16, 32, 64],
        _ => &[32, 64, 128],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    /// Rows drawn without replacement for each tree; all rows when `None`.
    pub subsample_size: Option<usize>,
    pub max_bins: usize,
    /// Rows used to place bin cut points.
    pub bin_sample_rows: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 200,
            max_leaves: 128,
            lambda: 1.0,
            learning_rate: 0.1,
            subsample_size: Some(262_144),
            max_bins: 256,
            bin_sample_rows: 1_000_000,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ClassifierError::InvalidHyper(msg));
        if self.max_leaves < 2 {
            return bad(format!("max_leaves must be >= 2, got {}", self.max_leaves));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.subsample_size == Some(0) {
            return bad("subsample size must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub lambda: f64,
    pub max_leaves: usize,
    pub n_trees: usize,
    pub subsample_size: Option<usize>,
    pub seed: u64,
    pub n_features: usize,
    pub bin_edges: Vec<Vec<f64>>,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f32]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl Classifier for GbdtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f32]) -> f64 {
        self.margin(x)
    }
}

/// Per-row gradient and hessian of the logistic loss at the given margins.
pub fn logistic_grad_hess(margins: &[f64], labels: &[Class], grad: &mut [f64], hess: &mut [f64]) {
    grad.par_iter_mut()
        .zip(hess.par_iter_mut())
        .zip(margins.par_iter().zip(labels.par_iter()))
        .for_each(|((g, h), (m, y))| {
            let p = sigmoid(*m);
            *g = p - if y.is_water() { 1.0 } else { 0.0 };
            *h = p * sigmoid(-*m);
        });
}

/// Mean logistic loss.
pub fn log_loss(margins: &[f64], labels: &[Class]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(m, y)| {
            let z = if y.is_water() { -m } else { *m };
            // ln(1 + e^z)
            if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() }
        })
        .sum();
    total / margins.len() as f64
}

pub fn fit_gbdt(x: Rows<'_>, y: &[Class], params: &GbdtParams, seed: u64) -> Result<GbdtModel> {
    fit_gbdt_with(x, y, params, seed, |_, _| {})
}

/// Like [`fit_gbdt`], calling `on_iteration(iteration, training_margins)` after each tree.
pub fn fit_gbdt_with(
    x: Rows<'_>,
    y: &[Class],
    params: &GbdtParams,
    seed: u64,
    mut on_iteration: impl FnMut(usize, &[f64]),
) -> Result<GbdtModel> {
    params.validate()?;
    let (dry, water) = check_training(&x, y)?;
    let n = y.len();
    let index = bin_features(x, params.max_bins, params.bin_sample_rows, seed)?;
    let base_score = (water as f64 / dry as f64).ln().clamp(-10.0, 10.0);
    let mut margins = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(params.n_trees);
    for it in 0..params.n_trees {
        logistic_grad_hess(&margins, y, &mut grad, &mut hess);
        let rows: Vec<u32> = match params.subsample_size {
            Some(k) if k < n => {
                let mut idx: Vec<u32> = rand::seq::index::sample(&mut rng, n, k)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect();
                idx.sort_unstable();
                idx
            }
            _ => (0..n as u32).collect(),
        };
        let tree = grow_tree_leafwise(rows, &grad, &hess, &index, params.max_leaves, params.lambda);
        let eta = params.learning_rate;
        margins
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m += eta * tree.predict_binned(&index, i));
        trees.push(tree);
        on_iteration(it, &margins);
    }
    Ok(GbdtModel {
        base_score,
        learning_rate: params.learning_rate,
        lambda: params.lambda,
        max_leaves: params.max_leaves,
        n_trees: params.n_trees,
        subsample_size: params.subsample_size,
        seed,
        n_features: x.n_cols(),
        bin_edges: index.cuts().to_vec(),
        trees,
    })
}

/// Margins and labels (Water iff margin > 0).
pub fn predict_gbdt(model: &GbdtModel, x: Rows<'_>) -> Result<(Vec<Class>, Vec<f64>)> {
    let margins = crate::classifiers::decision_function(model, x)?;
    let labels = margins.iter().map(|m| Class::from_water(*m > 0.0)).collect();
    Ok((labels, margins))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn params(n_trees: usize, max_leaves: usize) -> GbdtParams {
        GbdtParams {
            n_trees,
            max_leaves,
            lambda: 1.0,
            learning_rate: 0.1,
            subsample_size: None,
            ..Default::default()
        }
    }

    /// Four jittered clusters with XOR labels. Cluster sizes differ so that the first
    /// split has a strictly positive gain.
    fn xor(n_per: usize, seed: u64) -> (Vec<f32>, Vec<Class>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (cx, cy, k) in [(0.0f32, 0.0f32, 4), (1.0, 1.0, 4), (0.0, 1.0, 6), (1.0, 0.0, 2)] {
            for _ in 0..n_per * k / 4 {
                x.push(cx + rng.random_range(-0.2..0.2));
                x.push(cy + rng.random_range(-0.2..0.2));
                y.push(Class::from_water(cx != cy));
            }
        }
        (x, y)
    }

    fn threshold_1d(n: usize) -> (Vec<f32>, Vec<Class>) {
        let x: Vec<f32> = (0..n).map(|i| i as f32 / n as f32).collect();
        let y = x.iter().map(|v| Class::from_water(*v > 0.37)).collect();
        (x, y)
    }

    #[test]
    fn leaf_grid_follows_dimensionality_table() {
        let table: [(usize, &[usize]); 8] = [
            (2, &[2, 4]),
            (3, &[4, 8]),
            (4, &[4, 8, 16]),
            (5, &[8, 16, 32]),
            (6, &[16, 32, 64]),
            (7, &[16, 32, 64]),
            (8, &[32, 64, 128]),
            (15, &[32, 64, 128]),
        ];
        for (d, grid) in table {
            assert_eq!(leaf_grid(d), grid, "d = {d}");
        }
    }

    #[test]
    fn grad_hess_at_zero_and_saturation() {
        let mut g = [0.0; 2];
        let mut h = [0.0; 2];
        logistic_grad_hess(&[0.0, 800.0], &[Class::Water, Class::Water], &mut g, &mut h);
        assert_eq!((g[0], h[0]), (-0.5, 0.25));
        assert!(g[1].abs() < 1e-300 && h[1].abs() < 1e-300);
    }

    #[test]
    fn grad_hess_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Vec<f64> = (0..1000).map(|_| rng.random_range(-8.0..8.0)).collect();
        let y: Vec<Class> = (0..1000).map(|_| Class::from_water(rng.random())).collect();
        let mut g = vec![0.0; 1000];
        let mut h = vec![0.0; 1000];
        logistic_grad_hess(&m, &y, &mut g, &mut h);
        let eps = 1e-4;
        for i in 0..1000 {
            let l = |v: f64| log_loss(&[v], &y[i..=i]);
            let fd_g = (l(m[i] + eps) - l(m[i] - eps)) / (2.0 * eps);
            let fd_h = (l(m[i] + eps) - 2.0 * l(m[i]) + l(m[i] - eps)) / (eps * eps);
            assert!((fd_g - g[i]).abs() < 1e-6, "{i}");
            assert!((fd_h - h[i]).abs() < 1e-6, "{i}");
        }
    }

    #[test]
    fn threshold_data_fits_with_stumps() {
        let (x, y) = threshold_1d(1000);
        let p = GbdtParams {
            n_trees: 50,
            max_leaves: 2,
            lambda: 0.01,
            ..params(50, 2)
        };
        let model = fit_gbdt(Rows::new(&x, 1).unwrap(), &y, &p, 0).unwrap();
        let (pred, _) = predict_gbdt(&model, Rows::new(&x, 1).unwrap()).unwrap();
        let c = crate::metrics::confusion(&pred, &crate::raster::Grid::new(
            1000,
            1,
            y.iter().map(|c| (*c).into()).collect(),
        )
        .unwrap())
        .unwrap();
        let iou = crate::metrics::MetricSet::from_counts(&c).unwrap().iou;
        assert!(iou >= 0.99, "{iou}");
        // Stumps on one feature give a monotone step function.
        let margins: Vec<f64> = (0..1000).map(|i| model.margin(&[i as f32 / 1000.0])).collect();
        assert!(margins.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn xor_is_learned_with_four_leaves() {
        // Clusters collapsed to their corners: greedy splits cannot shave single
        // edge points across the gap.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (cx, cy, k) in [(0.0f32, 0.0f32, 40), (1.0, 1.0, 40), (0.0, 1.0, 60), (1.0, 0.0, 20)] {
            for _ in 0..k {
                x.extend_from_slice(&[cx, cy]);
                y.push(Class::from_water(cx != cy));
            }
        }
        let model = fit_gbdt(Rows::new(&x, 2).unwrap(), &y, &params(50, 4), 0).unwrap();
        let (pred, _) = predict_gbdt(&model, Rows::new(&x, 2).unwrap()).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn training_loss_never_increases() {
        let (x, y) = xor(80, 2);
        let mut losses = Vec::new();
        fit_gbdt_with(Rows::new(&x, 2).unwrap(), &y, &params(50, 4), 0, |_, m| losses.push(log_loss(m, &y))).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{losses:?}");
    }

    #[test]
    fn informative_feature_is_chosen_at_the_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let mut x = Vec::with_capacity(n * 6);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f32> = (0..6).map(|_| rng.random()).collect();
            y.push(Class::from_water(row[3] > 0.5));
            x.extend(row);
        }
        let model = fit_gbdt(Rows::new(&x, 6).unwrap(), &y, &params(1, 2), 0).unwrap();
        match &model.trees[0].nodes[0] {
            Node::Split { feature, .. } => assert_eq!(*feature, 3),
            n => panic!("{n:?}"),
        }
    }

    #[test]
    fn zero_learning_rate_is_the_base_rate_classifier() {
        let (x, y) = xor(30, 5);
        let p = GbdtParams {
            learning_rate: 0.0,
            ..params(5, 4)
        };
        let model = fit_gbdt(Rows::new(&x, 2).unwrap(), &y, &p, 0).unwrap();
        let (_, margins) = predict_gbdt(&model, Rows::new(&x, 2).unwrap()).unwrap();
        assert!(margins.iter().all(|m| *m == model.base_score));

        let empty = GbdtModel { trees: vec![], ..model };
        let (labels, _) = predict_gbdt(&empty, Rows::new(&x, 2).unwrap()).unwrap();
        assert!(labels.iter().all(|c| *c == Class::from_water(empty.base_score > 0.0)));
    }

    #[test]
    fn single_stump_yields_two_margins() {
        let (x, y) = threshold_1d(200);
        let model = fit_gbdt(Rows::new(&x, 1).unwrap(), &y, &params(1, 2), 0).unwrap();
        let (_, margins) = predict_gbdt(&model, Rows::new(&x, 1).unwrap()).unwrap();
        let mut distinct = margins.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn margins_match_naive_tree_walk() {
        let (x, y) = xor(250, 6);
        let model = fit_gbdt(Rows::new(&x, 2).unwrap(), &y, &params(20, 8), 0).unwrap();
        let (_, margins) = predict_gbdt(&model, Rows::new(&x, 2).unwrap()).unwrap();
        for (i, m) in margins.iter().enumerate() {
            let row = &x[i * 2..i * 2 + 2];
            let mut sum = 0.0;
            for tree in &model.trees {
                let mut node = &tree.nodes[0];
                while let Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } = node
                {
                    node = &tree.nodes[if row[*feature] as f64 <= *threshold { *left } else { *right }];
                }
                if let Node::Leaf { value } = node {
                    sum += value;
                }
            }
            assert!((m - (model.base_score + 0.1 * sum)).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_full_subsample_equals_none() {
        let (x, y) = xor(100, 7);
        let rows = Rows::new(&x, 2).unwrap();
        let sub = GbdtParams {
            subsample_size: Some(150),
            ..params(10, 4)
        };
        let a = fit_gbdt(rows, &y, &sub, 9).unwrap();
        let b = fit_gbdt(rows, &y, &sub, 9).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

        let none = fit_gbdt(rows, &y, &params(10, 4), 9).unwrap();
        let full = fit_gbdt(
            rows,
            &y,
            &GbdtParams {
                subsample_size: Some(400),
                ..params(10, 4)
            },
            9,
        )
        .unwrap();
        assert_eq!(none.trees, full.trees);
    }

    #[test]
    fn headline_configuration_runs_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3000;
        let x: Vec<f32> = (0..n * 9).map(|_| rng.random()).collect();
        let y: Vec<Class> = (0..n).map(|i| Class::from_water(x[i * 9] + x[i * 9 + 4] > 1.0)).collect();
        let p = GbdtParams {
            n_trees: 200,
            max_leaves: 128,
            lambda: 1.0,
            learning_rate: 0.1,
            subsample_size: Some(262_144),
            ..Default::default()
        };
        let model = fit_gbdt(Rows::new(&x, 9).unwrap(), &y, &p, 0).unwrap();
        assert_eq!(model.trees.len(), 200);
        assert!(model.trees.iter().all(|t| t.n_leaves() <= 128));
        let json = serde_json::to_string(&model).unwrap();
        let back: GbdtModel = serde_json::from_str(&json).unwrap();
        let rows = Rows::new(&x, 9).unwrap();
        assert_eq!(predict_gbdt(&model, rows).unwrap(), predict_gbdt(&back, rows).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let x = [0.0f32, 1.0];
        assert!(matches!(
            fit_gbdt(Rows::new(&x, 1).unwrap(), &[Class::Water; 2], &params(1, 2), 0),
            Err(ClassifierError::SingleClass(Class::Water))
        ));
    }
}
