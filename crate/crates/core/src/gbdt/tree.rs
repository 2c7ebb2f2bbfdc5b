use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::BinIndex;

/// Gradient/hessian sums of one histogram bin or one node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradSum {
    pub g: f64,
    pub h: f64,
    pub n: u32,
}

impl GradSum {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: GradSum) -> GradSum {
        GradSum {
            g: self.g + o.g,
            h: self.h + o.h,
            n: self.n + o.n,
        }
    }

    fn minus(self, o: GradSum) -> GradSum {
        GradSum {
            g: self.g - o.g,
            h: self.h - o.h,
            n: self.n - o.n,
        }
    }
}

/// Per-feature bin histograms of a node, flattened with fixed stride 256.
#[derive(Debug, Clone)]
pub struct Histogram {
    bins: Vec<GradSum>,
}

const STRIDE: usize = 256;

impl Histogram {
    pub fn build(rows: &[u32], grad: &[f64], hess: &[f64], index: &BinIndex) -> Histogram {
        let per_feature: Vec<Vec<GradSum>> = (0..index.n_features())
            .into_par_iter()
            .map(|j| {
                let col = index.column(j);
                let mut h = vec![GradSum::default(); index.n_bins(j)];
                for &r in rows {
                    let r = r as usize;
                    h[col[r] as usize].add(grad[r], hess[r]);
                }
                h.resize(STRIDE, GradSum::default());
                h
            })
            .collect();
        Histogram {
            bins: per_feature.concat(),
        }
    }

    pub fn feature(&self, j: usize) -> &[GradSum] {
        &self.bins[j * STRIDE..(j + 1) * STRIDE]
    }

    /// `self - other`, used to derive the larger child from parent and smaller child.
    pub fn subtract(&self, other: &Histogram) -> Histogram {
        Histogram {
            bins: self.bins.iter().zip(&other.bins).map(|(a, b)| a.minus(*b)).collect(),
        }
    }
}

pub fn leaf_objective(s: GradSum, lambda: f64) -> f64 {
    let den = s.h + lambda;
    if den > 0.0 { s.g * s.g / den } else { 0.0 }
}

pub fn leaf_value(s: GradSum, lambda: f64) -> f64 {
    let den = s.h + lambda;
    if den > 0.0 { -s.g / den } else { 0.0 }
}

/// `0.5 * [G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)]`.
pub fn split_gain(left: GradSum, right: GradSum, lambda: f64) -> f64 {
    0.5 * (leaf_objective(left, lambda) + leaf_objective(right, lambda)
        - leaf_objective(left.plus(right), lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    /// Rows with bin `<= bin` go left.
    pub bin: usize,
    pub gain: f64,
    pub left: GradSum,
    pub right: GradSum,
}

/// Best split of a node over all (feature, bin) pairs; ties go to the lowest feature,
/// then the lowest bin. `None` when no split with non-empty children has positive gain.
pub fn find_best_split(hist: &Histogram, total: GradSum, index: &BinIndex, lambda: f64) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> = (0..index.n_features())
        .into_par_iter()
        .map(|j| {
            let h = hist.feature(j);
            let mut best: Option<SplitCandidate> = None;
            let mut left = GradSum::default();
            for (b, bin) in h.iter().enumerate().take(index.n_bins(j).saturating_sub(1)) {
                left = left.plus(*bin);
                let right = total.minus(left);
                if left.n == 0 || right.n == 0 {
                    continue;
                }
                let gain = split_gain(left, right, lambda);
                if gain > best.map_or(0.0, |s| s.gain) {
                    best = Some(SplitCandidate {
                        feature: j,
                        bin: b,
                        gain,
                        left,
                        right,
                    });
                }
            }
            best
        })
        .collect();
    per_feature.into_iter().flatten().fold(None, |acc: Option<SplitCandidate>, c| match acc {
        Some(a) if a.gain >= c.gain => Some(a),
        _ => Some(c),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        bin: usize,
        /// Raw-value threshold: left iff `x[feature] <= threshold`.
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if (x[*feature] as f64) <= *threshold { *left } else { *right },
            }
        }
    }

    /// Same as [`Tree::predict`] for a row of the index the tree was grown on.
    pub fn predict_binned(&self, index: &BinIndex, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature, bin, left, right, ..
                } => i = if index.bin(row, *feature) as usize <= *bin { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

struct Frontier {
    node: usize,
    rows: Vec<u32>,
    hist: Histogram,
    total: GradSum,
    best: Option<SplitCandidate>,
}

fn total_of(rows: &[u32], grad: &[f64], hess: &[f64]) -> GradSum {
    let mut s = GradSum::default();
    for &r in rows {
        s.add(grad[r as usize], hess[r as usize]);
    }
    s
}

/// Grows one tree best-first: the frontier leaf with the largest gain is split until
/// `max_leaves` leaves exist or no leaf has a positive-gain split. Ties go to the
/// leaf created first.
pub fn grow_tree_leafwise(
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    index: &BinIndex,
    max_leaves: usize,
    lambda: f64,
) -> Tree {
    let hist = Histogram::build(&rows, grad, hess, index);
    let total = total_of(&rows, grad, hess);
    let best = find_best_split(&hist, total, index, lambda);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut frontier = vec![Frontier {
        node: 0,
        rows,
        hist,
        total,
        best,
    }];
    while frontier.len() < max_leaves {
        let mut pick: Option<usize> = None;
        for (i, f) in frontier.iter().enumerate() {
            if let Some(s) = f.best {
                if pick.is_none_or(|p| s.gain > frontier[p].best.unwrap().gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let leaf = frontier.remove(pick);
        let split = leaf.best.unwrap();
        let col = index.column(split.feature);
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.iter().partition(|&&r| col[r as usize] as usize <= split.bin);
        let (small, small_is_left) = if left_rows.len() <= right_rows.len() {
            (&left_rows, true)
        } else {
            (&right_rows, false)
        };
        let small_hist = Histogram::build(small, grad, hess, index);
        let large_hist = leaf.hist.subtract(&small_hist);
        let (left_hist, right_hist) = if small_is_left {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            bin: split.bin,
            threshold: index.cuts()[split.feature][split.bin],
            left: li,
            right: ri,
            gain: split.gain,
        };
        // Sums are recomputed from rows so leaf values do not inherit subtraction error.
        for (node, rows, hist) in [(li, left_rows, left_hist), (ri, right_rows, right_hist)] {
            let total = total_of(&rows, grad, hess);
            let best = find_best_split(&hist, total, index, lambda);
            frontier.push(Frontier {
                node,
                rows,
                hist,
                total,
                best,
            });
        }
    }
    for f in frontier {
        nodes[f.node] = Node::Leaf {
            value: leaf_value(f.total, lambda),
        };
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::Rows;
    use crate::gbdt::binning::bin_features;

    /// Exhaustive search over raw-value thresholds at the cut points.
    fn brute_force(x: &[f32], d: usize, grad: &[f64], hess: &[f64], cuts: &[Vec<f64>], lambda: f64) -> Option<(usize, usize, f64)> {
        let n = grad.len();
        let mut best: Option<(usize, usize, f64)> = None;
        for (j, cj) in cuts.iter().enumerate() {
            for (b, cut) in cj.iter().enumerate() {
                let (mut gl, mut hl, mut nl, mut gr, mut hr, mut nr) = (0.0, 0.0, 0, 0.0, 0.0, 0);
                for i in 0..n {
                    if (x[i * d + j] as f64) <= *cut {
                        gl += grad[i];
                        hl += hess[i];
                        nl += 1;
                    } else {
                        gr += grad[i];
                        hr += hess[i];
                        nr += 1;
                    }
                }
                if nl == 0 || nr == 0 {
                    continue;
                }
                let gain = 0.5
                    * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda)
                        - (gl + gr) * (gl + gr) / (hl + hr + lambda));
                if gain > best.map_or(0.0, |b| b.2) + 1e-12 {
                    best = Some((j, b, gain));
                }
            }
        }
        best
    }

    #[test]
    fn histogram_split_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let n = rng.random_range(2..=256);
            let d = rng.random_range(1..=2);
            let max_bins = rng.random_range(2..=32);
            let x: Vec<f32> = (0..n * d).map(|_| (rng.random_range(0..40) as f32) / 7.0).collect();
            let grad: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hess: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.25)).collect();
            let lambda = rng.random_range(0.0..2.0);
            let index = bin_features(Rows::new(&x, d).unwrap(), max_bins, 1 << 20, 0).unwrap();
            let rows: Vec<u32> = (0..n as u32).collect();
            let hist = Histogram::build(&rows, &grad, &hess, &index);
            let total = total_of(&rows, &grad, &hess);
            let got = find_best_split(&hist, total, &index, lambda);
            let want = brute_force(&x, d, &grad, &hess, index.cuts(), lambda);
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => {
                    assert_eq!((g.feature, g.bin), (w.0, w.1));
                    assert!((g.gain - w.2).abs() < 1e-9);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn identical_labels_give_no_split() {
        let x: Vec<f32> = (0..50).map(|i| i as f32).collect();
        let index = bin_features(Rows::new(&x, 1).unwrap(), 16, 1 << 20, 0).unwrap();
        let grad = vec![0.0; 50];
        let hess = vec![0.25; 50];
        let rows: Vec<u32> = (0..50).collect();
        let hist = Histogram::build(&rows, &grad, &hess, &index);
        assert!(find_best_split(&hist, total_of(&rows, &grad, &hess), &index, 1.0).is_none());
    }

    #[test]
    fn perfect_boundary_is_selected() {
        let x: Vec<f32> = (0..40).map(|i| i as f32).collect();
        let grad: Vec<f64> = (0..40).map(|i| if i < 25 { 0.5 } else { -0.5 }).collect();
        let hess = vec![0.25; 40];
        let index = bin_features(Rows::new(&x, 1).unwrap(), 256, 1 << 20, 0).unwrap();
        let tree = grow_tree_leafwise((0..40).collect(), &grad, &hess, &index, 2, 1.0);
        match &tree.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 24.5),
            n => panic!("{n:?}"),
        }
        assert_eq!(tree.n_leaves(), 2);
    }

    #[test]
    fn leaf_budget_respected_and_binned_walk_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let x: Vec<f32> = (0..n * 3).map(|_| rng.random()).collect();
        let grad: Vec<f64> = (0..n).map(|i| (x[i * 3] * 10.0).sin() as f64 * 0.5 - x[i * 3 + 1] as f64 * 0.3).collect();
        let hess = vec![0.2; n];
        let index = bin_features(Rows::new(&x, 3).unwrap(), 64, 1 << 20, 0).unwrap();
        for max_leaves in [2, 5, 16, 31] {
            let tree = grow_tree_leafwise((0..n as u32).collect(), &grad, &hess, &index, max_leaves, 0.5);
            assert!(tree.n_leaves() <= max_leaves);
            assert_eq!(tree.n_leaves(), max_leaves);
            for i in 0..n {
                assert_eq!(tree.predict(&x[i * 3..i * 3 + 3]), tree.predict_binned(&index, i));
            }
            for node in &tree.nodes {
                if let Node::Split { gain, .. } = node {
                    assert!(*gain > 0.0);
                }
            }
        }
    }
}
