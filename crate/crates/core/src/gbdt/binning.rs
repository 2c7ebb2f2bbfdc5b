use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifiers::{ClassifierError, Result};
use crate::features::Rows;

/// Quantized features: per-feature cut points and per-row bin ids.
///
/// Bin `b` of feature `j` holds values in `(cuts[j][b-1], cuts[j][b]]`, so a value goes
/// left of split `(j, b)` exactly when `value <= cuts[j][b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinIndex {
    n_rows: usize,
    cuts: Vec<Vec<f64>>,
    /// Column-major: feature `j` occupies `bins[j * n_rows..(j + 1) * n_rows]`.
    bins: Vec<u8>,
}

impl BinIndex {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }

    pub fn cuts(&self) -> &[Vec<f64>] {
        &self.cuts
    }

    pub fn column(&self, feature: usize) -> &[u8] {
        &self.bins[feature * self.n_rows..(feature + 1) * self.n_rows]
    }

    pub fn bin(&self, row: usize, feature: usize) -> u8 {
        self.bins[feature * self.n_rows + row]
    }

    /// Bins `x` with previously computed cut points.
    pub fn with_cuts(x: Rows<'_>, cuts: Vec<Vec<f64>>) -> Result<BinIndex> {
        if x.n_cols() != cuts.len() {
            return Err(ClassifierError::DimensionMismatch {
                expected: cuts.len(),
                got: x.n_cols(),
            });
        }
        let n = x.n_rows();
        let columns: Vec<Vec<u8>> = cuts
            .par_iter()
            .enumerate()
            .map(|(j, c)| (0..n).map(|i| bin_value(c, x.row(i)[j] as f64)).collect())
            .collect();
        Ok(BinIndex {
            n_rows: n,
            cuts,
            bins: columns.concat(),
        })
    }
}

pub fn bin_value(cuts: &[f64], v: f64) -> u8 {
    cuts.partition_point(|c| *c < v) as u8
}

/// Cut points for one feature from sorted sample values: midpoints between distinct
/// values when there are few, otherwise equal-frequency quantiles.
pub fn feature_cuts(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    // Cut k sits halfway between the value at rank k * n / max_bins and the next
    // larger distinct value.
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..max_bins)
        .filter_map(|k| {
            let v = sorted[k * n / max_bins - 1];
            let next = distinct.partition_point(|d| *d <= v);
            distinct.get(next).map(|u| 0.5 * (v + u))
        })
        .collect();
    cuts.dedup();
    cuts
}

/// Quantizes every feature into at most `max_bins` bins. Cut points come from at
/// most `sample_rows` rows drawn with `seed`.
pub fn bin_features(x: Rows<'_>, max_bins: usize, sample_rows: usize, seed: u64) -> Result<BinIndex> {
    if !(2..=256).contains(&max_bins) {
        return Err(ClassifierError::InvalidHyper(format!(
            "max_bins must lie in [2, 256], got {max_bins}"
        )));
    }
    let n = x.n_rows();
    let sample: Vec<usize> = if n > sample_rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, sample_rows).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let cuts: Vec<Vec<f64>> = (0..x.n_cols())
        .into_par_iter()
        .map(|j| {
            let mut v: Vec<f64> = sample.iter().map(|&i| x.row(i)[j] as f64).collect();
            v.sort_by(f64::total_cmp);
            feature_cuts(&v, max_bins)
        })
        .collect();
    BinIndex::with_cuts(x, cuts)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn two_values_give_two_bins_split_between() {
        let x = [0.2f32, 0.8, 0.2, 0.8, 0.8];
        let b = bin_features(Rows::new(&x, 1).unwrap(), 256, 1 << 20, 0).unwrap();
        assert_eq!(b.n_bins(0), 2);
        assert!((b.cuts()[0][0] - 0.5).abs() < 1e-7);
        assert_eq!(b.column(0), &[0, 1, 0, 1, 1]);
    }

    #[test]
    fn constant_feature_has_one_bin() {
        let x = [3.0f32; 10];
        let b = bin_features(Rows::new(&x, 1).unwrap(), 256, 1 << 20, 0).unwrap();
        assert_eq!(b.n_bins(0), 1);
        assert!(b.column(0).iter().all(|v| *v == 0));
    }

    #[test]
    fn uniform_feature_has_equal_frequency_bins() {
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
        let b = bin_features(Rows::new(&x, 1).unwrap(), 256, 1 << 20, 0).unwrap();
        assert_eq!(b.n_bins(0), 256);
        let mut counts = [0usize; 256];
        for v in b.column(0) {
            counts[*v as usize] += 1;
        }
        let expect = n as f64 / 256.0;
        let slack = 2.0 * (n as f64).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() <= slack, "{c}");
        }
    }

    #[test]
    fn cuts_are_strictly_increasing_and_bins_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Heavy ties plus a continuous tail.
        let x: Vec<f32> = (0..5000)
            .map(|i| if i % 3 == 0 { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        for max_bins in [2, 7, 32, 256] {
            let b = bin_features(Rows::new(&x, 1).unwrap(), max_bins, 1000, 9).unwrap();
            let cuts = &b.cuts()[0];
            assert!(cuts.windows(2).all(|w| w[0] < w[1]));
            assert!(b.n_bins(0) <= max_bins);
            for (i, v) in x.iter().enumerate() {
                let bin = b.bin(i, 0) as usize;
                let v = *v as f64;
                assert!(bin == 0 || cuts[bin - 1] < v);
                assert!(bin == cuts.len() || v <= cuts[bin]);
            }
        }
    }

    #[test]
    fn invalid_bin_counts_rejected() {
        let x = [1.0f32];
        assert!(bin_features(Rows::new(&x, 1).unwrap(), 1, 10, 0).is_err());
        assert!(bin_features(Rows::new(&x, 1).unwrap(), 257, 10, 0).is_err());
    }
}
