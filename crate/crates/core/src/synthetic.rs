//! Generated two-class datasets in the canonical on-disk format.
//!
//! Every pixel draws its band values from the Gaussian of its class:
//! `x_b = mean_b + shared_sd * z + noise_sd_b * e_b` with one `z` shared by all bands
//! of the pixel and independent `e_b`. Water occupies a disc in each tile.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::raster::{
    write_bands, write_labels, BandGrid, BandId, Grid, Label, LabelGrid, ManifestEntry, RasterError, SplitManifest,
    SplitName, Tile,
};

/// Class-conditional distribution of the band values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    /// `(band, mean, independent noise sd)`.
    pub bands: Vec<(BandId, f64, f64)>,
    pub shared_sd: f64,
}

impl ClassDistribution {
    fn covariance(&self, idx: &[usize]) -> DMatrix<f64> {
        let n = idx.len();
        DMatrix::from_fn(n, n, |i, j| {
            let noise = if i == j { self.bands[idx[i]].2.powi(2) } else { 0.0 };
            noise + self.shared_sd.powi(2)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Tiles split 60:20:20 into train, valid and test.
    pub n_tiles: usize,
    /// Extra held-out tiles, all in region `Bolivia`.
    pub n_bolivia_tiles: usize,
    pub regions: Vec<String>,
    pub dry: ClassDistribution,
    pub water: ClassDistribution,
    /// Range of the water disc radius relative to the tile width.
    pub water_radius: (f64, f64),
    /// Every `k`-th tile gets its first rows set to NoData; 0 disables.
    pub nodata_every: usize,
    pub nodata_rows: usize,
    pub seed: u64,
}

const OPTICAL_DRY: [f64; 13] = [
    1300.0, 1100.0, 1000.0, 1000.0, 1300.0, 2000.0, 2300.0, 2400.0, 2500.0, 800.0, 20.0, 2200.0, 1500.0,
];
const OPTICAL_WATER: [f64; 13] = [
    1200.0, 1000.0, 900.0, 700.0, 650.0, 600.0, 550.0, 500.0, 450.0, 300.0, 10.0, 250.0, 180.0,
];

impl SyntheticSpec {
    /// Independent Gaussian bands, identical covariance in both classes. SAR alone
    /// separates the classes almost perfectly; optical bands overlap more.
    pub fn gaussian_mixture(seed: u64) -> Self {
        let class = |sar: [f64; 2], optical: &[f64; 13]| ClassDistribution {
            bands: BandId::SAR
                .iter()
                .zip(sar)
                .map(|(b, m)| (*b, m, 2.0))
                .chain(BandId::OPTICAL.iter().zip(optical).map(|(b, m)| (*b, *m, 400.0)))
                .collect(),
            shared_sd: 0.0,
        };
        SyntheticSpec {
            width: 64,
            height: 64,
            n_tiles: 20,
            n_bolivia_tiles: 2,
            regions: ["Amber", "Birch", "Cedar", "Delta"].map(String::from).to_vec(),
            dry: class([-9.0, -16.0], &OPTICAL_DRY),
            water: class([-17.0, -24.0], &OPTICAL_WATER),
            water_radius: (0.15, 0.45),
            nodata_every: 5,
            nodata_rows: 3,
            seed,
        }
    }

    /// Four strongly correlated optical bands. The minority water class is broad and
    /// straddles the narrow dry class, so a linear rule can only catch one tail.
    pub fn correlated(seed: u64) -> Self {
        let bands = [BandId::B2, BandId::B3, BandId::B4, BandId::B8];
        let class = |mean: f64, shared_sd: f64| ClassDistribution {
            bands: bands.iter().map(|b| (*b, mean, 60.0)).collect(),
            shared_sd,
        };
        SyntheticSpec {
            dry: class(1500.0, 150.0),
            water: class(1300.0, 600.0),
            water_radius: (0.1, 0.3),
            nodata_every: 0,
            ..SyntheticSpec::gaussian_mixture(seed)
        }
    }

    pub fn band_ids(&self) -> Vec<BandId> {
        self.dry.bands.iter().map(|b| b.0).collect()
    }

    /// Total tile count including the Bolivia tiles.
    pub fn tile_count(&self) -> usize {
        self.n_tiles + self.n_bolivia_tiles
    }

    pub fn tile_id(&self, index: usize) -> String {
        format!("synth_{index:03}")
    }

    pub fn region(&self, index: usize) -> String {
        if index >= self.n_tiles {
            "Bolivia".to_string()
        } else {
            self.regions[index % self.regions.len()].clone()
        }
    }

    /// Split of the tile with the given index.
    pub fn split_of(&self, index: usize) -> SplitName {
        let n_train = self.n_tiles * 3 / 5;
        let n_valid = self.n_tiles / 5;
        match index {
            i if i >= self.n_tiles => SplitName::BoliviaTest,
            i if i < n_train => SplitName::Train,
            i if i < n_train + n_valid => SplitName::Valid,
            _ => SplitName::Test,
        }
    }

    pub fn labels(&self, index: usize) -> LabelGrid {
        let mut rng = self.rng(index, 0);
        let (w, h) = (self.width as f64, self.height as f64);
        let cx = rng.random_range(0.2..0.8) * w;
        let cy = rng.random_range(0.2..0.8) * h;
        let r = rng.random_range(self.water_radius.0..self.water_radius.1) * w;
        let nodata = self.nodata_every > 0 && index.is_multiple_of(self.nodata_every);
        Grid::from_fn(self.width, self.height, |row, col| {
            if nodata && row < self.nodata_rows {
                Label::NoData
            } else {
                let (dx, dy) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    Label::Water
                } else {
                    Label::Dry
                }
            }
        })
    }

    /// Generates one tile; identical for identical spec and index.
    pub fn tile(&self, index: usize) -> (Tile, LabelGrid) {
        let labels = self.labels(index);
        let mut rng = self.rng(index, 1);
        let n = self.width * self.height;
        let n_bands = self.dry.bands.len();
        let mut planes = vec![Vec::with_capacity(n); n_bands];
        for label in labels.data() {
            let class = if *label == Label::Water { &self.water } else { &self.dry };
            let z: f64 = rng.sample(StandardNormal);
            for (plane, (band, mean, sd)) in planes.iter_mut().zip(&class.bands) {
                let e: f64 = rng.sample(StandardNormal);
                let v = mean + class.shared_sd * z + sd * e;
                // Optical values are non-negative digital numbers.
                let v = if band.modality() == crate::raster::Modality::Optical {
                    v.max(0.0)
                } else {
                    v
                };
                plane.push(v as f32);
            }
        }
        let bands: BTreeMap<BandId, BandGrid> = self
            .band_ids()
            .into_iter()
            .zip(planes)
            .map(|(b, p)| (b, Grid::new(self.width, self.height, p).expect("plane size")))
            .collect();
        let tile = Tile::new(self.tile_id(index), self.region(index), bands, &labels).expect("consistent dims");
        (tile, labels)
    }

    pub fn tiles(&self, split: SplitName) -> Vec<(Tile, LabelGrid)> {
        (0..self.tile_count())
            .filter(|i| self.split_of(*i) == split)
            .map(|i| self.tile(i))
            .collect()
    }

    /// Fraction of labelled pixels that are water in `split`.
    pub fn water_fraction(&self, split: SplitName) -> f64 {
        let (mut water, mut all) = (0usize, 0usize);
        for i in (0..self.tile_count()).filter(|i| self.split_of(*i) == split) {
            for l in self.labels(i).data() {
                water += (*l == Label::Water) as usize;
                all += (*l != Label::NoData) as usize;
            }
        }
        water as f64 / all as f64
    }

    /// Expected total IoU of the Bayes-optimal pixel classifier on raw values of
    /// `bands`, for a water prior `prior`. Only defined when both classes share one
    /// covariance; returns `None` otherwise.
    ///
    /// With a common covariance the optimal rule is linear and its projection is
    /// Gaussian in each class: `N(+-d^2/2, d^2)` for Mahalanobis distance `d`.
    /// Value clamping and the non-negativity of optical values are ignored.
    pub fn bayes_optimal_iou(&self, bands: &[BandId], prior: f64) -> Option<f64> {
        if self.dry.shared_sd != self.water.shared_sd {
            return None;
        }
        let idx: Vec<usize> = bands
            .iter()
            .map(|b| self.dry.bands.iter().position(|x| x.0 == *b))
            .collect::<Option<_>>()?;
        if idx.iter().any(|i| self.dry.bands[*i].2 != self.water.bands[*i].2) {
            return None;
        }
        let cov = self.dry.covariance(&idx);
        let delta = DVector::from_iterator(
            idx.len(),
            idx.iter().map(|i| self.water.bands[*i].1 - self.dry.bands[*i].1),
        );
        let solved = cov.cholesky()?.solve(&delta);
        let d = delta.dot(&solved).sqrt();
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let shift = (prior / (1.0 - prior)).ln();
        let tpr = std.cdf((d * d / 2.0 + shift) / d);
        let fpr = std.cdf((-d * d / 2.0 + shift) / d);
        let tp = prior * tpr;
        let fn_ = prior * (1.0 - tpr);
        let fp = (1.0 - prior) * fpr;
        Some(tp / (tp + fp + fn_))
    }

    fn rng(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 * 2 + stream);
        rng
    }

    /// Writes every tile plus one manifest per split below `root`.
    pub fn write(&self, root: &Path) -> Result<DatasetPaths, RasterError> {
        let mut entries: BTreeMap<SplitName, Vec<ManifestEntry>> = BTreeMap::new();
        for i in 0..self.tile_count() {
            let (tile, labels) = self.tile(i);
            let id = tile.tile_id().to_string();
            let region = tile.region().to_string();
            let bands_rel = PathBuf::from("tiles").join(format!("{id}_bands.f32"));
            let label_rel = PathBuf::from("tiles").join(format!("{id}_labels.i8"));
            let grids: Vec<(BandId, &BandGrid)> = tile.bands().collect();
            write_bands(&root.join(&bands_rel), &id, &region, &grids)?;
            write_labels(&root.join(&label_rel), &id, &region, &labels)?;
            entries.entry(self.split_of(i)).or_default().push(ManifestEntry {
                tile_id: id,
                region,
                rasters: vec![bands_rel],
                label: label_rel,
            });
        }
        let mut paths = DatasetPaths::default();
        for (split, list) in entries {
            let path = root.join(format!("{split}.json"));
            SplitManifest::new(split, list)?.save(&path)?;
            paths.set(split, path);
        }
        Ok(paths)
    }
}

/// Manifest locations of a written dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub bolivia_test: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn get(&self, split: SplitName) -> Option<&PathBuf> {
        match split {
            SplitName::Train => self.train.as_ref(),
            SplitName::Valid => self.valid.as_ref(),
            SplitName::Test => self.test.as_ref(),
            SplitName::BoliviaTest => self.bolivia_test.as_ref(),
        }
    }

    pub fn set(&mut self, split: SplitName, path: PathBuf) {
        let slot = match split {
            SplitName::Train => &mut self.train,
            SplitName::Valid => &mut self.valid,
            SplitName::Test => &mut self.test,
            SplitName::BoliviaTest => &mut self.bolivia_test,
        };
        *slot = Some(path);
    }
}
