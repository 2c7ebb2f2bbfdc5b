//! Spectral water indexes.
//!
//! Inputs are reflectance-scaled (`value / optical_scale`) but not clamped. A zero
//! denominator in the normalized differences yields 0.

use serde::{Deserialize, Serialize};

use super::{NormalizationConfig, Result};
use crate::raster::{BandGrid, BandId, Tile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexKind {
    Ndwi,
    Mndwi,
    Awei,
    AweiSh,
}

impl IndexKind {
    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Ndwi => "NDWI",
            IndexKind::Mndwi => "MNDWI",
            IndexKind::Awei => "AWEI",
            IndexKind::AweiSh => "AWEISH",
        }
    }

    pub fn required_bands(self) -> &'static [BandId] {
        match self {
            IndexKind::Ndwi => &[BandId::GREEN, BandId::NIR],
            IndexKind::Mndwi => &[BandId::GREEN, BandId::SWIR1],
            IndexKind::Awei => &[BandId::GREEN, BandId::NIR, BandId::SWIR1, BandId::SWIR2],
            IndexKind::AweiSh => &[
                BandId::BLUE,
                BandId::GREEN,
                BandId::NIR,
                BandId::SWIR1,
                BandId::SWIR2,
            ],
        }
    }

    /// Evaluates the index on values ordered as in [`IndexKind::required_bands`].
    pub fn evaluate(self, v: &[f64]) -> f64 {
        match self {
            IndexKind::Ndwi => ndwi(v[0], v[1]),
            IndexKind::Mndwi => mndwi(v[0], v[1]),
            IndexKind::Awei => awei(v[0], v[1], v[2], v[3]),
            IndexKind::AweiSh => awei_sh(v[0], v[1], v[2], v[3], v[4]),
        }
    }
}

fn normalized_difference(a: f64, b: f64) -> f64 {
    let den = a + b;
    if den == 0.0 {
        0.0
    } else {
        (a - b) / den
    }
}

pub fn ndwi(green: f64, nir: f64) -> f64 {
    normalized_difference(green, nir)
}

pub fn mndwi(green: f64, swir1: f64) -> f64 {
    normalized_difference(green, swir1)
}

pub fn awei(green: f64, nir: f64, swir1: f64, swir2: f64) -> f64 {
    4.0 * (green - swir1) - 0.25 * (nir + 11.0 * swir2)
}

pub fn awei_sh(blue: f64, green: f64, nir: f64, swir1: f64, swir2: f64) -> f64 {
    blue + 2.5 * green - 1.5 * (nir + swir1) - 0.25 * swir2
}

/// Computes one index over a whole tile.
pub fn compute_index(kind: IndexKind, tile: &Tile, norm: &NormalizationConfig) -> Result<BandGrid> {
    let grids = kind
        .required_bands()
        .iter()
        .map(|b| tile.require_band(*b))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let scale = norm.optical_scale as f64;
    let mut buf = vec![0.0f64; grids.len()];
    let data = (0..tile.n_pixels())
        .map(|i| {
            for (slot, g) in buf.iter_mut().zip(&grids) {
                *slot = g.data()[i] as f64 / scale;
            }
            kind.evaluate(&buf) as f32
        })
        .collect();
    Ok(BandGrid::new(tile.width(), tile.height(), data).expect("tile shape"))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::features::FeatureError;
    use crate::raster::{Grid, Label};
    use proptest::prelude::*;

    fn tile(values: &[(BandId, f32)]) -> Tile {
        let mut bands = BTreeMap::new();
        for (b, v) in values {
            bands.insert(*b, Grid::filled(3, 2, *v));
        }
        Tile::new("t", "r", bands, &Grid::filled(3, 2, Label::Dry)).unwrap()
    }

    #[test]
    fn hand_computed_values() {
        assert!((ndwi(0.3, 0.1) - 0.5).abs() < 1e-12);
        assert!((awei(0.2, 0.1, 0.1, 0.0) - 0.375).abs() < 1e-12);
        assert!((awei_sh(0.1, 0.2, 0.1, 0.1, 0.0) - 0.3).abs() < 1e-12);
        assert_eq!(ndwi(0.0, 0.0), 0.0);
        assert_eq!(mndwi(0.0, 0.0), 0.0);
    }

    #[test]
    fn tile_level_indexes_use_reflectance_scaling() {
        let norm = NormalizationConfig::default();
        let t = tile(&[(BandId::B3, 3000.0), (BandId::B8, 1000.0)]);
        let g = compute_index(IndexKind::Ndwi, &t, &norm).unwrap();
        assert!(g.data().iter().all(|v| (*v - 0.5).abs() < 1e-6));

        let t = tile(&[(BandId::B3, 700.0), (BandId::B8, 700.0)]);
        let g = compute_index(IndexKind::Ndwi, &t, &norm).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));

        let t = tile(&[
            (BandId::B3, 2000.0),
            (BandId::B8, 1000.0),
            (BandId::B11, 1000.0),
            (BandId::B12, 0.0),
        ]);
        let g = compute_index(IndexKind::Awei, &t, &norm).unwrap();
        assert!(g.data().iter().all(|v| (*v - 0.375).abs() < 1e-6));
    }

    #[test]
    fn missing_band_is_an_error() {
        let t = tile(&[(BandId::B3, 1.0)]);
        let err = compute_index(IndexKind::Mndwi, &t, &NormalizationConfig::default()).unwrap_err();
        assert!(matches!(err, FeatureError::MissingBand { band: BandId::B11, .. }));
    }

    proptest! {
        #[test]
        fn normalized_differences_are_bounded(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            prop_assume!(a + b > 0.0);
            let n = ndwi(a, b);
            prop_assert!((-1.0..=1.0).contains(&n));
            prop_assert!((-1.0..=1.0).contains(&mndwi(a, b)));
        }
    }
}
