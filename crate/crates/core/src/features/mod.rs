//! Water indexes, HSV decompositions, speckle filtering and feature-space assembly.

mod hsv;
mod index;
mod matrix;
mod space;
mod speckle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hsv::{hsv_to_rgb, hsv_transform, rgb_to_hsv};
pub use index::{awei, awei_sh, compute_index, mndwi, ndwi, IndexKind};
pub use matrix::{build_feature_matrix, despeckle_tile, featurize_tile, FeatureMatrix, Rows, TileFeatures, TileRef};
pub use space::{Block, BlockKind, FeatureSpaceSpec, CANONICAL_FEATURE_SPACES};
pub use speckle::{lee_sigma_filter, LeeSigmaParams, SigmaRange};

use crate::raster::{BandGrid, BandId, Modality, RasterError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("tile `{tile_id}`: band {band} is required but not present")]
    MissingBand { tile_id: String, band: BandId },
    #[error("HSV input {value} lies outside [0, 1]")]
    OutOfUnitRange { value: f64 },
    #[error("input grids differ in shape")]
    ShapeMismatch,
    #[error("feature values must be finite")]
    NonFinite,
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown feature block `{0}`")]
    UnknownBlock(String),
    #[error("SAR appears more than once in the feature space")]
    DuplicateSar,
    #[error("feature block `{0}` appears more than once")]
    DuplicateBlock(String),
    #[error("empty feature space name")]
    EmptyFeatureSpace,
    #[error(transparent)]
    Raster(RasterError),
}

impl From<RasterError> for FeatureError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::MissingBand { tile_id, band } => FeatureError::MissingBand { tile_id, band },
            other => FeatureError::Raster(other),
        }
    }
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

/// Scaling of raw values into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    /// Optical digital numbers per unit reflectance.
    pub optical_scale: f32,
    pub sar_lo_db: f32,
    pub sar_hi_db: f32,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            optical_scale: 10_000.0,
            sar_lo_db: -30.0,
            sar_hi_db: 0.0,
        }
    }
}

/// Maps a band into `[0, 1]`, clamping outliers. Non-finite values are kept.
pub fn normalize_band(band: &BandGrid, modality: Modality, cfg: &NormalizationConfig) -> BandGrid {
    match modality {
        Modality::Optical => {
            let scale = cfg.optical_scale;
            band.map(|v| (v / scale).clamp(0.0, 1.0))
        }
        Modality::Sar => {
            let (lo, hi) = (cfg.sar_lo_db, cfg.sar_hi_db);
            band.map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        }
    }
}

/// Options shared by every feature computation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    pub normalization: NormalizationConfig,
    /// Lee sigma filtering of the SAR channels; off when `None`.
    pub speckle: Option<LeeSigmaParams>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;

    #[test]
    fn normalization_endpoints_and_clamps() {
        let cfg = NormalizationConfig::default();
        let g = Grid::new(3, 1, vec![10_000.0, 25_000.0, -5.0]).unwrap();
        assert_eq!(normalize_band(&g, Modality::Optical, &cfg).data(), &[1.0, 1.0, 0.0]);
        let s = Grid::new(3, 1, vec![-30.0, 0.0, -15.0]).unwrap();
        assert_eq!(normalize_band(&s, Modality::Sar, &cfg).data(), &[0.0, 1.0, 0.5]);
    }
}
