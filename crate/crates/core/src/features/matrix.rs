//! Per-pixel feature matrices built from tiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hsv::hsv_transform;
use super::index::compute_index;
use super::space::{BlockKind, FeatureSpaceSpec};
use super::speckle::{lee_sigma_filter, LeeSigmaParams};
use super::{normalize_band, FeatureError, FeatureOptions, Result};
use crate::raster::{BandGrid, BandId, Class, LabelGrid, Modality, Tile};

/// Identity of a tile contributing rows to a matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRef {
    pub tile_id: String,
    pub region: String,
}

/// Borrowed row-major `n x d` feature block.
#[derive(Debug, Clone, Copy)]
pub struct Rows<'a> {
    values: &'a [f32],
    n_cols: usize,
}

impl<'a> Rows<'a> {
    pub fn new(values: &'a [f32], n_cols: usize) -> Result<Self> {
        if n_cols == 0 || !values.len().is_multiple_of(n_cols) {
            return Err(FeatureError::ShapeMismatch);
        }
        Ok(Rows { values, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &'a [f32]> + 'a {
        self.values.chunks_exact(self.n_cols)
    }

    pub fn values(&self) -> &'a [f32] {
        self.values
    }
}

/// Labelled feature rows for the valid pixels of a set of tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_cols: usize,
    values: Vec<f32>,
    column_names: Vec<String>,
    labels: Vec<Class>,
    tiles: Vec<TileRef>,
    row_tile: Vec<u32>,
    row_pixel: Vec<u32>,
}

impl FeatureMatrix {
    pub fn empty(column_names: Vec<String>) -> Self {
        FeatureMatrix {
            n_cols: column_names.len(),
            values: Vec::new(),
            column_names,
            labels: Vec::new(),
            tiles: Vec::new(),
            row_tile: Vec::new(),
            row_pixel: Vec::new(),
        }
    }

    /// Wraps dense rows that belong to a single anonymous tile.
    pub fn from_rows(column_names: Vec<String>, values: Vec<f32>, labels: Vec<Class>) -> Result<Self> {
        let n_cols = column_names.len();
        if n_cols == 0 || values.len() != labels.len() * n_cols {
            return Err(FeatureError::ShapeMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        let n = labels.len();
        Ok(FeatureMatrix {
            n_cols,
            values,
            column_names,
            labels,
            tiles: vec![TileRef {
                tile_id: "rows".into(),
                region: "rows".into(),
            }],
            row_tile: vec![0; n],
            row_pixel: (0..n as u32).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows {
            values: &self.values,
            n_cols: self.n_cols,
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn tiles(&self) -> &[TileRef] {
        &self.tiles
    }

    /// Index into [`FeatureMatrix::tiles`] for each row.
    pub fn row_tiles(&self) -> &[u32] {
        &self.row_tile
    }

    /// Row-major pixel index within its tile for each row.
    pub fn row_pixels(&self) -> &[u32] {
        &self.row_pixel
    }

    pub fn provenance(&self, i: usize) -> (&TileRef, usize) {
        (&self.tiles[self.row_tile[i] as usize], self.row_pixel[i] as usize)
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let water = self.labels.iter().filter(|c| c.is_water()).count();
        (self.labels.len() - water, water)
    }

    /// Appends one tile's valid rows.
    pub fn push_tile(&mut self, tile: TileRef, features: &TileFeatures, labels: &LabelGrid) -> Result<()> {
        if features.n_cols != self.n_cols || features.n_pixels() != labels.len() {
            return Err(FeatureError::ShapeMismatch);
        }
        let tile_idx = self.tiles.len() as u32;
        self.tiles.push(tile);
        for (i, label) in labels.data().iter().enumerate() {
            let Some(class) = label.class() else { continue };
            if !features.valid[i] {
                continue;
            }
            self.values.extend_from_slice(features.pixel(i));
            self.labels.push(class);
            self.row_tile.push(tile_idx);
            self.row_pixel.push(i as u32);
        }
        Ok(())
    }

    /// Concatenates matrices with identical columns, preserving order.
    pub fn concat(parts: Vec<FeatureMatrix>) -> Result<FeatureMatrix> {
        let mut iter = parts.into_iter();
        let Some(mut out) = iter.next() else {
            return Err(FeatureError::ShapeMismatch);
        };
        for part in iter {
            if part.column_names != out.column_names {
                return Err(FeatureError::ShapeMismatch);
            }
            let offset = out.tiles.len() as u32;
            out.values.extend(part.values);
            out.labels.extend(part.labels);
            out.tiles.extend(part.tiles);
            out.row_tile.extend(part.row_tile.iter().map(|t| t + offset));
            out.row_pixel.extend(part.row_pixel);
        }
        Ok(out)
    }

    /// Copies the given rows, keeping tile references intact.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n_cols: self.n_cols,
            values,
            column_names: self.column_names.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            tiles: self.tiles.clone(),
            row_tile: rows.iter().map(|&r| self.row_tile[r]).collect(),
            row_pixel: rows.iter().map(|&r| self.row_pixel[r]).collect(),
        }
    }
}

/// Features for every pixel of one tile, plus which pixels are usable.
#[derive(Debug, Clone, PartialEq)]
pub struct TileFeatures {
    width: usize,
    height: usize,
    n_cols: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl TileFeatures {
    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// True where the tile mask is set and every feature is finite.
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn rows(&self) -> Rows<'_> {
        Rows {
            values: &self.values,
            n_cols: self.n_cols,
        }
    }
}

/// Filters in linear power and converts back to dB.
fn despeckle_db(grid: &BandGrid, params: &LeeSigmaParams) -> Result<BandGrid> {
    let linear = grid.map(|db| 10f32.powf(*db / 10.0));
    Ok(lee_sigma_filter(&linear, params)?.map(|p| 10.0 * p.log10()))
}

fn sar_band(tile: &Tile, band: BandId, opts: &FeatureOptions) -> Result<BandGrid> {
    let grid = tile.require_band(band)?;
    let db = match &opts.speckle {
        None => grid.clone(),
        Some(params) => despeckle_db(grid, params)?,
    };
    Ok(normalize_band(&db, Modality::Sar, &opts.normalization))
}

/// Applies the speckle filter of `opts` to the SAR bands of `tile` once, so that
/// featurizing the result with `speckle: None` matches featurizing the original.
pub fn despeckle_tile(tile: &Tile, opts: &FeatureOptions) -> Result<Tile> {
    let Some(params) = &opts.speckle else {
        return Ok(tile.clone());
    };
    let mut out = tile.clone();
    for band in BandId::SAR {
        if let Some(grid) = tile.band(band) {
            out = out.with_band(band, despeckle_db(grid, params)?)?;
        }
    }
    Ok(out)
}

/// Computes the columns of `spec` for every pixel of `tile`.
pub fn featurize_tile(spec: &FeatureSpaceSpec, tile: &Tile, opts: &FeatureOptions) -> Result<TileFeatures> {
    let mut columns: Vec<BandGrid> = Vec::with_capacity(spec.dimensionality());
    let norm = &opts.normalization;
    for block in spec.blocks() {
        match block.kind() {
            BlockKind::Sar => {
                for band in BandId::SAR {
                    columns.push(sar_band(tile, band, opts)?);
                }
            }
            BlockKind::RawBands(bands) => {
                for band in bands {
                    columns.push(normalize_band(tile.require_band(*band)?, band.modality(), norm));
                }
            }
            BlockKind::Hsv(triple) => {
                let [r, g, b] = triple.map(|band| {
                    tile.require_band(band)
                        .map(|grid| normalize_band(grid, Modality::Optical, norm))
                });
                columns.extend(hsv_transform(&r?, &g?, &b?)?);
            }
            BlockKind::Indexes(kinds) => {
                for kind in kinds {
                    columns.push(compute_index(*kind, tile, norm)?);
                }
            }
        }
    }
    let n_cols = columns.len();
    let n = tile.n_pixels();
    let mut values = Vec::with_capacity(n * n_cols);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let start = values.len();
        values.extend(columns.iter().map(|c| c.data()[i]));
        valid.push(tile.valid_mask()[i] && values[start..].iter().all(|v| v.is_finite()));
    }
    Ok(TileFeatures {
        width: tile.width(),
        height: tile.height(),
        n_cols,
        values,
        valid,
    })
}

/// Builds the labelled matrix of valid pixels, tiles in input order.
pub fn build_feature_matrix(
    spec: &FeatureSpaceSpec,
    tiles: &[(Tile, LabelGrid)],
    opts: &FeatureOptions,
) -> Result<FeatureMatrix> {
    let parts = tiles
        .par_iter()
        .map(|(tile, labels)| {
            let features = featurize_tile(spec, tile, opts)?;
            let mut m = FeatureMatrix::empty(spec.column_names());
            m.push_tile(
                TileRef {
                    tile_id: tile.tile_id().to_string(),
                    region: tile.region().to_string(),
                },
                &features,
                labels,
            )?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(FeatureMatrix::empty(spec.column_names()));
    }
    FeatureMatrix::concat(parts)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::features::space::CANONICAL_FEATURE_SPACES;
    use crate::features::LeeSigmaParams;
    use crate::raster::{Grid, Label};

    fn full_tile(id: &str, w: usize, h: usize, nodata_every: Option<usize>) -> (Tile, LabelGrid) {
        let mut bands = BTreeMap::new();
        for b in BandId::OPTICAL {
            let k = b.channel_index() as f32;
            bands.insert(b, Grid::from_fn(w, h, |r, c| 200.0 + 37.0 * k + (r * w + c) as f32 % 500.0));
        }
        for b in BandId::SAR {
            let k = b.channel_index() as f32;
            bands.insert(b, Grid::from_fn(w, h, |r, c| -5.0 - k - ((r + c) % 13) as f32));
        }
        let labels = Grid::from_fn(w, h, |r, c| {
            let i = r * w + c;
            match nodata_every {
                Some(k) if i.is_multiple_of(k) => Label::NoData,
                _ if (r + c) % 4 == 0 => Label::Water,
                _ => Label::Dry,
            }
        });
        (Tile::new(id, "R", bands, &labels).unwrap(), labels)
    }

    #[test]
    fn rgb_on_full_tile_has_every_pixel() {
        let t = full_tile("a", 512, 512, None);
        let spec = FeatureSpaceSpec::parse("RGB").unwrap();
        let m = build_feature_matrix(&spec, &[t], &FeatureOptions::default()).unwrap();
        assert_eq!(m.n_rows(), 262_144);
        assert_eq!(m.n_cols(), 3);
    }

    #[test]
    fn nodata_rows_dropped() {
        let t = full_tile("a", 16, 16, Some(2));
        let valid = t.0.valid_count();
        assert_eq!(valid, 128);
        let spec = FeatureSpaceSpec::parse("cNDWI").unwrap();
        let m = build_feature_matrix(&spec, &[t], &FeatureOptions::default()).unwrap();
        assert_eq!(m.n_rows(), valid);
        assert_eq!(m.column_names(), &["NDWI", "MNDWI"]);
        assert!(m.values().iter().all(|v| v.is_finite()));
        assert!((0..m.n_rows()).all(|i| m.row_pixels()[i] % 2 == 1));
    }

    #[test]
    fn every_canonical_space_matches_its_dimensionality() {
        let t = full_tile("a", 8, 8, None);
        for name in CANONICAL_FEATURE_SPACES {
            let spec = FeatureSpaceSpec::parse(name).unwrap();
            let f = featurize_tile(&spec, &t.0, &FeatureOptions::default()).unwrap();
            assert_eq!(f.n_cols(), spec.dimensionality(), "{name}");
        }
    }

    #[test]
    fn hsv_o3_uses_swir2_nir_red_slots() {
        let (tile, _) = full_tile("a", 4, 4, None);
        let spec = FeatureSpaceSpec::parse("HSV(O3)").unwrap();
        let f = featurize_tile(&spec, &tile, &FeatureOptions::default()).unwrap();
        let px = 5;
        let v = |b: BandId| (tile.band(b).unwrap().data()[px] / 10_000.0).clamp(0.0, 1.0) as f64;
        let (h, s, val) = crate::features::rgb_to_hsv(v(BandId::B12), v(BandId::B8), v(BandId::B4));
        let got = f.pixel(px);
        assert!((got[0] as f64 - h).abs() < 1e-6);
        assert!((got[1] as f64 - s).abs() < 1e-6);
        assert!((got[2] as f64 - val).abs() < 1e-6);
    }

    #[test]
    fn missing_band_propagates() {
        let labels = Grid::filled(2, 2, Label::Dry);
        let mut bands = BTreeMap::new();
        bands.insert(BandId::B3, Grid::filled(2, 2, 1.0));
        let tile = Tile::new("x", "R", bands, &labels).unwrap();
        let spec = FeatureSpaceSpec::parse("cNDWI").unwrap();
        assert!(matches!(
            build_feature_matrix(&spec, &[(tile, labels)], &FeatureOptions::default()),
            Err(FeatureError::MissingBand { .. })
        ));
    }

    #[test]
    fn tile_order_permutes_rows_only() {
        let a = full_tile("a", 8, 8, Some(3));
        let b = full_tile("b", 8, 8, Some(5));
        let spec = FeatureSpaceSpec::parse("SAR_cAWEI").unwrap();
        let opts = FeatureOptions::default();
        let ab = build_feature_matrix(&spec, &[a.clone(), b.clone()], &opts).unwrap();
        let ba = build_feature_matrix(&spec, &[b, a], &opts).unwrap();
        assert_eq!(ab.n_rows(), ba.n_rows());
        let key = |m: &FeatureMatrix, i: usize| {
            let (t, p) = m.provenance(i);
            (t.tile_id.clone(), p)
        };
        let mut left: Vec<_> = (0..ab.n_rows()).map(|i| (key(&ab, i), ab.row(i).to_vec())).collect();
        let mut right: Vec<_> = (0..ba.n_rows()).map(|i| (key(&ba, i), ba.row(i).to_vec())).collect();
        left.sort_by(|x, y| x.0.cmp(&y.0));
        right.sort_by(|x, y| x.0.cmp(&y.0));
        assert_eq!(left, right);
    }

    #[test]
    fn speckle_switch_changes_only_sar_columns() {
        let t = full_tile("a", 12, 12, None);
        let spec = FeatureSpaceSpec::parse("SAR_RGB").unwrap();
        let plain = featurize_tile(&spec, &t.0, &FeatureOptions::default()).unwrap();
        let opts = FeatureOptions {
            speckle: Some(LeeSigmaParams::default()),
            ..Default::default()
        };
        let filtered = featurize_tile(&spec, &t.0, &opts).unwrap();
        let mut sar_changed = false;
        for i in 0..plain.n_pixels() {
            let (p, f) = (plain.pixel(i), filtered.pixel(i));
            assert_eq!(&p[2..], &f[2..]);
            sar_changed |= p[..2] != f[..2];
        }
        assert!(sar_changed);
    }

    #[test]
    fn despeckled_tile_featurizes_like_inline_filtering() {
        let t = full_tile("a", 12, 12, None);
        let spec = FeatureSpaceSpec::parse("SAR_HSV(RGB)").unwrap();
        let opts = FeatureOptions {
            speckle: Some(LeeSigmaParams::default()),
            ..Default::default()
        };
        let inline = featurize_tile(&spec, &t.0, &opts).unwrap();
        let pre = despeckle_tile(&t.0, &opts).unwrap();
        let later = featurize_tile(&spec, &pre, &FeatureOptions::default()).unwrap();
        assert_eq!(inline, later);
    }
}
