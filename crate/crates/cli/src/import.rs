//! Conversion of GeoTIFF tiles into the canonical band and label files.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use floodpix::raster::{write_bands, write_labels, BandGrid, Grid, ManifestEntry};
use floodpix::{BandId, Label, LabelGrid, SplitManifest, SplitName};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::ColorType;

/// A decoded raster, one `Vec` per band in file order.
pub struct Decoded {
    pub width: usize,
    pub height: usize,
    pub bands: Vec<Vec<f32>>,
}

fn samples_per_pixel(colour: ColorType) -> usize {
    match colour {
        ColorType::Gray(_) | ColorType::Palette(_) => 1,
        ColorType::GrayA(_) => 2,
        ColorType::RGB(_) | ColorType::YCbCr(_) | ColorType::Lab(_) => 3,
        ColorType::RGBA(_) | ColorType::CMYK(_) => 4,
        ColorType::CMYKA(_) => 5,
        ColorType::Multiband { num_samples, .. } => num_samples as usize,
        _ => 1,
    }
}

fn to_f32(buf: DecodingResult) -> Result<Vec<f32>> {
    Ok(match buf {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F16(v) => v.into_iter().map(f32::from).collect(),
    })
}

/// Reads the first image of a (Geo)TIFF, de-interleaving chunky layouts.
/// Georeferencing tags are not interpreted.
pub fn read_tiff(path: &Path) -> Result<Decoded> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .with_context(|| format!("decoding {}", path.display()))?
        .with_limits(Limits::unlimited());
    let (w, h) = dec.dimensions()?;
    let (width, height) = (w as usize, h as usize);
    let n_bands = samples_per_pixel(dec.colortype()?);
    let mut buf = DecodingResult::U8(Vec::new());
    let layout = dec
        .read_image_to_buffer(&mut buf)
        .with_context(|| format!("reading pixels of {}", path.display()))?;
    let values = to_f32(buf)?;
    let n = width * height;
    ensure!(
        values.len() >= n * n_bands,
        "{}: expected {} samples, decoded {}",
        path.display(),
        n * n_bands,
        values.len()
    );
    let bands = if layout.planes > 1 {
        values.chunks_exact(n).take(n_bands).map(<[f32]>::to_vec).collect()
    } else {
        (0..n_bands)
            .map(|b| values.iter().skip(b).step_by(n_bands).take(n).copied().collect())
            .collect()
    };
    Ok(Decoded { width, height, bands })
}

/// Band order of the hand-labelled Sentinel-1 and Sentinel-2 tiles.
pub fn s1_bands() -> Vec<BandId> {
    BandId::SAR.to_vec()
}

pub fn s2_bands() -> Vec<BandId> {
    BandId::OPTICAL.to_vec()
}

/// Maps label values: 1 water, 0 dry, negative or non-finite NoData.
pub fn label_from_value(v: f32) -> Result<Label> {
    if !v.is_finite() || v < 0.0 {
        Ok(Label::NoData)
    } else if v == 0.0 {
        Ok(Label::Dry)
    } else if v == 1.0 {
        Ok(Label::Water)
    } else {
        bail!("label value {v} is not one of -1, 0, 1")
    }
}

/// One tile to import.
pub struct TileSource {
    pub tile_id: String,
    pub region: String,
    /// Each raster with the band ids of its samples, in file order.
    pub rasters: Vec<(PathBuf, Vec<BandId>)>,
    pub label: PathBuf,
}

/// Writes the canonical files of `src` under `<data_root>/tiles` and returns the
/// manifest entry describing them.
pub fn import_tile(src: &TileSource, data_root: &Path) -> Result<ManifestEntry> {
    let labels_raw = read_tiff(&src.label)?;
    ensure!(
        labels_raw.bands.len() == 1,
        "{}: label raster must have one band",
        src.label.display()
    );
    let labels: LabelGrid = Grid::new(
        labels_raw.width,
        labels_raw.height,
        labels_raw.bands[0]
            .iter()
            .map(|v| label_from_value(*v))
            .collect::<Result<_>>()
            .with_context(|| src.label.display().to_string())?,
    )?;
    let tiles_dir = PathBuf::from("tiles");
    let mut rasters = Vec::new();
    for (i, (path, ids)) in src.rasters.iter().enumerate() {
        let raw = read_tiff(path)?;
        ensure!(
            (raw.width, raw.height) == labels.dims(),
            "{}: {}x{} raster does not match {}x{} labels",
            path.display(),
            raw.width,
            raw.height,
            labels.width(),
            labels.height()
        );
        ensure!(
            raw.bands.len() == ids.len(),
            "{}: has {} bands but {} band ids were given",
            path.display(),
            raw.bands.len(),
            ids.len()
        );
        let grids: Vec<(BandId, BandGrid)> = ids
            .iter()
            .zip(raw.bands)
            .map(|(id, data)| Ok((*id, Grid::new(raw.width, raw.height, data)?)))
            .collect::<Result<_>>()?;
        let refs: Vec<(BandId, &BandGrid)> = grids.iter().map(|(id, g)| (*id, g)).collect();
        let rel = tiles_dir.join(format!("{}_r{i}.f32", src.tile_id));
        write_bands(&data_root.join(&rel), &src.tile_id, &src.region, &refs)?;
        rasters.push(rel);
    }
    let label_rel = tiles_dir.join(format!("{}_labels.i8", src.tile_id));
    write_labels(&data_root.join(&label_rel), &src.tile_id, &src.region, &labels)?;
    Ok(ManifestEntry {
        tile_id: src.tile_id.clone(),
        region: src.region.clone(),
        rasters,
        label: label_rel,
    })
}

/// Inserts or replaces entries of a split manifest, keeping the existing order.
pub fn upsert_manifest(path: &Path, split: SplitName, entries: Vec<ManifestEntry>) -> Result<SplitManifest> {
    let mut all = if path.is_file() {
        SplitManifest::load(split, path)?.entries
    } else {
        Vec::new()
    };
    for e in entries {
        match all.iter_mut().find(|old| old.tile_id == e.tile_id) {
            Some(old) => *old = e,
            None => all.push(e),
        }
    }
    let manifest = SplitManifest::new(split, all)?;
    manifest.save(path)?;
    Ok(manifest)
}

/// Parses a split listing: one `<id>_S1Hand.tif,<id>_LabelHand.tif` pair per line.
/// The region is the part of the id before the first underscore.
pub fn parse_catalog(
    text: &str,
    s1_dir: &Path,
    s2_dir: Option<&Path>,
    label_dir: &Path,
) -> Result<Vec<TileSource>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(s1), Some(label)) = (cols.next(), cols.next()) else {
            bail!("line {}: expected `<s1 file>,<label file>`", lineno + 1);
        };
        let Some(tile_id) = s1.strip_suffix("_S1Hand.tif") else {
            bail!("line {}: `{s1}` does not end in _S1Hand.tif", lineno + 1);
        };
        let region = tile_id.split('_').next().unwrap_or(tile_id).to_string();
        let mut rasters = vec![(s1_dir.join(s1), s1_bands())];
        if let Some(dir) = s2_dir {
            rasters.push((dir.join(format!("{tile_id}_S2Hand.tif")), s2_bands()));
        }
        out.push(TileSource {
            tile_id: tile_id.to_string(),
            region,
            rasters,
            label: label_dir.join(label),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tiff::encoder::{colortype, TiffEncoder};

    fn write_rgb16(path: &Path, w: u32, h: u32, data: &[u16]) {
        let mut enc = TiffEncoder::new(File::create(path).unwrap()).unwrap();
        enc.write_image::<colortype::RGB16>(w, h, data).unwrap();
    }

    #[test]
    fn chunky_rgb_is_deinterleaved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.tif");
        // Two pixels: (1, 2, 3) and (4, 5, 6).
        write_rgb16(&path, 2, 1, &[1, 2, 3, 4, 5, 6]);
        let d = read_tiff(&path).unwrap();
        assert_eq!((d.width, d.height), (2, 1));
        assert_eq!(d.bands, vec![vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]);
    }

    #[test]
    fn label_values_map_to_classes() {
        assert_eq!(label_from_value(-1.0).unwrap(), Label::NoData);
        assert_eq!(label_from_value(f32::NAN).unwrap(), Label::NoData);
        assert_eq!(label_from_value(0.0).unwrap(), Label::Dry);
        assert_eq!(label_from_value(1.0).unwrap(), Label::Water);
        assert!(label_from_value(2.0).is_err());
    }

    #[test]
    fn catalog_lines_name_tiles_and_regions() {
        let text = "Bolivia_103757_S1Hand.tif,Bolivia_103757_LabelHand.tif\n\nSri-Lanka_1_S1Hand.tif,Sri-Lanka_1_LabelHand.tif\n";
        let tiles = parse_catalog(text, Path::new("s1"), Some(Path::new("s2")), Path::new("lab")).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[0].tile_id, "Bolivia_103757");
        assert_eq!(tiles[0].region, "Bolivia");
        assert_eq!(tiles[1].region, "Sri-Lanka");
        assert_eq!(tiles[1].rasters[1].0, Path::new("s2/Sri-Lanka_1_S2Hand.tif"));
        assert_eq!(tiles[1].label, Path::new("lab/Sri-Lanka_1_LabelHand.tif"));
        assert!(parse_catalog("x.tif,y.tif", Path::new("a"), None, Path::new("b")).is_err());
    }
}
