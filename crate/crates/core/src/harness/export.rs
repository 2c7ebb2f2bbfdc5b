use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::select::{summarize, ValidationRow};
use super::{write_text, HarnessError, Result};
use crate::classifiers::predict;
use crate::features::{featurize_tile, normalize_band, Rows};
use crate::metrics::ConfusionCounts;
use crate::model::ModelDocument;
use crate::raster::{write_labels, BandId, Class, Grid, Label, LabelGrid, Modality, Tile};

pub const COLOUR_TP: [u8; 3] = [0, 0, 255];
pub const COLOUR_FN: [u8; 3] = [255, 0, 255];
pub const COLOUR_FP: [u8; 3] = [0, 255, 0];
const COLOUR_NODATA: [u8; 3] = [128, 128, 128];
/// Reflectance mapped to full brightness in the backdrop.
const BACKDROP_WHITE: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backdrop {
    Rgb,
    Grayscale,
}

/// What [`export_prediction_raster`] drew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionExport {
    /// Confusion counts over labelled pixels that received a prediction.
    pub counts: ConfusionCounts,
    pub predicted_pixels: usize,
    pub backdrop: Backdrop,
}

/// Backdrop intensities in `[0, 1]` per pixel and channel.
fn backdrop(tile: &Tile, doc: &ModelDocument) -> (Backdrop, Vec<[f32; 3]>) {
    let norm = &doc.features.normalization;
    let n = tile.n_pixels();
    let unit = |v: f32| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    if let (Some(r), Some(g), Some(b)) = (tile.band(BandId::B4), tile.band(BandId::B3), tile.band(BandId::B2)) {
        let [r, g, b] = [r, g, b].map(|band| normalize_band(band, Modality::Optical, norm));
        let px = (0..n)
            .map(|i| [r.data()[i], g.data()[i], b.data()[i]].map(|v| unit(v / BACKDROP_WHITE)))
            .collect();
        return (Backdrop::Rgb, px);
    }
    let gray: Vec<f32> = match tile.band(BandId::VV) {
        Some(vv) => normalize_band(vv, Modality::Sar, norm).data().iter().map(|v| unit(*v)).collect(),
        None => vec![0.5; n],
    };
    (Backdrop::Grayscale, gray.into_iter().map(|v| [v; 3]).collect())
}

/// Predicts every pixel of `tile` with finite features and writes a colour-coded PNG
/// plus the raw prediction grid (`-1` where no prediction was possible).
///
/// Blue marks true positives, magenta false negatives and green false positives.
/// True negatives and unpredicted pixels show the dimmed backdrop; NoData is gray.
pub fn export_prediction_raster(
    doc: &ModelDocument,
    tile: &Tile,
    labels: &LabelGrid,
    png_path: &Path,
    grid_path: &Path,
) -> Result<PredictionExport> {
    let features = featurize_tile(&doc.feature_space, tile, &doc.features)?;
    let n = tile.n_pixels();
    let usable: Vec<usize> = (0..n)
        .filter(|&i| features.pixel(i).iter().all(|v| v.is_finite()))
        .collect();
    let mut values = Vec::with_capacity(usable.len() * features.n_cols());
    for &i in &usable {
        values.extend_from_slice(features.pixel(i));
    }
    let mut pred: Vec<Option<Class>> = vec![None; n];
    if !usable.is_empty() {
        let classes = predict(&doc.model, Rows::new(&values, features.n_cols())?)?;
        for (i, c) in usable.iter().zip(classes) {
            pred[*i] = Some(c);
        }
    }
    let (kind, back) = backdrop(tile, doc);
    let mut counts = ConfusionCounts::default();
    let mut rgb = Vec::with_capacity(n * 3);
    for i in 0..n {
        let colour = match (labels.data()[i].class(), pred[i]) {
            (None, _) if labels.data()[i] == Label::NoData => COLOUR_NODATA,
            (Some(truth), Some(p)) => {
                counts.record(p, truth);
                match (p.is_water(), truth.is_water()) {
                    (true, true) => COLOUR_TP,
                    (false, true) => COLOUR_FN,
                    (true, false) => COLOUR_FP,
                    (false, false) => back[i].map(|v| (32.0 + v * 192.0).round() as u8),
                }
            }
            _ => back[i].map(|v| (32.0 + v * 192.0).round() as u8),
        };
        rgb.extend_from_slice(&colour);
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, tile.width() as u32, tile.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| HarnessError::Png(e.to_string()))?;
        writer.write_image_data(&rgb).map_err(|e| HarnessError::Png(e.to_string()))?;
        writer.finish().map_err(|e| HarnessError::Png(e.to_string()))?;
    }
    write_text_bytes(png_path, &bytes)?;
    let grid: LabelGrid = Grid::new(
        tile.width(),
        tile.height(),
        pred.iter().map(|p| p.map_or(Label::NoData, Label::from)).collect(),
    )?;
    write_labels(grid_path, tile.tile_id(), tile.region(), &grid)?;
    Ok(PredictionExport {
        counts,
        predicted_pixels: usable.len(),
        backdrop: kind,
    })
}

fn write_text_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::raster::write_file_atomic(path, bytes).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Linear-interpolation quantile of sorted data (Hyndman and Fan type 7).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary of seed-averaged validation mean IoU for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Groups configurations by `group_by` (`feature_space`, `model` or a hyperparameter
/// name) and summarizes their seed-averaged validation mean IoU. Rows are sorted by
/// maximum, highest first.
pub fn boxplot_rows(rows: &[ValidationRow], group_by: &str) -> Result<Vec<BoxplotRow>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in summarize(rows) {
        let key = match group_by {
            "feature_space" => Some(s.feature_space.clone()),
            "model" => Some(s.params.kind().to_string()),
            name => s.params.values().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v),
        };
        if let Some(k) = key {
            groups.entry(k).or_default().push(s.mean.iou);
        }
    }
    if groups.is_empty() {
        return Err(HarnessError::UnknownParameter(group_by.to_string()));
    }
    let mut out: Vec<BoxplotRow> = groups
        .into_iter()
        .map(|(group, mut v)| {
            v.sort_by(f64::total_cmp);
            BoxplotRow {
                group,
                n: v.len(),
                min: v[0],
                q1: quantile_type7(&v, 0.25),
                median: quantile_type7(&v, 0.5),
                q3: quantile_type7(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect();
    out.sort_by(|a, b| b.max.total_cmp(&a.max).then_with(|| a.group.cmp(&b.group)));
    Ok(out)
}

pub fn boxplot_csv(group_by: &str, rows: &[BoxplotRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([group_by, "n", "min", "q1", "median", "q3", "max"])
        .expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.group.clone(), r.n.to_string()];
        rec.extend([r.min, r.q1, r.median, r.q3, r.max].map(|v| format!("{v:.6}")));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Boxplot CSV of `rows` grouped by `group_by`, also written to `path` when given.
pub fn export_boxplot_data(rows: &[ValidationRow], group_by: &str, path: Option<&Path>) -> Result<String> {
    let csv = boxplot_csv(group_by, &boxplot_rows(rows, group_by)?);
    if let Some(p) = path {
        write_text(p, &csv)?;
    }
    Ok(csv)
}
