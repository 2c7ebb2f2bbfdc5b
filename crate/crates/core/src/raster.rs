//! Canonical raster storage, split manifests and dataset statistics.
//!
//! A raster file is a headerless little-endian payload paired with a JSON sidecar
//! that shares its stem (`tile.s2.bin` + `tile.s2.json`):
//!
//! ```json
//! {"width": 512, "height": 512, "dtype": "float32",
//!  "band_ids": ["B1", "B2"], "tile_id": "Ghana_103272", "region": "Ghana"}
//! ```
//!
//! `float32` payloads are band-sequential and row-major (`band * h * w + row * w + col`).
//! Label files use `dtype: "int8"` with an empty `band_ids` list and store `-1` for
//! NoData, `0` for dry land and `1` for water.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable consulted for the data root when no flag is given.
pub const DATA_ROOT_ENV: &str = "FLOODPIX_DATA_ROOT";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: invalid header: {message}", path.display())]
    Header { path: PathBuf, message: String },
    #[error("{}: unknown band id `{band}`", path.display())]
    UnknownBand { path: PathBuf, band: String },
    #[error("{}: dimension mismatch: expected {}x{}, found {}x{}", path.display(), expected.0, expected.1, found.0, found.1)]
    DimensionMismatch {
        path: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{}: truncated payload: expected {expected} bytes, found {found}", path.display())]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{}: wrong dtype, expected {expected}", path.display())]
    WrongDtype { path: PathBuf, expected: &'static str },
    #[error("{}: invalid label value {value}", path.display())]
    InvalidLabel { path: PathBuf, value: i8 },
    #[error("{}: band {band} appears more than once", path.display())]
    DuplicateBand { path: PathBuf, band: BandId },
    #[error("tile `{tile_id}`: band {band} is required but not present")]
    MissingBand { tile_id: String, band: BandId },
    #[error("grid has {found} values, expected {width}x{height}")]
    GridShape {
        width: usize,
        height: usize,
        found: usize,
    },
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("split {split}: duplicate tile id `{tile_id}`")]
    DuplicateTile { split: SplitName, tile_id: String },
    #[error("dataset statistics need at least one tile")]
    EmptyManifest,
}

pub type Result<T, E = RasterError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Optical,
    Sar,
}

/// Sentinel-2 and Sentinel-1 channels.
///
/// The channel index is the position in [`BandId::ALL`]: the 13 optical bands in
/// band-number order followed by `VV` and `VH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8A,
    B9,
    B10,
    B11,
    B12,
    VV,
    VH,
}

impl BandId {
    pub const OPTICAL: [BandId; 13] = [
        BandId::B1,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B9,
        BandId::B10,
        BandId::B11,
        BandId::B12,
    ];
    pub const SAR: [BandId; 2] = [BandId::VV, BandId::VH];
    pub const ALL: [BandId; 15] = [
        BandId::B1,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B9,
        BandId::B10,
        BandId::B11,
        BandId::B12,
        BandId::VV,
        BandId::VH,
    ];

    // Named aliases used by the water indexes.
    pub const BLUE: BandId = BandId::B2;
    pub const GREEN: BandId = BandId::B3;
    pub const RED: BandId = BandId::B4;
    pub const NIR: BandId = BandId::B8;
    pub const SWIR1: BandId = BandId::B11;
    pub const SWIR2: BandId = BandId::B12;

    pub fn channel_index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BandId::B1 => "B1",
            BandId::B2 => "B2",
            BandId::B3 => "B3",
            BandId::B4 => "B4",
            BandId::B5 => "B5",
            BandId::B6 => "B6",
            BandId::B7 => "B7",
            BandId::B8 => "B8",
            BandId::B8A => "B8A",
            BandId::B9 => "B9",
            BandId::B10 => "B10",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
            BandId::VV => "VV",
            BandId::VH => "VH",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            BandId::VV | BandId::VH => Modality::Sar,
            _ => Modality::Optical,
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown band id `{0}`")]
pub struct UnknownBandId(pub String);

impl FromStr for BandId {
    type Err = UnknownBandId;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        BandId::ALL
            .iter()
            .copied()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownBandId(s.to_string()))
    }
}

impl Serialize for BandId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for BandId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ground-truth state of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Dry,
    Water,
    NoData,
}

impl Label {
    pub fn to_i8(self) -> i8 {
        match self {
            Label::NoData => -1,
            Label::Dry => 0,
            Label::Water => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Label> {
        match v {
            -1 => Some(Label::NoData),
            0 => Some(Label::Dry),
            1 => Some(Label::Water),
            _ => None,
        }
    }

    pub fn class(self) -> Option<Class> {
        match self {
            Label::Dry => Some(Class::Dry),
            Label::Water => Some(Class::Water),
            Label::NoData => None,
        }
    }
}

/// Binary prediction target; water is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Dry,
    Water,
}

impl Class {
    pub fn is_water(self) -> bool {
        self == Class::Water
    }

    pub fn from_water(water: bool) -> Class {
        if water {
            Class::Water
        } else {
            Class::Dry
        }
    }
}

impl From<Class> for Label {
    fn from(c: Class) -> Label {
        match c {
            Class::Dry => Label::Dry,
            Class::Water => Label::Water,
        }
    }
}

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type BandGrid = Grid<f32>;
pub type LabelGrid = Grid<Label>;

impl<T> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(RasterError::GridShape {
                width,
                height,
                found: data.len(),
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

/// One multi-band raster chip with its validity mask.
///
/// `valid_mask[i]` is false when the label of pixel `i` is NoData or any loaded band
/// value at `i` is non-finite.
#[derive(Debug, Clone)]
pub struct Tile {
    tile_id: String,
    region: String,
    width: usize,
    height: usize,
    bands: BTreeMap<BandId, BandGrid>,
    valid_mask: Vec<bool>,
}

impl Tile {
    pub fn new(
        tile_id: impl Into<String>,
        region: impl Into<String>,
        bands: BTreeMap<BandId, BandGrid>,
        labels: &LabelGrid,
    ) -> Result<Self> {
        let tile_id = tile_id.into();
        let (width, height) = labels.dims();
        for (band, grid) in &bands {
            if grid.dims() != (width, height) {
                return Err(RasterError::DimensionMismatch {
                    path: PathBuf::from(format!("{tile_id}/{band}")),
                    expected: (width, height),
                    found: grid.dims(),
                });
            }
        }
        let valid_mask = (0..width * height)
            .map(|i| {
                labels.data()[i] != Label::NoData
                    && bands.values().all(|g| g.data()[i].is_finite())
            })
            .collect();
        Ok(Tile {
            tile_id,
            region: region.into(),
            width,
            height,
            bands,
            valid_mask,
        })
    }

    /// Replaces or adds a band; pixels where it is non-finite become invalid.
    pub fn with_band(mut self, band: BandId, grid: BandGrid) -> Result<Self> {
        if grid.dims() != (self.width, self.height) {
            return Err(RasterError::DimensionMismatch {
                path: PathBuf::from(format!("{}/{band}", self.tile_id)),
                expected: (self.width, self.height),
                found: grid.dims(),
            });
        }
        for (ok, v) in self.valid_mask.iter_mut().zip(grid.data()) {
            *ok &= v.is_finite();
        }
        self.bands.insert(band, grid);
        Ok(self)
    }

    pub fn tile_id(&self) -> &str {
        &self.tile_id
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn band(&self, band: BandId) -> Option<&BandGrid> {
        self.bands.get(&band)
    }

    pub fn require_band(&self, band: BandId) -> Result<&BandGrid> {
        self.bands.get(&band).ok_or_else(|| RasterError::MissingBand {
            tile_id: self.tile_id.clone(),
            band,
        })
    }

    pub fn bands(&self) -> impl Iterator<Item = (BandId, &BandGrid)> {
        self.bands.iter().map(|(b, g)| (*b, g))
    }

    pub fn band_ids(&self) -> Vec<BandId> {
        self.bands.keys().copied().collect()
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Int8,
}

/// JSON sidecar describing a raster payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: DType,
    pub band_ids: Vec<String>,
    pub tile_id: String,
    pub region: String,
}

/// Path of the JSON sidecar belonging to a payload file.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_header(payload: &Path) -> Result<RasterHeader> {
    let path = sidecar_path(payload);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RasterError::Header {
        path,
        message: e.to_string(),
    })
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_file_atomic(path, bytes).map_err(io_err(path))
}

fn write_header(payload: &Path, header: &RasterHeader) -> Result<()> {
    let json = serde_json::to_string_pretty(header).expect("header serializes");
    write_atomic(&sidecar_path(payload), json.as_bytes())
}

/// Writes a float32 band-sequential raster with its sidecar.
pub fn write_bands(
    payload: &Path,
    tile_id: &str,
    region: &str,
    bands: &[(BandId, &BandGrid)],
) -> Result<()> {
    let (width, height) = bands.first().map(|(_, g)| g.dims()).unwrap_or((0, 0));
    let mut bytes = Vec::with_capacity(bands.len() * width * height * 4);
    for (_, grid) in bands {
        if grid.dims() != (width, height) {
            return Err(RasterError::DimensionMismatch {
                path: payload.to_path_buf(),
                expected: (width, height),
                found: grid.dims(),
            });
        }
        for v in grid.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(payload, &bytes)?;
    write_header(
        payload,
        &RasterHeader {
            width,
            height,
            dtype: DType::Float32,
            band_ids: bands.iter().map(|(b, _)| b.name().to_string()).collect(),
            tile_id: tile_id.to_string(),
            region: region.to_string(),
        },
    )
}

/// Writes an int8 label (or prediction) grid with its sidecar.
pub fn write_labels(payload: &Path, tile_id: &str, region: &str, labels: &LabelGrid) -> Result<()> {
    let bytes: Vec<u8> = labels.data().iter().map(|l| l.to_i8() as u8).collect();
    write_atomic(payload, &bytes)?;
    write_header(
        payload,
        &RasterHeader {
            width: labels.width(),
            height: labels.height(),
            dtype: DType::Int8,
            band_ids: Vec::new(),
            tile_id: tile_id.to_string(),
            region: region.to_string(),
        },
    )
}

/// Reads a float32 raster, returning its bands in file order.
pub fn read_bands(payload: &Path) -> Result<(RasterHeader, Vec<(BandId, BandGrid)>)> {
    let header = read_header(payload)?;
    if header.dtype != DType::Float32 {
        return Err(RasterError::WrongDtype {
            path: payload.to_path_buf(),
            expected: "float32",
        });
    }
    let mut ids = Vec::with_capacity(header.band_ids.len());
    for name in &header.band_ids {
        let id: BandId = name.parse().map_err(|_| RasterError::UnknownBand {
            path: sidecar_path(payload),
            band: name.clone(),
        })?;
        if ids.contains(&id) {
            return Err(RasterError::DuplicateBand {
                path: sidecar_path(payload),
                band: id,
            });
        }
        ids.push(id);
    }
    let bytes = fs::read(payload).map_err(io_err(payload))?;
    let plane = header.width * header.height;
    let expected = plane * ids.len() * 4;
    if bytes.len() != expected {
        return Err(RasterError::Truncated {
            path: payload.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let bands = ids
        .into_iter()
        .enumerate()
        .map(|(k, id)| {
            let data = bytes[k * plane * 4..(k + 1) * plane * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let grid = Grid {
                width: header.width,
                height: header.height,
                data,
            };
            (id, grid)
        })
        .collect();
    Ok((header, bands))
}

pub fn read_labels(payload: &Path) -> Result<(RasterHeader, LabelGrid)> {
    let header = read_header(payload)?;
    if header.dtype != DType::Int8 {
        return Err(RasterError::WrongDtype {
            path: payload.to_path_buf(),
            expected: "int8",
        });
    }
    let bytes = fs::read(payload).map_err(io_err(payload))?;
    let expected = header.width * header.height;
    if bytes.len() != expected {
        return Err(RasterError::Truncated {
            path: payload.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .iter()
        .map(|b| {
            let v = *b as i8;
            Label::from_i8(v).ok_or(RasterError::InvalidLabel {
                path: payload.to_path_buf(),
                value: v,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid {
        width: header.width,
        height: header.height,
        data,
    };
    Ok((header, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Valid,
    Test,
    BoliviaTest,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
            SplitName::BoliviaTest => "bolivia_test",
        })
    }
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [SplitName::Train, SplitName::Valid, SplitName::Test, SplitName::BoliviaTest];
}

impl std::str::FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        SplitName::ALL
            .into_iter()
            .find(|n| n.to_string() == s)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// One tile of a split; paths are relative to the data root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub tile_id: String,
    pub region: String,
    pub rasters: Vec<PathBuf>,
    pub label: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub split: SplitName,
    pub entries: Vec<ManifestEntry>,
}

impl SplitManifest {
    pub fn new(split: SplitName, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.tile_id.as_str()) {
                return Err(RasterError::DuplicateTile {
                    split,
                    tile_id: e.tile_id.clone(),
                });
            }
        }
        Ok(SplitManifest { split, entries })
    }

    /// Parses a manifest file: a JSON array of [`ManifestEntry`] objects.
    pub fn load(split: SplitName, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| RasterError::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        SplitManifest::new(split, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.entries).expect("manifest serializes");
        write_atomic(path, json.as_bytes())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Loads every band of a manifest entry together with its labels.
pub fn load_tile(entry: &ManifestEntry, data_root: &Path) -> Result<(Tile, LabelGrid)> {
    load_tile_bands(entry, data_root, None)
}

/// Loads a manifest entry, keeping only `bands` when given.
///
/// The validity mask only considers the bands that are kept.
pub fn load_tile_bands(
    entry: &ManifestEntry,
    data_root: &Path,
    bands: Option<&[BandId]>,
) -> Result<(Tile, LabelGrid)> {
    let label_path = data_root.join(&entry.label);
    let (_, labels) = read_labels(&label_path)?;
    let expected = labels.dims();
    let mut grids = BTreeMap::new();
    for rel in &entry.rasters {
        let path = data_root.join(rel);
        let (header, file_bands) = read_bands(&path)?;
        if (header.width, header.height) != expected {
            return Err(RasterError::DimensionMismatch {
                path,
                expected,
                found: (header.width, header.height),
            });
        }
        for (id, grid) in file_bands {
            if bands.is_some_and(|keep| !keep.contains(&id)) {
                continue;
            }
            if grids.insert(id, grid).is_some() {
                return Err(RasterError::DuplicateBand { path, band: id });
            }
        }
    }
    if let Some(keep) = bands {
        for id in keep {
            if !grids.contains_key(id) {
                return Err(RasterError::MissingBand {
                    tile_id: entry.tile_id.clone(),
                    band: *id,
                });
            }
        }
    }
    let tile = Tile::new(entry.tile_id.clone(), entry.region.clone(), grids, &labels)?;
    Ok((tile, labels))
}

/// Pixel counts behind the class and region distributions of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dry_pixels: u64,
    pub water_pixels: u64,
    pub nodata_pixels: u64,
    /// Labelled (non-NoData) pixels per region.
    pub region_valid_pixels: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFractions {
    pub dry: f64,
    pub water: f64,
    pub nodata: f64,
}

impl DatasetStats {
    pub fn add_labels(&mut self, region: &str, labels: &LabelGrid) {
        let mut valid = 0u64;
        for l in labels.data() {
            match l {
                Label::Dry => {
                    self.dry_pixels += 1;
                    valid += 1;
                }
                Label::Water => {
                    self.water_pixels += 1;
                    valid += 1;
                }
                Label::NoData => self.nodata_pixels += 1,
            }
        }
        *self.region_valid_pixels.entry(region.to_string()).or_insert(0) += valid;
    }

    pub fn merge(mut self, other: &DatasetStats) -> DatasetStats {
        self.dry_pixels += other.dry_pixels;
        self.water_pixels += other.water_pixels;
        self.nodata_pixels += other.nodata_pixels;
        for (r, n) in &other.region_valid_pixels {
            *self.region_valid_pixels.entry(r.clone()).or_insert(0) += n;
        }
        self
    }

    pub fn total_pixels(&self) -> u64 {
        self.dry_pixels + self.water_pixels + self.nodata_pixels
    }

    /// Class shares over all pixels, NoData included.
    pub fn class_fractions(&self) -> ClassFractions {
        let total = self.total_pixels().max(1) as f64;
        ClassFractions {
            dry: self.dry_pixels as f64 / total,
            water: self.water_pixels as f64 / total,
            nodata: self.nodata_pixels as f64 / total,
        }
    }

    /// Region shares of the labelled area.
    pub fn region_fractions(&self) -> BTreeMap<String, f64> {
        let valid: u64 = self.region_valid_pixels.values().sum();
        self.region_valid_pixels
            .iter()
            .map(|(r, n)| {
                let f = if valid == 0 {
                    0.0
                } else {
                    *n as f64 / valid as f64
                };
                (r.clone(), f)
            })
            .collect()
    }
}

/// Class and region distribution over the union of the given manifests.
///
/// Only label files are read.
pub fn dataset_statistics(manifests: &[SplitManifest], data_root: &Path) -> Result<DatasetStats> {
    let entries: Vec<&ManifestEntry> = manifests.iter().flat_map(|m| &m.entries).collect();
    if entries.is_empty() {
        return Err(RasterError::EmptyManifest);
    }
    let per_tile = entries
        .par_iter()
        .map(|e| {
            let (_, labels) = read_labels(&data_root.join(&e.label))?;
            let mut s = DatasetStats::default();
            s.add_labels(&e.region, &labels);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_tile
        .iter()
        .fold(DatasetStats::default(), |acc, s| acc.merge(s)))
}
