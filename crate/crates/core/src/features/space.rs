//! Feature-space grammar: `[SAR_] block (+ block)*`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::index::IndexKind;
use super::FeatureError;
use crate::raster::BandId;

/// The feature spaces compared in the study, in their canonical spelling.
pub const CANONICAL_FEATURE_SPACES: [&str; 23] = [
    "SAR",
    "OPT",
    "O3",
    "S2",
    "RGB",
    "RGBN",
    "HSV(RGB)",
    "HSV(O3)",
    "cNDWI",
    "cAWEI",
    "cAWEI+cNDWI",
    "HSV(O3)+cAWEI+cNDWI",
    "SAR_OPT",
    "SAR_O3",
    "SAR_S2",
    "SAR_RGB",
    "SAR_RGBN",
    "SAR_HSV(RGB)",
    "SAR_HSV(O3)",
    "SAR_cNDWI",
    "SAR_cAWEI",
    "SAR_cAWEI+cNDWI",
    "SAR_HSV(O3)+cAWEI+cNDWI",
];

/// Sentinel-2 without the three 60 m bands.
const OPT_BANDS: [BandId; 10] = [
    BandId::B2,
    BandId::B3,
    BandId::B4,
    BandId::B5,
    BandId::B6,
    BandId::B7,
    BandId::B8,
    BandId::B8A,
    BandId::B11,
    BandId::B12,
];
const RGB_BANDS: [BandId; 3] = [BandId::RED, BandId::GREEN, BandId::BLUE];
const RGBN_BANDS: [BandId; 4] = [BandId::RED, BandId::GREEN, BandId::BLUE, BandId::NIR];
/// SWIR-2, NIR and red, filling the R, G and B slots of the HSV transform.
const O3_BANDS: [BandId; 3] = [BandId::SWIR2, BandId::NIR, BandId::RED];

/// What a block computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Sar,
    RawBands(&'static [BandId]),
    Hsv(&'static [BandId; 3]),
    Indexes(&'static [IndexKind; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    Sar,
    Opt,
    O3,
    S2,
    Rgb,
    Rgbn,
    HsvRgb,
    HsvO3,
    CNdwi,
    CAwei,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::Sar,
        Block::Opt,
        Block::O3,
        Block::S2,
        Block::Rgb,
        Block::Rgbn,
        Block::HsvRgb,
        Block::HsvO3,
        Block::CNdwi,
        Block::CAwei,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Block::Sar => "SAR",
            Block::Opt => "OPT",
            Block::O3 => "O3",
            Block::S2 => "S2",
            Block::Rgb => "RGB",
            Block::Rgbn => "RGBN",
            Block::HsvRgb => "HSV(RGB)",
            Block::HsvO3 => "HSV(O3)",
            Block::CNdwi => "cNDWI",
            Block::CAwei => "cAWEI",
        }
    }

    pub fn kind(self) -> BlockKind {
        match self {
            Block::Sar => BlockKind::Sar,
            Block::Opt => BlockKind::RawBands(&OPT_BANDS),
            Block::O3 => BlockKind::RawBands(&O3_BANDS),
            Block::S2 => BlockKind::RawBands(&BandId::OPTICAL),
            Block::Rgb => BlockKind::RawBands(&RGB_BANDS),
            Block::Rgbn => BlockKind::RawBands(&RGBN_BANDS),
            Block::HsvRgb => BlockKind::Hsv(&RGB_BANDS),
            Block::HsvO3 => BlockKind::Hsv(&O3_BANDS),
            Block::CNdwi => BlockKind::Indexes(&[IndexKind::Ndwi, IndexKind::Mndwi]),
            Block::CAwei => BlockKind::Indexes(&[IndexKind::Awei, IndexKind::AweiSh]),
        }
    }

    pub fn width(self) -> usize {
        match self.kind() {
            BlockKind::Sar => 2,
            BlockKind::RawBands(bands) => bands.len(),
            BlockKind::Hsv(_) => 3,
            BlockKind::Indexes(kinds) => kinds.len(),
        }
    }

    pub fn required_bands(self) -> Vec<BandId> {
        let mut bands: Vec<BandId> = match self.kind() {
            BlockKind::Sar => BandId::SAR.to_vec(),
            BlockKind::RawBands(b) => b.to_vec(),
            BlockKind::Hsv(b) => b.to_vec(),
            BlockKind::Indexes(kinds) => kinds
                .iter()
                .flat_map(|k| k.required_bands().iter().copied())
                .collect(),
        };
        bands.sort();
        bands.dedup();
        bands
    }

    pub fn column_names(self) -> Vec<String> {
        match self.kind() {
            BlockKind::Sar => BandId::SAR.iter().map(|b| b.name().to_string()).collect(),
            BlockKind::RawBands(b) => b.iter().map(|b| b.name().to_string()).collect(),
            BlockKind::Hsv(_) => ["H", "S", "V"]
                .iter()
                .map(|c| format!("{}.{c}", self.token()))
                .collect(),
            BlockKind::Indexes(kinds) => kinds.iter().map(|k| k.name().to_string()).collect(),
        }
    }
}

impl FromStr for Block {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Block::ALL
            .iter()
            .copied()
            .find(|b| b.token().eq_ignore_ascii_case(s))
            .ok_or_else(|| FeatureError::UnknownBlock(s.to_string()))
    }
}

/// An ordered concatenation of feature blocks along the channel axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureSpaceSpec {
    blocks: Vec<Block>,
}

impl FeatureSpaceSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self, FeatureError> {
        if blocks.is_empty() {
            return Err(FeatureError::EmptyFeatureSpace);
        }
        for (i, b) in blocks.iter().enumerate() {
            if blocks[..i].contains(b) {
                return Err(if *b == Block::Sar {
                    FeatureError::DuplicateSar
                } else {
                    FeatureError::DuplicateBlock(b.token().to_string())
                });
            }
        }
        Ok(FeatureSpaceSpec { blocks })
    }

    pub fn parse(name: &str) -> Result<Self, FeatureError> {
        name.parse()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dimensionality(&self) -> usize {
        self.blocks.iter().map(|b| b.width()).sum()
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    pub fn uses_sar(&self) -> bool {
        self.blocks.contains(&Block::Sar)
    }

    pub fn required_bands(&self) -> Vec<BandId> {
        let mut bands: Vec<BandId> = self.blocks.iter().flat_map(|b| b.required_bands()).collect();
        bands.sort();
        bands.dedup();
        bands
    }

    pub fn column_names(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|b| b.column_names()).collect()
    }
}

impl fmt::Display for FeatureSpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rest = match self.blocks.split_first() {
            Some((Block::Sar, rest)) if !rest.is_empty() => {
                f.write_str("SAR_")?;
                rest
            }
            _ => &self.blocks[..],
        };
        let tokens: Vec<&str> = rest.iter().map(|b| b.token()).collect();
        f.write_str(&tokens.join("+"))
    }
}

impl FromStr for FeatureSpaceSpec {
    type Err = FeatureError;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        let name = name.trim();
        if name.is_empty() {
            return Err(FeatureError::EmptyFeatureSpace);
        }
        let mut blocks = Vec::new();
        let mut body = name;
        while body.get(..4).is_some_and(|p| p.eq_ignore_ascii_case("SAR_")) {
            if blocks.contains(&Block::Sar) {
                return Err(FeatureError::DuplicateSar);
            }
            blocks.push(Block::Sar);
            body = &body[4..];
        }
        for token in body.split('+') {
            let block: Block = token.trim().parse()?;
            if block == Block::Sar && blocks.contains(&Block::Sar) {
                return Err(FeatureError::DuplicateSar);
            }
            blocks.push(block);
        }
        FeatureSpaceSpec::new(blocks)
    }
}

impl Serialize for FeatureSpaceSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureSpaceSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimensionality_examples() {
        assert_eq!(FeatureSpaceSpec::parse("SAR").unwrap().dimensionality(), 2);
        assert_eq!(FeatureSpaceSpec::parse("cAWEI+cNDWI").unwrap().dimensionality(), 4);
        assert_eq!(
            FeatureSpaceSpec::parse("SAR_HSV(O3)+cAWEI+cNDWI")
                .unwrap()
                .dimensionality(),
            9
        );
        assert_eq!(FeatureSpaceSpec::parse("SAR_S2").unwrap().dimensionality(), 15);
        assert_eq!(FeatureSpaceSpec::parse("OPT").unwrap().dimensionality(), 10);
    }

    #[test]
    fn canonical_names_round_trip() {
        for name in CANONICAL_FEATURE_SPACES {
            let spec = FeatureSpaceSpec::parse(name).unwrap();
            assert_eq!(spec.to_string(), name);
            assert_eq!(spec.column_names().len(), spec.dimensionality());
        }
    }

    #[test]
    fn block_order_and_columns() {
        let spec = FeatureSpaceSpec::parse("SAR_HSV(O3)+cAWEI+cNDWI").unwrap();
        assert_eq!(
            spec.blocks(),
            &[Block::Sar, Block::HsvO3, Block::CAwei, Block::CNdwi]
        );
        assert_eq!(
            spec.column_names(),
            vec!["VV", "VH", "HSV(O3).H", "HSV(O3).S", "HSV(O3).V", "AWEI", "AWEISH", "NDWI", "MNDWI"]
        );
        assert_eq!(
            FeatureSpaceSpec::parse("cNDWI").unwrap().column_names(),
            vec!["NDWI", "MNDWI"]
        );
        assert_eq!(
            FeatureSpaceSpec::parse("O3").unwrap().column_names(),
            vec!["B12", "B8", "B4"]
        );
    }

    #[test]
    fn malformed_names_rejected() {
        assert!(matches!(
            FeatureSpaceSpec::parse("NDVI"),
            Err(FeatureError::UnknownBlock(_))
        ));
        assert!(matches!(
            FeatureSpaceSpec::parse("SAR_SAR_RGB"),
            Err(FeatureError::DuplicateSar)
        ));
        assert!(matches!(
            FeatureSpaceSpec::parse("SAR_RGB+SAR"),
            Err(FeatureError::DuplicateSar)
        ));
        assert!(matches!(
            FeatureSpaceSpec::parse("RGB+RGB"),
            Err(FeatureError::DuplicateBlock(_))
        ));
        assert!(FeatureSpaceSpec::parse("").is_err());
        assert!(FeatureSpaceSpec::parse("SAR_").is_err());
        assert!(FeatureSpaceSpec::parse("RGB+").is_err());
    }

    fn arb_spec() -> impl Strategy<Value = FeatureSpaceSpec> {
        proptest::sample::subsequence(Block::ALL.to_vec(), 1..=5)
            .prop_shuffle()
            .prop_map(|blocks| FeatureSpaceSpec::new(blocks).unwrap())
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(spec in arb_spec()) {
            let again = FeatureSpaceSpec::parse(&spec.to_string()).unwrap();
            prop_assert_eq!(&again, &spec);
            let width: usize = spec.blocks().iter().map(|b| b.width()).sum();
            prop_assert_eq!(spec.dimensionality(), width);
        }
    }
}
