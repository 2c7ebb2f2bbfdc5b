//! Pixel-wise flood mapping with classical machine learning.
//!
//! The crate is organised along the pipeline:
//!
//! * [`raster`]: canonical tile/label storage, split manifests and dataset statistics.
//! * [`features`]: water indexes, HSV decompositions, Lee sigma speckle filtering and
//!   the feature-space grammar (`"SAR_HSV(O3)+cAWEI+cNDWI"`).
//! * [`metrics`]: confusion counts, the segmentation metric algebra, mean/total/region-wise
//!   aggregation and correlation tests.
//! * [`classifiers`]: Gaussian naive Bayes, LDA, QDA and a linear SGD model.
//! * [`gbdt`]: histogram-based gradient boosting with leaf-wise grown trees.
//! * [`harness`]: grid search, model selection, final evaluation and report export.

pub mod classifiers;
pub mod features;
pub mod gbdt;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod synthetic;

pub use features::{FeatureMatrix, FeatureSpaceSpec};
pub use metrics::{ConfusionCounts, MetricReport, MetricSet};
pub use model::{Model, ModelDocument};
pub use raster::{BandId, Class, Label, LabelGrid, SplitManifest, SplitName, Tile};
