//! Confusion accumulation, segmentation metrics and their aggregation.
//!
//! Water is the positive class. Ratios whose denominator is zero are vacuously perfect
//! (1.0) unless [`EmptyPolicy::Exclude`] drops them from per-tile means.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::raster::{Class, Label, LabelGrid};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction has {pred} pixels but the label grid has {truth}")]
    ShapeMismatch { pred: usize, truth: usize },
    #[error("confusion counts are all zero")]
    EmptyCounts,
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("correlation needs at least 3 paired values, got {0}")]
    TooFewPoints(usize),
    #[error("x and y differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero variance in correlation input")]
    DegenerateVariance,
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Truth water pixels.
    pub fn water(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn record(&mut self, pred: Class, truth: Class) {
        match (pred.is_water(), truth.is_water()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        self + other
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

impl<'a> Sum<&'a ConfusionCounts> for ConfusionCounts {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

/// Counts over pixels whose truth label is not NoData.
pub fn confusion(pred: &[Class], truth: &LabelGrid) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.iter().zip(truth.data()) {
        if let Some(t) = t.class() {
            c.record(*p, t);
        }
    }
    Ok(c)
}

/// Like [`confusion`] but for predictions that may be missing; such pixels are skipped.
pub fn confusion_labels(pred: &[Label], truth: &LabelGrid) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.iter().zip(truth.data()) {
        if let (Some(p), Some(t)) = (p.class(), t.class()) {
            c.record(p, t);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc,
    Iou,
    Precision,
    Recall,
    F1,
    RecallDry,
}

impl Metric {
    /// Stable column order of every report.
    pub const ALL: [Metric; 6] = [
        Metric::Acc,
        Metric::Iou,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::RecallDry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "acc",
            Metric::Iou => "iou",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::RecallDry => "recall_dry",
        }
    }

    /// Value for `c`, or `None` when the ratio is 0/0.
    pub fn ratio(self, c: &ConfusionCounts) -> Option<f64> {
        let (num, den) = match self {
            Metric::Acc => (c.tp + c.tn, c.total()),
            Metric::Iou => (c.tp, c.tp + c.fp + c.fn_),
            Metric::Precision => (c.tp, c.tp + c.fp),
            Metric::Recall => (c.tp, c.tp + c.fn_),
            Metric::F1 => (2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            Metric::RecallDry => (c.tn, c.tn + c.fp),
        };
        (den > 0).then(|| num as f64 / den as f64)
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// How per-tile means treat a metric that is 0/0 on a tile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Count it as 1.0.
    #[default]
    Perfect,
    /// Leave the tile out of that metric's mean and std.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub recall_dry: f64,
}

impl MetricSet {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        if c.total() == 0 {
            return Err(MetricsError::EmptyCounts);
        }
        Ok(MetricSet::from_fn(|m| m.ratio(c).unwrap_or(1.0)))
    }

    pub fn from_fn(mut f: impl FnMut(Metric) -> f64) -> Self {
        MetricSet {
            acc: f(Metric::Acc),
            iou: f(Metric::Iou),
            precision: f(Metric::Precision),
            recall: f(Metric::Recall),
            f1: f(Metric::F1),
            recall_dry: f(Metric::RecallDry),
        }
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Acc => self.acc,
            Metric::Iou => self.iou,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::RecallDry => self.recall_dry,
        }
    }

    /// Fraction of water pixels missed.
    pub fn omission(&self) -> f64 {
        1.0 - self.recall
    }

    /// Fraction of dry pixels marked as water.
    pub fn commission(&self) -> f64 {
        1.0 - self.recall_dry
    }
}

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Confusion counts of one tile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCounts {
    pub tile_id: String,
    pub region: String,
    pub counts: ConfusionCounts,
}

/// Mean-based and total metrics over a set of tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_tiles: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub total: MetricSet,
    pub counts: ConfusionCounts,
}

impl MetricReport {
    pub fn get(&self, kind: Aggregate, m: Metric) -> f64 {
        match kind {
            Aggregate::Mean => self.mean.get(m),
            Aggregate::Std => self.std.get(m),
            Aggregate::Total => self.total.get(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Mean,
    Std,
    Total,
}

pub fn aggregate(tiles: &[TileCounts], policy: EmptyPolicy) -> Result<MetricReport> {
    if tiles.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut per_metric: Vec<Vec<f64>> = vec![Vec::with_capacity(tiles.len()); Metric::ALL.len()];
    for t in tiles {
        if t.counts.total() == 0 {
            if policy == EmptyPolicy::Exclude {
                continue;
            }
            return Err(MetricsError::EmptyCounts);
        }
        for (slot, m) in per_metric.iter_mut().zip(Metric::ALL) {
            match (m.ratio(&t.counts), policy) {
                (Some(v), _) => slot.push(v),
                (None, EmptyPolicy::Perfect) => slot.push(1.0),
                (None, EmptyPolicy::Exclude) => {}
            }
        }
    }
    let counts: ConfusionCounts = tiles.iter().map(|t| t.counts).sum();
    let total = MetricSet::from_counts(&counts)?;
    // A metric undefined on every tile falls back to its vacuous value.
    let stat = |i: usize, f: fn(&[f64]) -> f64, empty: f64| {
        if per_metric[i].is_empty() {
            empty
        } else {
            f(&per_metric[i])
        }
    };
    let mean_set = MetricSet::from_fn(|m| stat(m as usize, mean, 1.0));
    let std_set = MetricSet::from_fn(|m| stat(m as usize, population_std, 0.0));
    Ok(MetricReport {
        n_tiles: tiles.len(),
        mean: mean_set,
        std: std_set,
        total,
        counts,
    })
}

/// Summary of one metric across regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        Summary {
            mean: mean(values),
            std: population_std(values),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            median: median(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub region: String,
    pub n_tiles: usize,
    pub water_pixels: u64,
    pub counts: ConfusionCounts,
    pub metrics: MetricSet,
}

/// Total metrics per region and their spread across regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionwiseReport {
    pub regions: Vec<RegionMetrics>,
    pub summary: BTreeMap<Metric, Summary>,
}

impl RegionwiseReport {
    pub fn values(&self, m: Metric) -> Vec<f64> {
        self.regions.iter().map(|r| r.metrics.get(m)).collect()
    }

    pub fn water_pixels(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.water_pixels as f64).collect()
    }
}

pub fn regionwise(tiles: &[TileCounts]) -> Result<RegionwiseReport> {
    if tiles.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut grouped: BTreeMap<&str, (usize, ConfusionCounts)> = BTreeMap::new();
    for t in tiles {
        let e = grouped.entry(&t.region).or_default();
        e.0 += 1;
        e.1 += t.counts;
    }
    let regions = grouped
        .into_iter()
        .map(|(region, (n_tiles, counts))| {
            Ok(RegionMetrics {
                region: region.to_string(),
                n_tiles,
                water_pixels: counts.water(),
                counts,
                metrics: MetricSet::from_counts(&counts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = Metric::ALL
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = regions.iter().map(|r| r.metrics.get(m)).collect();
            (m, Summary::of(&v))
        })
        .collect();
    Ok(RegionwiseReport { regions, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub kind: Correlation,
    pub n: usize,
    pub coefficient: f64,
    pub p_value: f64,
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(MetricsError::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&midranks(x), &midranks(y))
}

/// Two-sided p-value of `r` with `t = r * sqrt((n - 2) / (1 - r^2))` on `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if 1.0 - r.abs() <= 1e-15 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

pub fn correlation_test(x: &[f64], y: &[f64], kind: Correlation) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(MetricsError::TooFewPoints(x.len()));
    }
    let r = match kind {
        Correlation::Pearson => pearson(x, y)?,
        Correlation::Spearman => spearman(x, y)?,
    };
    Ok(CorrelationResult {
        kind,
        n: x.len(),
        coefficient: r,
        p_value: correlation_p_value(r, x.len()),
    })
}

/// CSV with one row per aggregate (mean, std, total) and six-decimal values.
pub fn report_csv(report: &MetricReport) -> String {
    let mut out = String::from("aggregate");
    for m in Metric::ALL {
        out.push(',');
        out.push_str(m.name());
    }
    out.push('\n');
    for (name, kind) in [("mean", Aggregate::Mean), ("std", Aggregate::Std), ("total", Aggregate::Total)] {
        out.push_str(name);
        for m in Metric::ALL {
            let _ = write!(out, ",{:.6}", report.get(kind, m));
        }
        out.push('\n');
    }
    out
}

/// CSV with one row per region followed by the summary rows.
pub fn regionwise_csv(report: &RegionwiseReport) -> String {
    let mut out = String::from("region,water_pixels,tp,fp,tn,fn");
    for m in Metric::ALL {
        out.push(',');
        out.push_str(m.name());
    }
    out.push('\n');
    for r in &report.regions {
        let c = r.counts;
        let _ = write!(out, "{},{},{},{},{},{}", r.region, r.water_pixels, c.tp, c.fp, c.tn, c.fn_);
        for m in Metric::ALL {
            let _ = write!(out, ",{:.6}", r.metrics.get(m));
        }
        out.push('\n');
    }
    type Field = fn(&Summary) -> f64;
    let stats: [(&str, Field); 5] = [
        ("mean", |s| s.mean),
        ("std", |s| s.std),
        ("min", |s| s.min),
        ("max", |s| s.max),
        ("median", |s| s.median),
    ];
    for (name, f) in stats {
        let _ = write!(out, "{name},,,,,");
        for m in Metric::ALL {
            let _ = write!(out, ",{:.6}", f(&report.summary[&m]));
        }
        out.push('\n');
    }
    out
}
