use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::metrics::{mean, Aggregate, Metric, MetricReport, MetricSet};
use crate::model::ModelParams;

/// Validation report of one successful grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub feature_space: String,
    pub params: ModelParams,
    pub seed: u64,
    pub report: MetricReport,
}

impl ValidationRow {
    pub fn config_key(&self) -> String {
        config_key(&self.feature_space, &self.params)
    }
}

fn config_key(feature_space: &str, params: &ModelParams) -> String {
    format!("{feature_space} {}", params.key())
}

/// Ordered comparison keys; larger is better for each, the first difference decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub order: Vec<(Aggregate, Metric)>,
}

impl Default for SelectionRule {
    /// Validation mean IoU, then total IoU and the remaining metrics as tie-breakers.
    fn default() -> Self {
        use Aggregate::{Mean, Total};
        SelectionRule {
            order: vec![
                (Mean, Metric::Iou),
                (Total, Metric::Iou),
                (Mean, Metric::Acc),
                (Total, Metric::Acc),
                (Total, Metric::Precision),
                (Total, Metric::Recall),
                (Total, Metric::RecallDry),
                (Total, Metric::F1),
            ],
        }
    }
}

/// Seed-averaged validation metrics of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub feature_space: String,
    pub params: ModelParams,
    pub config_key: String,
    pub seeds: Vec<u64>,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub total: MetricSet,
}

impl ConfigSummary {
    pub fn get(&self, kind: Aggregate, m: Metric) -> f64 {
        match kind {
            Aggregate::Mean => self.mean.get(m),
            Aggregate::Std => self.std.get(m),
            Aggregate::Total => self.total.get(m),
        }
    }
}

/// Averages every metric value over the seeds of each configuration. Output is
/// ordered by configuration key and does not depend on the order of `rows`.
pub fn summarize(rows: &[ValidationRow]) -> Vec<ConfigSummary> {
    let mut groups: BTreeMap<String, Vec<&ValidationRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.config_key()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, mut group)| {
            // Summation order fixed by seed so averages are permutation invariant.
            group.sort_by_key(|r| r.seed);
            let avg = |kind: Aggregate| {
                MetricSet::from_fn(|m| mean(&group.iter().map(|r| r.report.get(kind, m)).collect::<Vec<_>>()))
            };
            ConfigSummary {
                feature_space: group[0].feature_space.clone(),
                params: group[0].params,
                config_key: key,
                seeds: group.iter().map(|r| r.seed).collect(),
                mean: avg(Aggregate::Mean),
                std: avg(Aggregate::Std),
                total: avg(Aggregate::Total),
            }
        })
        .collect()
}

/// The configuration picked on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenConfig {
    pub feature_space: String,
    pub params: ModelParams,
    pub validation: ConfigSummary,
    pub rule: SelectionRule,
}

fn compare(a: &ConfigSummary, b: &ConfigSummary, rule: &SelectionRule) -> Ordering {
    for &(kind, m) in &rule.order {
        match a.get(kind, m).total_cmp(&b.get(kind, m)) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    // Full ties go to the lexicographically smaller configuration key.
    b.config_key.cmp(&a.config_key)
}

/// Best configuration by `rule` over seed-averaged validation metrics.
pub fn select_best(rows: &[ValidationRow], rule: &SelectionRule) -> Result<ChosenConfig> {
    let best = summarize(rows)
        .into_iter()
        .max_by(|a, b| compare(a, b, rule))
        .ok_or(HarnessError::NothingToSelect)?;
    Ok(ChosenConfig {
        feature_space: best.feature_space.clone(),
        params: best.params,
        validation: best,
        rule: rule.clone(),
    })
}

/// One row per configuration: mean and total of every metric.
pub fn summary_csv(summaries: &[ConfigSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["feature_space".to_string(), "params".into(), "n_seeds".into()];
    for kind in ["mean", "total"] {
        header.extend(Metric::ALL.iter().map(|m| format!("{kind}_{}", m.name())));
    }
    w.write_record(&header).expect("in-memory write");
    for s in summaries {
        let mut rec = vec![s.feature_space.clone(), s.params.key(), s.seeds.len().to_string()];
        for set in [&s.mean, &s.total] {
            rec.extend(Metric::ALL.iter().map(|m| format!("{:.6}", set.get(*m))));
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::metrics::ConfusionCounts;

    fn row(fs: &str, shrinkage: f64, seed: u64, mean_iou: f64, total_iou: f64) -> ValidationRow {
        let set = |iou: f64| MetricSet::from_fn(|m| if m == Metric::Iou { iou } else { 0.5 });
        ValidationRow {
            feature_space: fs.into(),
            params: ModelParams::Lda { shrinkage },
            seed,
            report: MetricReport {
                n_tiles: 1,
                mean: set(mean_iou),
                std: set(0.0),
                total: set(total_iou),
                counts: ConfusionCounts::default(),
            },
        }
    }

    #[test]
    fn higher_mean_iou_wins() {
        let rows = [row("SAR", 0.1, 0, 0.6, 0.9), row("SAR", 0.2, 0, 0.7, 0.1)];
        let c = select_best(&rows, &SelectionRule::default()).unwrap();
        assert_eq!(c.params, ModelParams::Lda { shrinkage: 0.2 });
    }

    #[test]
    fn total_iou_breaks_mean_ties() {
        let rows = [row("SAR", 0.1, 0, 0.7, 0.80), row("SAR", 0.2, 0, 0.7, 0.82)];
        let c = select_best(&rows, &SelectionRule::default()).unwrap();
        assert_eq!(c.params, ModelParams::Lda { shrinkage: 0.2 });
    }

    #[test]
    fn full_ties_go_to_smaller_key() {
        let rows = [row("SAR", 0.2, 0, 0.7, 0.8), row("RGB", 0.2, 0, 0.7, 0.8)];
        assert_eq!(select_best(&rows, &SelectionRule::default()).unwrap().feature_space, "RGB");
    }

    #[test]
    fn selection_averages_over_seeds() {
        // Seed-averaged mean IoU: 0.65 versus 0.6.
        let rows = [
            row("SAR", 0.1, 0, 0.9, 0.5),
            row("SAR", 0.1, 1, 0.4, 0.5),
            row("SAR", 0.2, 0, 0.6, 0.5),
            row("SAR", 0.2, 1, 0.6, 0.5),
        ];
        let c = select_best(&rows, &SelectionRule::default()).unwrap();
        assert_eq!(c.params, ModelParams::Lda { shrinkage: 0.1 });
        assert!((c.validation.mean.iou - 0.65).abs() < 1e-15);
        assert_eq!(c.validation.seeds, vec![0, 1]);
    }

    #[test]
    fn winner_is_invariant_under_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Coarse values force many ties so the later keys matter.
        let mut rows: Vec<ValidationRow> = Vec::new();
        for fs in ["SAR", "RGB", "O3"] {
            for s in 0..4 {
                for seed in 0..4 {
                    let q = |rng: &mut ChaCha8Rng| rng.random_range(0..3) as f64 / 4.0;
                    rows.push(row(fs, s as f64 / 10.0, seed, q(&mut rng), q(&mut rng)));
                }
            }
        }
        let reference = select_best(&rows, &SelectionRule::default()).unwrap();
        for _ in 0..50 {
            rows.shuffle(&mut rng);
            assert_eq!(select_best(&rows, &SelectionRule::default()).unwrap(), reference);
        }
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(
            select_best(&[], &SelectionRule::default()),
            Err(HarnessError::NothingToSelect)
        ));
    }

    #[test]
    fn summary_csv_quotes_keys_with_commas() {
        let csv = summary_csv(&summarize(&[row("SAR", 0.1, 0, 0.5, 0.5)]));
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("feature_space,params,n_seeds,mean_acc"));
        assert!(lines.next().unwrap().starts_with("SAR,lda(shrinkage=0.1),1,"));
        let sgd = ValidationRow {
            params: ModelParams::sgd(crate::classifiers::SgdLoss::Hinge, 0.1, false),
            ..row("SAR", 0.0, 0, 0.5, 0.5)
        };
        assert!(summary_csv(&summarize(&[sgd])).contains("\"sgd(loss=hinge,alpha=0.1,rebalance=false)\""));
    }
}
