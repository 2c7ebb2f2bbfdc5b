use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use floodpix::harness::{
    final_eval, run_grid_search, run_pipeline, select_best, CellOutcome, GridSearchConfig, HarnessError,
    SelectionRule,
};
use floodpix::metrics::{mean, Metric};
use floodpix::model::{ModelKind, ModelParams};
use floodpix::synthetic::{ClassDistribution, SyntheticSpec};
use floodpix::SplitName;

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        width: 24,
        height: 24,
        ..SyntheticSpec::gaussian_mixture(seed)
    }
}

fn config(data: &Path, out: &Path, model: ModelKind, spaces: &[&str]) -> GridSearchConfig {
    let mut cfg = GridSearchConfig::new(model, spaces, data, out);
    cfg.jobs = 2;
    cfg.final_seeds = vec![0, 1, 2];
    cfg
}

#[test]
fn grid_has_one_row_per_space_hyper_and_seed() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_spec(1).write(data.path()).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::Lda, &["SAR", "RGB"]);
    cfg.grid.lda_shrinkage = vec![0.0, 0.5];
    let result = run_grid_search(&cfg).unwrap();
    assert_eq!(result.cells.len(), 16);
    let keys: BTreeSet<(String, String, u64)> = result
        .cells
        .iter()
        .map(|c| (c.feature_space.clone(), c.params.key(), c.seed))
        .collect();
    assert_eq!(keys.len(), 16);
    let files = fs::read_dir(out.path().join("search/cells"))
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.ends_with(".json") && !name.ends_with(".timing.json")
        })
        .count();
    assert_eq!(files, 16);
    assert!(result.cells.iter().all(|c| matches!(c.outcome, CellOutcome::Ok { .. })));
    let snapshot = fs::read_to_string(out.path().join("config.resolved.toml")).unwrap();
    assert_eq!(GridSearchConfig::from_toml(&snapshot).unwrap(), cfg);
}

#[test]
fn rerun_reuses_cells_and_reproduces_outputs() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_spec(2).write(data.path()).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::Sgd, &["SAR"]);
    cfg.grid.sgd_loss = vec![floodpix::classifiers::SgdLoss::Logistic];
    cfg.grid.sgd_alpha = vec![0.01];
    cfg.grid.sgd_rebalance = vec![false, true];
    run_grid_search(&cfg).unwrap();
    let results = out.path().join("search/results.json");
    let first = fs::read(&results).unwrap();
    let cells = out.path().join("search/cells");
    let names: Vec<_> = fs::read_dir(&cells).unwrap().map(|e| e.unwrap().path()).collect();
    let stamp = |p: &Path| fs::metadata(p).unwrap().modified().unwrap();
    let before: Vec<_> = names.iter().map(|p| stamp(p)).collect();

    // Every cell cached: nothing is rewritten.
    run_grid_search(&cfg).unwrap();
    assert_eq!(fs::read(&results).unwrap(), first);
    let after: Vec<_> = names.iter().map(|p| stamp(p)).collect();
    assert_eq!(before, after);

    // An interrupted run leaves some cells missing; they are recomputed identically.
    let victim = names
        .iter()
        .find(|p| p.to_str().unwrap().ends_with("seed2.json"))
        .unwrap();
    let kept = fs::read(victim).unwrap();
    fs::remove_file(victim).unwrap();
    run_grid_search(&cfg).unwrap();
    assert_eq!(fs::read(victim).unwrap(), kept);
    assert_eq!(fs::read(&results).unwrap(), first);
}

#[test]
fn fit_failures_are_recorded_not_fatal() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_spec(3).write(data.path()).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::Lda, &["SAR"]);
    // Shrinkage outside [0, 1] is rejected by the model.
    cfg.grid.lda_shrinkage = vec![0.1, 1.5];
    cfg.search_seeds = vec![0, 1];
    let result = run_grid_search(&cfg).unwrap();
    assert_eq!(result.cells.len(), 4);
    let failed: Vec<_> = result.failures().collect();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|(c, _)| c.params == ModelParams::Lda { shrinkage: 1.5 }));
    let chosen = select_best(&result.validation_rows(), &SelectionRule::default()).unwrap();
    assert_eq!(chosen.params, ModelParams::Lda { shrinkage: 0.1 });
}

#[test]
fn gbdt_cells_use_dimensionality_leaf_grid() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_spec(4).write(data.path()).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::Gbdt, &["SAR", "RGB"]);
    cfg.grid.gbdt_n_trees = vec![5];
    cfg.search_seeds = vec![0];
    let result = run_grid_search(&cfg).unwrap();
    let leaves = |fs: &str| -> Vec<usize> {
        result
            .cells
            .iter()
            .filter(|c| c.feature_space == fs)
            .map(|c| match c.params {
                ModelParams::Gbdt(p) => p.max_leaves,
                _ => unreachable!(),
            })
            .collect()
    };
    assert_eq!(leaves("SAR"), vec![2, 4]);
    assert_eq!(leaves("RGB"), vec![4, 8]);
}

#[test]
fn perfect_fixture_scores_one_on_both_final_splits() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let mut spec = small_spec(5);
    let far = |vv: f64| ClassDistribution {
        bands: vec![(floodpix::BandId::VV, vv, 0.5), (floodpix::BandId::VH, vv - 7.0, 0.5)],
        shared_sd: 0.0,
    };
    spec.dry = far(-5.0);
    spec.water = far(-25.0);
    spec.write(data.path()).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::Lda, &["SAR"]);
    cfg.grid.lda_shrinkage = vec![0.0];
    let output = run_pipeline(&cfg).unwrap();
    for split in [SplitName::Test, SplitName::BoliviaTest] {
        let r = output.report.split(split).unwrap();
        for m in Metric::ALL {
            assert_eq!(r.averaged.total.get(m), 1.0, "{split} {m:?}");
        }
        assert_eq!(r.per_seed.len(), 3);
    }
    for name in ["report.json", "test_metrics.csv", "bolivia_test_regionwise.csv", "test_tiles.csv", "timing.json"] {
        assert!(out.path().join("final").join(name).is_file(), "{name}");
    }
    assert!(out.path().join("final/models/seed2.json").is_file());
    assert!(out.path().join("selection.json").is_file());
}

#[test]
fn seed_averages_are_arithmetic_means_and_regionwise_schema_complete() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_spec(6).write(data.path()).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::Sgd, &["RGB"]);
    cfg.grid.sgd_loss = vec![floodpix::classifiers::SgdLoss::Hinge];
    cfg.grid.sgd_alpha = vec![0.001];
    cfg.grid.sgd_rebalance = vec![false];
    cfg.search_seeds = vec![0];
    cfg.final_seeds = (0..16).collect();
    let output = run_pipeline(&cfg).unwrap();
    let test = output.report.split(SplitName::Test).unwrap();
    let per_seed: Vec<f64> = test.per_seed.iter().map(|s| s.report.mean.iou).collect();
    assert_eq!(per_seed.len(), 16);
    let arithmetic = per_seed.iter().sum::<f64>() / 16.0;
    assert!((test.averaged.mean.iou - arithmetic).abs() < 1e-12);
    assert!((mean(&per_seed) - arithmetic).abs() < 1e-12);
    // SGD seeds shuffle differently, so the fitted weights differ.
    let model = |k: u64| fs::read(out.path().join(format!("final/models/seed{k}.json"))).unwrap();
    assert_ne!(model(0), model(1));

    let csv = fs::read_to_string(out.path().join("final/test_regionwise.csv")).unwrap();
    let first_cells: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    for s in ["summary:mean", "summary:std", "summary:min", "summary:max", "summary:median"] {
        assert!(first_cells.contains(&s), "{s}");
    }
    // Every emitted metric is recomputable from the emitted per-tile counts.
    for s in &test.per_seed {
        let again = floodpix::metrics::aggregate(&s.tiles, cfg.empty_policy).unwrap();
        assert_eq!(again, s.report);
    }
}

#[test]
fn missing_split_manifest_is_reported() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    small_spec(7).write(data.path()).unwrap();
    fs::remove_file(data.path().join("bolivia_test.json")).unwrap();
    let mut cfg = config(data.path(), out.path(), ModelKind::GaussianNb, &["SAR"]);
    cfg.search_seeds = vec![0];
    let result = run_grid_search(&cfg).unwrap();
    let chosen = select_best(&result.validation_rows(), &SelectionRule::default()).unwrap();
    let err = final_eval(&cfg, &chosen).unwrap_err();
    assert!(matches!(err, HarnessError::MissingSplit { split: SplitName::BoliviaTest, .. }));
}
