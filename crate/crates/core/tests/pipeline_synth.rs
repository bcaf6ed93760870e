//! Pipeline stages run against small synthetic experiments.

use aeforce::features::FeatureMatrix;
use aeforce::forest::{ForestConfig, ForestGrid, MaxFeatures};
use aeforce::pipeline::{
    fine_matrix, importance::binomial, importance_single, importance_subsets, predict_series,
    subset_r2, summarize_transfer, train_coarse, train_fine, transfer_matrix, CoarseScaleConfig,
    FeatureMode, FineScaleConfig, TransferConfig,
};
use aeforce::signal::ExperimentRecord;
use aeforce::synth::{generate_experiment, SynthConfig};

fn experiment(id: &str, diameter_um: f64, duration_s: f64, seed: u64) -> ExperimentRecord {
    let cfg = SynthConfig {
        id: id.into(),
        diameter_um,
        duration_s,
        seed,
        ..SynthConfig::default()
    }
    .time_compressed(100.0);
    generate_experiment(&cfg).unwrap().0
}

fn small_forest(seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: 10,
        min_samples_leaf: 5,
        seed,
        ..ForestConfig::default()
    }
}

fn small_grid() -> ForestGrid {
    ForestGrid {
        n_trees: vec![10],
        max_depth: vec![Some(10)],
        min_samples_leaf: vec![5],
        max_features: vec![MaxFeatures::Fraction(1.0 / 3.0)],
        bootstrap: true,
    }
}

fn pooled(exps: &[ExperimentRecord], cfg: &FineScaleConfig) -> FeatureMatrix {
    let mut it = exps.iter().map(|e| fine_matrix(e, cfg).unwrap());
    let mut m = it.next().unwrap();
    for p in it {
        m.extend(p).unwrap();
    }
    m
}

#[test]
fn transfer_cells_cover_every_composition() {
    let exps: Vec<ExperimentRecord> = [
        (8.0, 30.0),
        (8.0, 36.0),
        (16.0, 30.0),
        (16.0, 33.0),
        (32.0, 30.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(d, len))| experiment(&format!("e{i}"), d, len, i as u64))
    .collect();
    let cfg = TransferConfig {
        forest: small_forest(3),
        train_size: 2,
        ..TransferConfig::default()
    };
    let cells = transfer_matrix(&exps, &cfg).unwrap();
    // 2 modes x 5 test experiments x C(4, 2) training pairs
    assert_eq!(cells.len(), 2 * 5 * 6);
    let n_w = cells[0].n_windows;
    assert_eq!(n_w, 100, "shortest experiment has 30 s / 0.3 s windows");
    for c in &cells {
        assert_eq!(c.n_windows, n_w);
        assert!(!c.train.contains(&c.test));
        let same = c
            .train_diameters_um
            .iter()
            .filter(|&&d| d == c.test_diameter_um)
            .count();
        assert_eq!(c.same_diameter, same);
    }
    let summary = summarize_transfer(&cells);
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0].mode, FeatureMode::FreqIndependent);
    for s in &summary {
        let scored = cells
            .iter()
            .filter(|c| c.mode == s.mode && c.r2.is_some())
            .count();
        assert_eq!(s.same_cells + s.disjoint_cells, scored);
        assert!(s.disjoint_cells > 0 && s.same_cells > 0);
    }
    assert_eq!(
        transfer_matrix(&exps, &cfg).unwrap(),
        cells,
        "reruns are identical"
    );
}

#[test]
fn transfer_needs_enough_experiments() {
    let exps = vec![experiment("a", 8.0, 10.0, 1), experiment("b", 8.0, 10.0, 2)];
    let cfg = TransferConfig {
        train_size: 2,
        ..TransferConfig::default()
    };
    assert!(matches!(
        transfer_matrix(&exps, &cfg),
        Err(aeforce::Error::InsufficientExperiments(_))
    ));
}

#[test]
fn importance_tables_are_complete() {
    let exps: Vec<ExperimentRecord> = (0..3)
        .map(|i| experiment(&format!("e{i}"), 8.0, 30.0, 10 + i))
        .collect();
    let m = pooled(&exps, &FineScaleConfig::default());
    let p = m.n_features();
    assert_eq!(p, 11);
    let forest = small_forest(5);

    let single = importance_single(&m, &forest).unwrap();
    assert_eq!(single.len(), p);
    for (s, k) in single.iter().zip(&m.keys) {
        assert_eq!(s.feature, *k);
    }

    let report = importance_subsets(&m, &forest, 2, 1000).unwrap();
    assert_eq!(report.table.len(), 2);
    for (n, row) in report.table.iter().enumerate() {
        assert_eq!(row.len() as u128, binomial(p, n + 1));
        let best = row.iter().map(|s| s.r2).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.best[n].r2, best);
    }
    // size-1 subsets and single-feature scores use the same folds and forest
    for (s, row) in single.iter().zip(&report.table[0]) {
        assert_eq!(s.r2, row.r2);
    }
    let pair = &report.table[1][0];
    assert_eq!(subset_r2(&m, &forest, &pair.columns).unwrap(), pair.r2);

    assert!(matches!(
        importance_subsets(&m, &forest, 3, 100),
        Err(aeforce::Error::CombinatorialLimit {
            count: 165,
            cap: 100
        })
    ));
}

#[test]
fn combined_prediction_hits_coarse_anchors() {
    let train: Vec<ExperimentRecord> = (0..3)
        .map(|i| experiment(&format!("t{i}"), 8.0, 160.0, 20 + i))
        .collect();
    let test = experiment("held-out", 8.0, 160.0, 99);
    let fine_cfg = FineScaleConfig {
        forest: small_grid(),
        ..FineScaleConfig::default()
    };
    let coarse_cfg = CoarseScaleConfig {
        forest: small_grid(),
        ..CoarseScaleConfig::default()
    };
    let fine = train_fine(&train, &fine_cfg).unwrap();
    let coarse = train_coarse(&train, &coarse_cfg).unwrap();
    let s = predict_series(&fine, &coarse, &test, &fine_cfg, &coarse_cfg).unwrap();
    assert_eq!(s.n_anchors, 3);
    let origin = s.combined.start();
    for n in 0..s.n_anchors {
        let t = origin + (n + 1) as f64 * coarse_cfg.dt_s;
        let a = s.coarse.values[n];
        assert!((s.combined.eval(t) - a).abs() <= 1e-9 * a.abs().max(1.0));
    }
    assert!(s.fine.r2().unwrap() > 0.5);
    let rows = s.rows(&test);
    assert_eq!(rows.len(), s.combined.times.len());
    assert!(rows.iter().all(|r| r.1.is_finite()));
}
