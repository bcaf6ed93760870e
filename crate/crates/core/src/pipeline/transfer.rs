//! Train on every `k`-subset of the other experiments, test on the held-out one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::r2;
use super::fine::fine_matrix;
use super::importance::combinations;
use super::{FeatureMode, FineScaleConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::forest::{fit_forest, ForestConfig};
use crate::rng;
use crate::signal::ExperimentRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Feature settings; `feature_mode` is ignored in favour of `modes`.
    pub fine: FineScaleConfig,
    pub modes: Vec<FeatureMode>,
    /// Forest used in every cell; its seed is mixed with the cell index.
    pub forest: ForestConfig,
    /// Training experiments per cell.
    pub train_size: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            fine: FineScaleConfig {
                f_set_hz: vec![100e3, 250e3, 500e3],
                ..Default::default()
            },
            modes: vec![FeatureMode::FreqIndependent, FeatureMode::FreqDependent],
            forest: ForestConfig::default(),
            train_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    pub mode: FeatureMode,
    pub test: String,
    pub test_diameter_um: f64,
    pub train: Vec<String>,
    pub train_diameters_um: Vec<f64>,
    /// Training experiments sharing the test diameter.
    pub same_diameter: usize,
    /// Windows taken from the end of every experiment.
    pub n_windows: usize,
    /// `None` when the held-out targets are constant.
    pub r2: Option<f64>,
}

fn last_rows(m: &FeatureMatrix, n: usize) -> FeatureMatrix {
    let skip = m.len() - n;
    m.filter_rows(|i, _| i >= skip)
}

/// Every `(test, training subset)` cell for each mode, in the order
/// mode, test experiment, lexicographic subset.
pub fn transfer_matrix(
    exps: &[ExperimentRecord],
    cfg: &TransferConfig,
) -> Result<Vec<TransferCell>> {
    if cfg.train_size == 0 || exps.len() < cfg.train_size + 1 {
        return Err(Error::InsufficientExperiments(format!(
            "transfer needs at least {} experiments, got {}",
            cfg.train_size + 1,
            exps.len()
        )));
    }
    let mut cells = Vec::new();
    for &mode in &cfg.modes {
        let fine = FineScaleConfig {
            feature_mode: mode,
            ..cfg.fine.clone()
        };
        let full = exps
            .iter()
            .map(|e| fine_matrix(e, &fine))
            .collect::<Result<Vec<_>>>()?;
        let n_w = full.iter().map(FeatureMatrix::len).min().unwrap_or(0);
        if n_w == 0 {
            return Err(Error::EmptyInput);
        }
        let trimmed: Vec<FeatureMatrix> = full.iter().map(|m| last_rows(m, n_w)).collect();
        let mut jobs = Vec::new();
        for test in 0..exps.len() {
            let others: Vec<usize> = (0..exps.len()).filter(|&i| i != test).collect();
            for combo in combinations(others.len(), cfg.train_size) {
                jobs.push((test, combo.iter().map(|&c| others[c]).collect::<Vec<_>>()));
            }
        }
        let offset = cells.len() as u64;
        let mode_cells = jobs
            .par_iter()
            .enumerate()
            .map(|(j, (test, train))| {
                let x: Vec<Vec<f64>> = train
                    .iter()
                    .flat_map(|&i| trimmed[i].rows.iter().cloned())
                    .collect();
                let y: Vec<f64> = train
                    .iter()
                    .flat_map(|&i| trimmed[i].targets.iter().copied())
                    .collect();
                let forest = ForestConfig {
                    seed: rng::job_seed(cfg.forest.seed, offset + j as u64),
                    ..cfg.forest.clone()
                };
                let model = fit_forest(&x, &y, &forest)?;
                let t = &trimmed[*test];
                let score = match r2(&t.targets, &model.predict_batch(&t.rows)?) {
                    Ok(s) => Some(s),
                    Err(Error::DegenerateTarget) => None,
                    Err(e) => return Err(e),
                };
                let d = exps[*test].diameter_um;
                Ok(TransferCell {
                    mode,
                    test: exps[*test].id.clone(),
                    test_diameter_um: d,
                    train: train.iter().map(|&i| exps[i].id.clone()).collect(),
                    train_diameters_um: train.iter().map(|&i| exps[i].diameter_um).collect(),
                    same_diameter: train.iter().filter(|&&i| exps[i].diameter_um == d).count(),
                    n_windows: n_w,
                    r2: score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cells.extend(mode_cells);
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub mode: FeatureMode,
    /// Mean R² over cells whose training set contains the test diameter.
    pub same_mean: Option<f64>,
    pub same_cells: usize,
    /// Mean R² over cells with no training experiment of the test diameter.
    pub disjoint_mean: Option<f64>,
    pub disjoint_cells: usize,
}

pub fn summarize_transfer(cells: &[TransferCell]) -> Vec<TransferSummary> {
    let mut modes: Vec<FeatureMode> = Vec::new();
    for c in cells {
        if !modes.contains(&c.mode) {
            modes.push(c.mode);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    modes
        .into_iter()
        .map(|mode| {
            let (mut same, mut disjoint) = (Vec::new(), Vec::new());
            for c in cells.iter().filter(|c| c.mode == mode) {
                if let Some(s) = c.r2 {
                    if c.same_diameter > 0 {
                        same.push(s);
                    } else {
                        disjoint.push(s);
                    }
                }
            }
            TransferSummary {
                mode,
                same_mean: mean(&same),
                same_cells: same.len(),
                disjoint_mean: mean(&disjoint),
                disjoint_cells: disjoint.len(),
            }
        })
        .collect()
}
