//! Single-feature and exhaustive-subset importance, scored by
//! leave-one-experiment-out R² with one frozen forest configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{pearson, r2};
use crate::error::{Error, Result};
use crate::features::{FeatureKey, FeatureMatrix};
use crate::forest::{fit_forest, ForestConfig};

/// Row indices of each experiment, in first-appearance order.
struct Groups {
    ids: Vec<String>,
    rows: Vec<Vec<usize>>,
}

impl Groups {
    fn new(m: &FeatureMatrix) -> Result<Self> {
        let ids = m.experiments();
        if ids.len() < 2 {
            return Err(Error::InsufficientExperiments(format!(
                "importance needs rows from at least 2 experiments, got {}",
                ids.len()
            )));
        }
        let rows = ids
            .iter()
            .map(|id| {
                (0..m.len())
                    .filter(|&i| &m.meta[i].experiment == id)
                    .collect()
            })
            .collect();
        Ok(Self { ids, rows })
    }
}

/// Mean held-out R² over experiments using only columns `cols`. Experiments
/// whose targets are constant are left out of the mean.
fn loeo_r2(
    m: &FeatureMatrix,
    groups: &Groups,
    cols: &[usize],
    forest: &ForestConfig,
) -> Result<f64> {
    let pick = |i: usize| -> Vec<f64> { cols.iter().map(|&c| m.rows[i][c]).collect() };
    let mut sum = 0.0;
    let mut used = 0;
    for (g, test) in groups.rows.iter().enumerate() {
        let train: Vec<usize> = groups
            .rows
            .iter()
            .enumerate()
            .filter(|&(h, _)| h != g)
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        let x: Vec<Vec<f64>> = train.iter().map(|&i| pick(i)).collect();
        let y: Vec<f64> = train.iter().map(|&i| m.targets[i]).collect();
        let model = fit_forest(&x, &y, forest)?;
        let xt: Vec<Vec<f64>> = test.iter().map(|&i| pick(i)).collect();
        let yt: Vec<f64> = test.iter().map(|&i| m.targets[i]).collect();
        match r2(&yt, &model.predict_batch(&xt)?) {
            Ok(s) => {
                sum += s;
                used += 1;
            }
            Err(Error::DegenerateTarget) | Err(Error::LengthMismatch(_)) => {
                log::warn!("{}: held-out target is degenerate; skipped", groups.ids[g]);
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateTarget);
    }
    Ok(sum / used as f64)
}

/// Leave-one-experiment-out R² of a forest restricted to columns `cols`.
pub fn subset_r2(m: &FeatureMatrix, forest: &ForestConfig, cols: &[usize]) -> Result<f64> {
    if cols.is_empty() || cols.iter().any(|&c| c >= m.n_features()) {
        return Err(Error::ConfigInvalid(format!(
            "column subset {cols:?} is invalid for {} features",
            m.n_features()
        )));
    }
    loeo_r2(m, &Groups::new(m)?, cols, forest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleImportance {
    pub feature: FeatureKey,
    /// Correlation with the target; `None` for a constant feature.
    pub pearson: Option<f64>,
    pub r2: f64,
}

pub fn importance_single(
    m: &FeatureMatrix,
    forest: &ForestConfig,
) -> Result<Vec<SingleImportance>> {
    if m.len() < 2 {
        return Err(Error::TooFewRows {
            rows: m.len(),
            folds: 2,
        });
    }
    let groups = Groups::new(m)?;
    (0..m.n_features())
        .into_par_iter()
        .map(|c| {
            Ok(SingleImportance {
                feature: m.keys[c],
                pearson: pearson(&m.column(c), &m.targets).ok(),
                r2: loeo_r2(m, &groups, &[c], forest)?,
            })
        })
        .collect()
}

/// Pairwise Pearson correlations between feature columns.
pub fn feature_correlations(m: &FeatureMatrix) -> Vec<Vec<Option<f64>>> {
    let cols: Vec<Vec<f64>> = (0..m.n_features()).map(|c| m.column(c)).collect();
    cols.iter()
        .map(|a| cols.iter().map(|b| pearson(a, b).ok()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub features: Vec<FeatureKey>,
    pub columns: Vec<usize>,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    /// `table[n-1]` lists every subset of size `n` in lexicographic order.
    pub table: Vec<Vec<SubsetScore>>,
    /// Highest-scoring subset per size; ties go to the earlier subset.
    pub best: Vec<SubsetScore>,
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Score every subset of size `1..=n_max`; fails before any fitting if a
/// size has more than `cap` subsets.
pub fn importance_subsets(
    m: &FeatureMatrix,
    forest: &ForestConfig,
    n_max: usize,
    cap: u128,
) -> Result<SubsetReport> {
    let p = m.n_features();
    let n_max = n_max.min(p);
    for n in 1..=n_max {
        let count = binomial(p, n);
        if count > cap {
            return Err(Error::CombinatorialLimit { count, cap });
        }
    }
    let groups = Groups::new(m)?;
    let mut table = Vec::with_capacity(n_max);
    let mut best = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let scores = combinations(p, n)
            .into_par_iter()
            .map(|cols| {
                Ok(SubsetScore {
                    features: cols.iter().map(|&c| m.keys[c]).collect(),
                    r2: loeo_r2(m, &groups, &cols, forest)?,
                    columns: cols,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let top = scores
            .iter()
            .fold(None::<&SubsetScore>, |b, s| match b {
                Some(b) if b.r2 >= s.r2 => Some(b),
                _ => Some(s),
            })
            .cloned()
            .ok_or(Error::EmptyInput)?;
        table.push(scores);
        best.push(top);
    }
    Ok(SubsetReport { table, best })
}
