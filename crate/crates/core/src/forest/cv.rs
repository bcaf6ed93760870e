//! Grid search over forest configurations with contiguous-block k-fold CV.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_forest, ForestConfig, MaxFeatures};
use crate::error::{Error, Result};
use crate::pipeline::eval::r2;

/// Cartesian hyperparameter grid; expands in field order with the last
/// field varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_leaf: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    pub bootstrap: bool,
}

impl Default for ForestGrid {
    /// `n_trees ∈ {100, 300}`, `max_depth ∈ {∞, 12}`, `min_samples_leaf ∈ {1, 2, 5, 10}`,
    /// `max_features ∈ {1/3, sqrt, 1}`, bootstrap on.
    fn default() -> Self {
        Self {
            n_trees: vec![100, 300],
            max_depth: vec![None, Some(12)],
            min_samples_leaf: vec![1, 2, 5, 10],
            max_features: vec![
                MaxFeatures::Fraction(1.0 / 3.0),
                MaxFeatures::Sqrt,
                MaxFeatures::Fraction(1.0),
            ],
            bootstrap: true,
        }
    }
}

impl ForestGrid {
    /// A grid with exactly one entry.
    pub fn single(cfg: &ForestConfig) -> Self {
        Self {
            n_trees: vec![cfg.n_trees],
            max_depth: vec![cfg.max_depth],
            min_samples_leaf: vec![cfg.min_samples_leaf],
            max_features: vec![cfg.max_features],
            bootstrap: cfg.bootstrap,
        }
    }

    pub fn configs(&self, seed: u64) -> Vec<ForestConfig> {
        let mut grid = Vec::new();
        for &n_trees in &self.n_trees {
            for &max_depth in &self.max_depth {
                for &min_samples_leaf in &self.min_samples_leaf {
                    for &max_features in &self.max_features {
                        grid.push(ForestConfig {
                            n_trees,
                            max_depth,
                            min_samples_leaf,
                            max_features,
                            bootstrap: self.bootstrap,
                            seed,
                            oob_score: false,
                        });
                    }
                }
            }
        }
        grid
    }
}

pub fn default_grid(seed: u64) -> Vec<ForestConfig> {
    ForestGrid::default().configs(seed)
}

/// `[start, end)` row ranges of `folds` contiguous blocks; sizes differ by at most one.
pub fn fold_bounds(n: usize, folds: usize) -> Vec<(usize, usize)> {
    let base = n / folds;
    let extra = n % folds;
    let mut start = 0;
    (0..folds)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let b = (start, start + len);
            start += len;
            b
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best: ForestConfig,
    /// Mean validation R² per grid entry, in grid order.
    pub scores: Vec<f64>,
}

/// Pick the configuration with the highest mean validation R². Ties go to
/// fewer trees, then shallower depth, then earlier grid position. Folds
/// whose validation targets are constant are left out of the mean.
pub fn grid_search_cv(
    x: &[Vec<f64>],
    y: &[f64],
    grid: &[ForestConfig],
    folds: usize,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::ConfigInvalid("empty hyperparameter grid".into()));
    }
    if folds < 2 || y.len() < folds {
        return Err(Error::TooFewRows {
            rows: y.len(),
            folds,
        });
    }
    if grid.len() == 1 {
        return Ok(CvResult {
            best: grid[0].clone(),
            scores: vec![cv_score(x, y, &grid[0], folds)?],
        });
    }
    let scores = grid
        .par_iter()
        .map(|cfg| cv_score(x, y, cfg, folds))
        .collect::<Result<Vec<_>>>()?;
    let depth_key = |c: &ForestConfig| c.max_depth.unwrap_or(usize::MAX);
    let mut best = 0;
    for i in 1..grid.len() {
        let (a, b) = (&grid[i], &grid[best]);
        let better = scores[i] > scores[best]
            || (scores[i] == scores[best] && (a.n_trees, depth_key(a)) < (b.n_trees, depth_key(b)));
        if better {
            best = i;
        }
    }
    Ok(CvResult {
        best: grid[best].clone(),
        scores,
    })
}

fn cv_score(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, folds: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut used = 0;
    for (a, b) in fold_bounds(y.len(), folds) {
        let (xt, yt): (Vec<Vec<f64>>, Vec<f64>) = (0..y.len())
            .filter(|&i| i < a || i >= b)
            .map(|i| (x[i].clone(), y[i]))
            .unzip();
        let m = fit_forest(&xt, &yt, cfg)?;
        let pred = m.predict_batch(&x[a..b])?;
        match r2(&y[a..b], &pred) {
            Ok(s) => {
                sum += s;
                used += 1;
            }
            Err(Error::DegenerateTarget) | Err(Error::LengthMismatch(_)) => {
                log::warn!("fold [{a}, {b}) has a degenerate validation target; skipped");
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateTarget);
    }
    Ok(sum / used as f64)
}
