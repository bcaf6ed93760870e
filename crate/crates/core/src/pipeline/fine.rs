//! Fine-scale model: force increments over short windows.

use std::borrow::Cow;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::combine::Curve;
use super::eval::r2;
use super::{FeatureMode, FineScaleConfig};
use crate::error::{Error, Result};
use crate::features::{
    freq_dependent_features, freq_dependent_from_spectrogram, freq_independent_features,
    FeatureMatrix, RowMeta, SliceFeatureSpec, TargetKind,
};
use crate::forest::{fit_forest, grid_search_cv, ForestConfig, ForestGrid, ForestModel};
use crate::signal::{force_increment, partition_windows, ExperimentRecord, TimeWindow};
use crate::wavelet;

/// The record itself if its AE already has unit mean absolute amplitude,
/// otherwise a normalised copy.
pub(crate) fn prepared(exp: &ExperimentRecord) -> Result<Cow<'_, ExperimentRecord>> {
    if (exp.ae.mean_abs() - 1.0).abs() <= 1e-9 {
        Ok(Cow::Borrowed(exp))
    } else {
        Ok(Cow::Owned(exp.normalized()?))
    }
}

fn window_features(
    exp: &ExperimentRecord,
    w: &TimeWindow,
    cfg: &FineScaleConfig,
    spec: Option<&SliceFeatureSpec>,
) -> Result<Vec<f64>> {
    let x = exp.ae.window(w);
    match (cfg.feature_mode, spec) {
        (FeatureMode::FreqDependent, Some(spec)) => match &cfg.cache_dir {
            Some(dir) => {
                let path = cache_path(dir, exp, w);
                if !path.exists() {
                    let s = wavelet::cwt(x, &spec.grid, &spec.wavelet, w.t_start)?;
                    wavelet::write_cache(&path, &s)?;
                }
                // always read back so cold and warm runs see the same f32 values
                let s = wavelet::read_cache(&path)?;
                freq_dependent_from_spectrogram(&s, spec)
            }
            None => freq_dependent_features(x, spec),
        },
        _ => freq_independent_features(x, &cfg.k_grid),
    }
}

fn cache_path(dir: &std::path::Path, exp: &ExperimentRecord, w: &TimeWindow) -> PathBuf {
    let id: String = exp
        .id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(id)
        .join(format!("w{:06}_{:.0}us.spec", w.index, w.width * 1e6))
}

/// One row per fine window, target `ΔF = F(t_end) - F(t_start)`.
pub fn fine_matrix(exp: &ExperimentRecord, cfg: &FineScaleConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let exp = prepared(exp)?;
    let windows = partition_windows(exp.common_span(), cfg.dt_s)?;
    let spec = match cfg.feature_mode {
        FeatureMode::FreqDependent => Some(cfg.slice_spec(exp.ae.sampling_rate)?),
        FeatureMode::FreqIndependent => None,
    };
    if let Some(dir) = &cfg.cache_dir {
        let path = cache_path(dir, &exp, &windows[0]);
        let parent = path.parent().unwrap();
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let rows = windows
        .par_iter()
        .map(|w| {
            Ok((
                window_features(&exp, w, cfg, spec.as_ref())?,
                force_increment(&exp.force, w)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = FeatureMatrix::new(cfg.keys(exp.ae.sampling_rate)?, TargetKind::Increment);
    for (w, (row, target)) in windows.iter().zip(rows) {
        m.push(
            row,
            target,
            RowMeta {
                experiment: exp.id.clone(),
                window: w.index,
                t_start: w.t_start,
                t_end: w.t_end,
            },
        );
    }
    Ok(m)
}

/// Grid-search on `m`, then refit the winner on every row.
pub fn train_on_matrix(
    m: &FeatureMatrix,
    grid: &ForestGrid,
    folds: usize,
    seed: u64,
) -> Result<ForestModel> {
    let configs = grid.configs(seed);
    let best = if configs.len() == 1 {
        configs[0].clone()
    } else {
        let cv = grid_search_cv(&m.rows, &m.targets, &configs, folds)?;
        log::info!("grid search picked {:?}", cv.best);
        cv.best
    };
    Ok(fit_forest(&m.rows, &m.targets, &best)?.with_keys(m.keys.clone()))
}

fn concat(parts: Vec<FeatureMatrix>) -> Result<FeatureMatrix> {
    let mut it = parts.into_iter();
    let mut m = it.next().ok_or(Error::InsufficientExperiments(
        "no training experiments".into(),
    ))?;
    for p in it {
        m.extend(p)?;
    }
    Ok(m)
}

pub fn train_fine(train: &[ExperimentRecord], cfg: &FineScaleConfig) -> Result<ForestModel> {
    if train.is_empty() {
        return Err(Error::InsufficientExperiments(
            "fine training needs at least one experiment".into(),
        ));
    }
    let parts = train
        .iter()
        .map(|e| fine_matrix(e, cfg))
        .collect::<Result<Vec<_>>>()?;
    train_on_matrix(&concat(parts)?, &cfg.forest, cfg.cv_folds, cfg.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinePrediction {
    pub windows: Vec<RowMeta>,
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
    /// `F(t0)` plus the running sum of predicted increments, knots at window edges.
    pub curve: Curve,
}

impl FinePrediction {
    pub fn r2(&self) -> Result<f64> {
        r2(&self.truth, &self.predicted)
    }
}

/// Predict increments for the rows of `m` and integrate from `f0`.
pub fn predict_matrix(model: &ForestModel, m: &FeatureMatrix, f0: f64) -> Result<FinePrediction> {
    if !model.feature_keys.is_empty() && model.feature_keys != m.keys {
        return Err(Error::ConfigInvalid(format!(
            "model expects features [{}] but the data has [{}]",
            join(&model.feature_keys),
            join(&m.keys)
        )));
    }
    if m.is_empty() {
        return Err(Error::EmptyInput);
    }
    let predicted = model.predict_batch(&m.rows)?;
    let mut times = vec![m.meta[0].t_start];
    let mut values = vec![f0];
    for (meta, p) in m.meta.iter().zip(&predicted) {
        times.push(meta.t_end);
        values.push(values.last().unwrap() + p);
    }
    Ok(FinePrediction {
        windows: m.meta.clone(),
        predicted,
        truth: m.targets.clone(),
        curve: Curve::new(times, values)?,
    })
}

fn join(keys: &[crate::features::FeatureKey]) -> String {
    keys.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
}

pub fn predict_fine(
    model: &ForestModel,
    exp: &ExperimentRecord,
    cfg: &FineScaleConfig,
) -> Result<FinePrediction> {
    let m = fine_matrix(exp, cfg)?;
    let t0 = m.meta.first().ok_or(Error::EmptyInput)?.t_start;
    let f0 = exp.force.value_at(t0).ok_or(Error::WindowOutOfRange {
        t_start: t0,
        t_end: t0,
        span_start: exp.force.span().0,
        span_end: exp.force.span().1,
    })?;
    predict_matrix(model, &m, f0)
}

/// Held-out score of one leave-one-experiment-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub experiment: String,
    pub r2: f64,
    pub n_test: usize,
    pub config: ForestConfig,
}

/// Leave-one-experiment-out over prebuilt per-experiment matrices.
pub fn leave_one_out(
    matrices: &[FeatureMatrix],
    grid: &ForestGrid,
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldScore>> {
    if matrices.len() < 2 {
        return Err(Error::InsufficientExperiments(format!(
            "leave-one-out needs at least 2 experiments, got {}",
            matrices.len()
        )));
    }
    let mut out = Vec::with_capacity(matrices.len());
    for (i, test) in matrices.iter().enumerate() {
        let train = concat(
            matrices
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, m)| m.clone())
                .collect(),
        )?;
        let model = train_on_matrix(&train, grid, folds, seed)?;
        let pred = model.predict_batch(&test.rows)?;
        out.push(FoldScore {
            experiment: test
                .meta
                .first()
                .map(|m| m.experiment.clone())
                .unwrap_or_default(),
            r2: r2(&test.targets, &pred)?,
            n_test: test.len(),
            config: model.config.clone(),
        });
    }
    Ok(out)
}
