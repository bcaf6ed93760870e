//! Coarse-scale model: absolute force at the end of long windows.

use rayon::prelude::*;

use super::fine::{prepared, train_on_matrix};
use super::CoarseScaleConfig;
use crate::error::{Error, Result};
use crate::features::{
    coarse_from_accumulator, detect_ae_events, EventList, FeatureMatrix, MomentAccumulator,
    RowMeta, TargetKind,
};
use crate::forest::ForestModel;
use crate::signal::{partition_windows, sliding_windows, ExperimentRecord, TimeWindow};

/// Rows for windows of `cfg.dt_s` whose starts advance by `stride`; the
/// target is the force at each window end.
///
/// The trace is cut into blocks of one stride and every window's moments
/// are merged from its blocks when the width is a whole number of strides.
fn coarse_rows(
    exp: &ExperimentRecord,
    cfg: &CoarseScaleConfig,
    stride: f64,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let exp = prepared(exp)?;
    let span = exp.common_span();
    let windows = sliding_windows(span, cfg.dt_s, stride)?;
    let events = detect_ae_events(&exp.ae, &cfg.events)?;
    let ratio = cfg.dt_s / stride;
    let per = ratio.round() as usize;
    let rows: Vec<Vec<f64>> = if (ratio - per as f64).abs() < 1e-9 * ratio {
        let n_blocks = windows.len() + per - 1;
        let blocks: Vec<MomentAccumulator> = (0..n_blocks)
            .into_par_iter()
            .map(|j| {
                let a = exp.ae.index_at(span.0 + j as f64 * stride);
                let b = exp.ae.index_at(span.0 + (j + 1) as f64 * stride).max(a);
                let mut acc = MomentAccumulator::new(&cfg.k_grid);
                acc.push_slice(&exp.ae.samples[a..b]);
                acc
            })
            .collect();
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| {
                let mut acc = blocks[i].clone();
                for b in &blocks[i + 1..i + per] {
                    acc.merge(b);
                }
                row(&acc, &events, w, exp.diameter_um, cfg)
            })
            .collect::<Result<_>>()?
    } else {
        windows
            .par_iter()
            .map(|w| {
                let mut acc = MomentAccumulator::new(&cfg.k_grid);
                acc.push_slice(exp.ae.window(w));
                row(&acc, &events, w, exp.diameter_um, cfg)
            })
            .collect::<Result<_>>()?
    };
    let mut m = FeatureMatrix::new(cfg.keys(), TargetKind::Force);
    for (w, r) in windows.iter().zip(rows) {
        let f = exp
            .force
            .value_at(w.t_end)
            .ok_or_else(|| Error::WindowOutOfRange {
                t_start: w.t_start,
                t_end: w.t_end,
                span_start: exp.force.span().0,
                span_end: exp.force.span().1,
            })?;
        m.push(
            r,
            f,
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

fn row(
    acc: &MomentAccumulator,
    events: &EventList,
    w: &TimeWindow,
    diameter_um: f64,
    cfg: &CoarseScaleConfig,
) -> Result<Vec<f64>> {
    coarse_from_accumulator(
        acc,
        events.in_range(w.t_start, w.t_end),
        diameter_um,
        &cfg.k_grid,
    )
}

/// Overlapping training rows at the configured stride.
pub fn coarse_matrix(exp: &ExperimentRecord, cfg: &CoarseScaleConfig) -> Result<FeatureMatrix> {
    coarse_rows(exp, cfg, cfg.stride_s)
}

/// Experiments shorter than one coarse window are skipped with a warning.
pub fn train_coarse(train: &[ExperimentRecord], cfg: &CoarseScaleConfig) -> Result<ForestModel> {
    cfg.validate()?;
    let mut all: Option<FeatureMatrix> = None;
    for e in train {
        if e.duration() < cfg.dt_s {
            log::warn!(
                "{}: {:.3} s is shorter than the coarse window; skipped",
                e.id,
                e.duration()
            );
            continue;
        }
        let m = coarse_matrix(e, cfg)?;
        match &mut all {
            Some(a) => a.extend(m)?,
            None => all = Some(m),
        }
    }
    let Some(all) = all else {
        let longest = train.iter().map(|e| e.duration()).fold(0.0, f64::max);
        return Err(Error::SpanTooShort {
            span: longest,
            width: cfg.dt_s,
        });
    };
    train_on_matrix(&all, &cfg.forest, cfg.cv_folds, cfg.seed)
}

/// Coarse anchors at `t0 + nΔT`, `n = 1..=N_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePrediction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub truth: Vec<f64>,
}

/// Non-overlapping windows only.
pub fn predict_coarse(
    model: &ForestModel,
    exp: &ExperimentRecord,
    cfg: &CoarseScaleConfig,
) -> Result<CoarsePrediction> {
    partition_windows(exp.common_span(), cfg.dt_s)?;
    let m = coarse_rows(exp, cfg, cfg.dt_s)?;
    if !model.feature_keys.is_empty() && model.feature_keys != m.keys {
        return Err(Error::ArityMismatch {
            expected: model.feature_keys.len(),
            got: m.keys.len(),
        });
    }
    Ok(CoarsePrediction {
        times: m.meta.iter().map(|r| r.t_end).collect(),
        values: model.predict_batch(&m.rows)?,
        truth: m.targets,
    })
}
