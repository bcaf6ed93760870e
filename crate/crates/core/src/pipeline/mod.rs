//! Fine- and coarse-scale training and prediction, the combination step,
//! metrics, feature-importance searches and the transfer harness.

pub mod coarse;
pub mod combine;
pub mod eval;
pub mod fine;
pub mod importance;
pub mod transfer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    coarse_keys, freq_independent_keys, EventConfig, FeatureKey, MomentOrder, SliceFeatureSpec,
    SliceValue,
};
use crate::forest::{ForestGrid, ForestModel};
use crate::signal::ExperimentRecord;
use crate::wavelet::WaveletConfig;

pub use coarse::{coarse_matrix, predict_coarse, train_coarse, CoarsePrediction};
pub use combine::{combine, Curve};
pub use eval::{mean_std, pearson, r2};
pub use fine::{
    fine_matrix, leave_one_out, predict_fine, train_fine, train_on_matrix, FinePrediction,
    FoldScore,
};
pub use importance::{
    feature_correlations, importance_single, importance_subsets, subset_r2, SingleImportance,
    SubsetReport, SubsetScore,
};
pub use transfer::{
    summarize_transfer, transfer_matrix, TransferCell, TransferConfig, TransferSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Moments of the raw window.
    #[default]
    FreqIndependent,
    /// Moments of spectrogram slices.
    FreqDependent,
}

impl FeatureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMode::FreqIndependent => "freq_independent",
            FeatureMode::FreqDependent => "freq_dependent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineScaleConfig {
    /// Window width Δt, s.
    pub dt_s: f64,
    pub feature_mode: FeatureMode,
    /// Orders for frequency-independent features.
    pub k_grid: Vec<MomentOrder>,
    /// Slice frequencies for frequency-dependent features, Hz.
    pub f_set_hz: Vec<f64>,
    /// Orders applied to each slice.
    pub slice_k: Vec<MomentOrder>,
    pub slice_value: SliceValue,
    pub wavelet: WaveletConfig,
    pub forest: ForestGrid,
    pub cv_folds: usize,
    pub seed: u64,
    /// Where per-window spectrograms are cached, if anywhere.
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for FineScaleConfig {
    fn default() -> Self {
        Self {
            dt_s: 0.3,
            feature_mode: FeatureMode::FreqIndependent,
            k_grid: MomentOrder::default_grid(),
            f_set_hz: vec![100e3, 250e3, 500e3],
            slice_k: MomentOrder::slice_grid(),
            slice_value: SliceValue::Power,
            wavelet: WaveletConfig::default(),
            forest: ForestGrid::default(),
            cv_folds: 5,
            seed: 0,
            cache_dir: None,
        }
    }
}

impl FineScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "fine window {} s must be positive",
                self.dt_s
            )));
        }
        match self.feature_mode {
            FeatureMode::FreqIndependent if self.k_grid.is_empty() => {
                Err(Error::ConfigInvalid("empty moment grid".into()))
            }
            FeatureMode::FreqDependent if self.f_set_hz.is_empty() || self.slice_k.is_empty() => {
                Err(Error::ConfigInvalid(
                    "empty slice frequency or order set".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn slice_spec(&self, sampling_rate: f64) -> Result<SliceFeatureSpec> {
        SliceFeatureSpec::new(
            sampling_rate,
            &self.f_set_hz,
            &self.slice_k,
            &self.wavelet,
            self.slice_value,
        )
    }

    /// Feature names for an AE trace sampled at `sampling_rate`.
    pub fn keys(&self, sampling_rate: f64) -> Result<Vec<FeatureKey>> {
        Ok(match self.feature_mode {
            FeatureMode::FreqIndependent => freq_independent_keys(&self.k_grid),
            FeatureMode::FreqDependent => self.slice_spec(sampling_rate)?.keys(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseScaleConfig {
    /// Window width ΔT, s.
    pub dt_s: f64,
    /// Start-to-start spacing of training windows, s.
    pub stride_s: f64,
    pub k_grid: Vec<MomentOrder>,
    pub events: EventConfig,
    pub forest: ForestGrid,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for CoarseScaleConfig {
    fn default() -> Self {
        Self {
            dt_s: 50.0,
            stride_s: 5.0,
            k_grid: MomentOrder::default_grid(),
            events: EventConfig::default(),
            forest: ForestGrid::default(),
            cv_folds: 5,
            seed: 0,
        }
    }
}

impl CoarseScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0 && self.stride_s > 0.0 && self.stride_s <= self.dt_s) {
            return Err(Error::ConfigInvalid(format!(
                "coarse window {} s and stride {} s need 0 < stride <= window",
                self.dt_s, self.stride_s
            )));
        }
        self.events.validate()
    }

    pub fn keys(&self) -> Vec<FeatureKey> {
        coarse_keys(&self.k_grid)
    }
}

/// Fine, coarse and combined predictions for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    pub experiment: String,
    pub fine: FinePrediction,
    pub coarse: CoarsePrediction,
    /// Number of anchors the combined curve passes through.
    pub n_anchors: usize,
    pub combined: Curve,
}

impl PredictionSeries {
    /// `(t, F_ground, F_pred)` at every knot of the combined curve.
    pub fn rows(&self, exp: &ExperimentRecord) -> Vec<(f64, f64, f64)> {
        self.combined
            .times
            .iter()
            .zip(&self.combined.values)
            .map(|(&t, &f)| (t, exp.force.value_at(t).unwrap_or(f64::NAN), f))
            .collect()
    }
}

/// Predict fine increments and coarse anchors, then combine them.
pub fn predict_series(
    fine_model: &ForestModel,
    coarse_model: &ForestModel,
    exp: &ExperimentRecord,
    fine_cfg: &FineScaleConfig,
    coarse_cfg: &CoarseScaleConfig,
) -> Result<PredictionSeries> {
    let fine = predict_fine(fine_model, exp, fine_cfg)?;
    let coarse = predict_coarse(coarse_model, exp, coarse_cfg)?;
    let origin = fine.curve.start();
    let tol = 1e-9 * coarse_cfg.dt_s.max(fine.curve.end().abs());
    let n_anchors = coarse
        .times
        .iter()
        .take_while(|&&t| t <= fine.curve.end() + tol)
        .count();
    if n_anchors < coarse.times.len() {
        log::warn!(
            "{}: fine curve ends at {:.3} s, using {} of {} coarse anchors",
            exp.id,
            fine.curve.end(),
            n_anchors,
            coarse.times.len()
        );
    }
    let combined = combine(
        &fine.curve,
        &coarse.values[..n_anchors],
        coarse_cfg.dt_s,
        origin,
    )?;
    Ok(PredictionSeries {
        experiment: exp.id.clone(),
        fine,
        coarse,
        n_anchors,
        combined,
    })
}

/// Summary scores written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature_mode: FeatureMode,
    pub dt_s: f64,
    pub folds: Vec<FoldScore>,
    pub mean_r2: f64,
    pub std_r2: f64,
    /// Pearson correlation of each feature with the target over all rows.
    pub pearson: Vec<(FeatureKey, Option<f64>)>,
}
