//! Paired AE/force traces, normalisation and time windowing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared pillar diameters in µm.
pub const DECLARED_DIAMETERS_UM: [f64; 3] = [8.0, 16.0, 32.0];

pub const DEFAULT_AE_SAMPLING_RATE_HZ: f64 = 2.5e6;
pub const DEFAULT_FORCE_SAMPLING_RATE_HZ: f64 = 200.0;
pub const DEFAULT_PLATEN_VELOCITY_NM_S: f64 = 10.0;
pub const DEFAULT_SPRING_CONSTANT_MN_UM: f64 = 10.0;

/// Relative slack used when dividing a span into windows, so that
/// e.g. 3.0 s / 0.3 s yields 10 windows despite rounding.
const WINDOW_SLACK: f64 = 1e-9;

/// Acoustic-emission voltage trace sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AeTrace {
    pub samples: Vec<f64>,
    /// Hz.
    pub sampling_rate: f64,
    /// Time of the first sample on the clock shared with the force trace, s.
    pub t0: f64,
}

impl AeTrace {
    pub fn new(samples: Vec<f64>, sampling_rate: f64, t0: f64) -> Result<Self> {
        if !(sampling_rate > 0.0) || !sampling_rate.is_finite() {
            return Err(Error::InvalidData(format!(
                "AE sampling rate must be positive, got {sampling_rate}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        Ok(Self {
            samples,
            sampling_rate,
            t0,
        })
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sampling_rate
    }

    /// Time just past the last sample.
    pub fn t_end(&self) -> f64 {
        self.t0 + self.samples.len() as f64 / self.sampling_rate
    }

    pub fn mean_abs(&self) -> f64 {
        mean_abs(&self.samples)
    }

    /// Sample index closest to time `t`, clamped to `0..=len`.
    pub fn index_at(&self, t: f64) -> usize {
        let idx = ((t - self.t0) * self.sampling_rate).round();
        idx.clamp(0.0, self.samples.len() as f64) as usize
    }

    /// Samples falling in `[w.t_start, w.t_end)`. Adjacent windows share
    /// their boundary index, so a tiling of windows tiles the samples.
    pub fn window(&self, w: &TimeWindow) -> &[f64] {
        let a = self.index_at(w.t_start);
        let b = self.index_at(w.t_end).max(a);
        &self.samples[a..b]
    }
}

fn mean_abs(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
}

/// Force trace, `(t, F)` pairs with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceTrace {
    /// s.
    pub times: Vec<f64>,
    /// mN.
    pub values: Vec<f64>,
    /// Hz.
    pub sampling_rate: f64,
}

impl ForceTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>, sampling_rate: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidData(format!(
                "force trace has {} timestamps but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::InvalidData("force trace is empty".into()));
        }
        if !(sampling_rate > 0.0) {
            return Err(Error::InvalidData(format!(
                "force sampling rate must be positive, got {sampling_rate}"
            )));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(format!(
                "force timestamps not strictly increasing at row {}",
                i + 1
            )));
        }
        Ok(Self {
            times,
            values,
            sampling_rate,
        })
    }

    /// Regularly sampled trace starting at `t0`.
    pub fn from_uniform(values: Vec<f64>, sampling_rate: f64, t0: f64) -> Result<Self> {
        let times = (0..values.len())
            .map(|i| t0 + i as f64 / sampling_rate)
            .collect();
        Self::new(times, values, sampling_rate)
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Zero-order hold: value of the last sample at or before `t`.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let tol = WINDOW_SLACK * t.abs().max(1.0);
        let n = self.times.partition_point(|&ti| ti <= t + tol);
        if n == 0 {
            None
        } else {
            Some(self.values[n - 1])
        }
    }
}

/// One compression test.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub id: String,
    /// µm.
    pub diameter_um: f64,
    pub ae: AeTrace,
    pub force: ForceTrace,
    pub platen_velocity_nm_s: f64,
    pub spring_constant_mn_um: f64,
    /// Set for pillars outside the declared 8/16/32 µm sizes.
    pub unseen_size: bool,
}

impl ExperimentRecord {
    pub fn new(
        id: impl Into<String>,
        diameter_um: f64,
        ae: AeTrace,
        force: ForceTrace,
    ) -> Result<Self> {
        let rec = Self {
            id: id.into(),
            diameter_um,
            ae,
            force,
            platen_velocity_nm_s: DEFAULT_PLATEN_VELOCITY_NM_S,
            spring_constant_mn_um: DEFAULT_SPRING_CONSTANT_MN_UM,
            unseen_size: false,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ae.samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        let declared = DECLARED_DIAMETERS_UM
            .iter()
            .any(|d| (d - self.diameter_um).abs() < 1e-9);
        if !declared && !self.unseen_size {
            return Err(Error::InvalidData(format!(
                "{}: diameter {} µm is not one of 8/16/32 and the record is not flagged as unseen-size",
                self.id, self.diameter_um
            )));
        }
        let (a, b) = self.common_span();
        if b <= a {
            return Err(Error::InvalidData(format!(
                "{}: AE and force traces do not overlap in time",
                self.id
            )));
        }
        Ok(())
    }

    /// Time span covered by both traces.
    pub fn common_span(&self) -> (f64, f64) {
        let (f0, f1) = self.force.span();
        (self.ae.t0.max(f0), self.ae.t_end().min(f1))
    }

    pub fn duration(&self) -> f64 {
        let (a, b) = self.common_span();
        b - a
    }

    /// Copy with the AE trace normalised to unit mean absolute amplitude.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            ae: normalize_trace(&self.ae)?,
            ..self.clone()
        })
    }
}

/// A time window at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub width: f64,
}

/// Divide every sample by the trace's mean absolute value.
pub fn normalize_trace(ae: &AeTrace) -> Result<AeTrace> {
    let m = ae.mean_abs();
    if !(m > 0.0) {
        return Err(Error::AllZeroTrace);
    }
    Ok(AeTrace {
        samples: ae.samples.iter().map(|v| v / m).collect(),
        sampling_rate: ae.sampling_rate,
        t0: ae.t0,
    })
}

/// Contiguous non-overlapping windows of `width` starting at `span.0`;
/// a trailing remainder shorter than `width` is dropped.
pub fn partition_windows(span: (f64, f64), width: f64) -> Result<Vec<TimeWindow>> {
    sliding_windows(span, width, width)
}

/// Windows of `width` whose starts advance by `stride`.
pub fn sliding_windows(span: (f64, f64), width: f64, stride: f64) -> Result<Vec<TimeWindow>> {
    let (t0, t1) = span;
    if !(width > 0.0) || !(stride > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "window width {width} and stride {stride} must be positive"
        )));
    }
    let len = t1 - t0;
    if len < width * (1.0 - WINDOW_SLACK) {
        return Err(Error::SpanTooShort { span: len, width });
    }
    let n = ((len - width) / stride + WINDOW_SLACK).floor() as usize + 1;
    Ok((0..n)
        .map(|i| {
            let t_start = t0 + i as f64 * stride;
            TimeWindow {
                index: i,
                t_start,
                t_end: t_start + width,
                width,
            }
        })
        .collect())
}

/// Force change `F(t_end) - F(t_start)` over a window, zero-order hold at both ends.
pub fn force_increment(force: &ForceTrace, w: &TimeWindow) -> Result<f64> {
    let (s0, s1) = force.span();
    let tol = WINDOW_SLACK * w.t_end.abs().max(1.0);
    let out_of_range = || Error::WindowOutOfRange {
        t_start: w.t_start,
        t_end: w.t_end,
        span_start: s0,
        span_end: s1,
    };
    if w.t_start < s0 - tol || w.t_end > s1 + tol {
        return Err(out_of_range());
    }
    let a = force.value_at(w.t_start).ok_or_else(out_of_range)?;
    let b = force.value_at(w.t_end).ok_or_else(out_of_range)?;
    Ok(b - a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ae(samples: Vec<f64>) -> AeTrace {
        AeTrace::new(samples, 2.5e6, 0.0).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_trace(&ae(vec![3.0, 3.0, 3.0])).unwrap();
        assert_eq!(n.samples, vec![1.0, 1.0, 1.0]);
        let n = normalize_trace(&ae(vec![1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(n.samples, vec![1.0, -1.0, 1.0, -1.0]);
        let n = normalize_trace(&ae(vec![2.0, -4.0, 6.0, -8.0])).unwrap();
        for (a, b) in n.samples.iter().zip([0.4, -0.8, 1.2, -1.6]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(n.sampling_rate, 2.5e6);
    }

    #[test]
    fn normalize_all_zero() {
        assert!(matches!(
            normalize_trace(&ae(vec![0.0; 4])),
            Err(Error::AllZeroTrace)
        ));
    }

    #[test]
    fn partition_examples() {
        let w = partition_windows((0.0, 3.0), 0.3).unwrap();
        assert_eq!(w.len(), 10);
        assert!((w[9].t_end - 3.0).abs() < 1e-12);
        let w = partition_windows((0.0, 3.05), 0.3).unwrap();
        assert_eq!(w.len(), 10);
        assert!(matches!(
            partition_windows((0.0, 0.2), 0.3),
            Err(Error::SpanTooShort { .. })
        ));
    }

    #[test]
    fn sliding_window_count() {
        let w = sliding_windows((0.0, 1000.0), 50.0, 5.0).unwrap();
        assert_eq!(w.len(), 191);
    }

    #[test]
    fn force_increment_examples() {
        let flat = ForceTrace::from_uniform(vec![1.5; 201], 200.0, 0.0).unwrap();
        for w in partition_windows((0.0, 1.0), 0.3).unwrap() {
            assert_eq!(force_increment(&flat, &w).unwrap(), 0.0);
        }
        let ramp: Vec<f64> = (0..201).map(|i| 2.0 * i as f64 / 200.0).collect();
        let ramp = ForceTrace::from_uniform(ramp, 200.0, 0.0).unwrap();
        let w = TimeWindow {
            index: 0,
            t_start: 0.1,
            t_end: 0.4,
            width: 0.3,
        };
        assert!((force_increment(&ramp, &w).unwrap() - 0.6).abs() < 1e-12);
        let w = TimeWindow {
            index: 0,
            t_start: 0.9,
            t_end: 1.2,
            width: 0.3,
        };
        assert!(matches!(
            force_increment(&ramp, &w),
            Err(Error::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_order_hold_between_samples() {
        let f = ForceTrace::new(vec![0.0, 1.0, 2.0], vec![5.0, 6.0, 7.0], 1.0).unwrap();
        assert_eq!(f.value_at(1.7), Some(6.0));
        assert_eq!(f.value_at(-0.1), None);
    }

    #[test]
    fn force_rejects_unsorted_times() {
        assert!(ForceTrace::new(vec![0.0, 0.0], vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn undeclared_diameter_needs_flag() {
        let force = ForceTrace::from_uniform(vec![0.0; 10], 200.0, 0.0).unwrap();
        let a = AeTrace::new(vec![1.0; 1000], 2.5e4, 0.0).unwrap();
        assert!(ExperimentRecord::new("x", 12.0, a.clone(), force.clone()).is_err());
        assert!(ExperimentRecord::new("x", 16.0, a, force).is_ok());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            let once = normalize_trace(&ae(v)).unwrap();
            prop_assert!((once.mean_abs() - 1.0).abs() < 1e-9);
            let twice = normalize_trace(&once).unwrap();
            for (a, b) in once.samples.iter().zip(&twice.samples) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
        }

        #[test]
        fn partition_tiles_span(t0 in -10.0f64..10.0, len in 0.31f64..50.0, width in 0.01f64..0.3) {
            let w = partition_windows((t0, t0 + len), width).unwrap();
            prop_assert!((w[0].t_start - t0).abs() < 1e-12);
            for pair in w.windows(2) {
                prop_assert!((pair[0].t_end - pair[1].t_start).abs() < 1e-9);
            }
            let covered = w.last().unwrap().t_end - t0;
            prop_assert!(covered <= len + 1e-9 && len - covered < width + 1e-9);
        }

        #[test]
        fn increments_telescope(vals in prop::collection::vec(-5.0f64..5.0, 50..400), width in 0.02f64..0.2) {
            let f = ForceTrace::from_uniform(vals, 200.0, 0.0).unwrap();
            let span = f.span();
            let w = partition_windows(span, width).unwrap();
            let total: f64 = w.iter().map(|w| force_increment(&f, w).unwrap()).sum();
            let direct = f.value_at(w.last().unwrap().t_end).unwrap() - f.value_at(span.0).unwrap();
            prop_assert!((total - direct).abs() < 1e-9);
        }
    }
}
