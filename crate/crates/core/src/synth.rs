//! Synthetic experiments with a known link between force drops and AE bursts.
//!
//! Force is a linear ramp minus instantaneous drops at Poisson times, with
//! magnitudes drawn from a power law truncated to `[min, max]`. Each drop
//! emits one burst at the drop time: a short carrier segment followed by a
//! damped lower-frequency tail, with amplitude `a0 * magnitude^gamma`. Noise
//! is white Gaussian passed through a resonant band-pass filter and scaled
//! to `a0 * min^gamma / snr`.
//!
//! Random streams of `seed`: 0 for the drop schedule, 1 for the noise.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::{AeEvent, EventList};
use crate::rng;
use crate::signal::{
    force_increment, partition_windows, AeTrace, ExperimentRecord, ForceTrace, TimeWindow,
    DECLARED_DIAMETERS_UM, DEFAULT_PLATEN_VELOCITY_NM_S, DEFAULT_SPRING_CONSTANT_MN_UM,
};

/// Serialise an `f64` that may be infinite as a number or `"inf"`.
mod maybe_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstModel {
    /// Carrier of the leading segment, Hz.
    pub onset_freq_hz: f64,
    /// s.
    pub onset_duration_s: f64,
    /// Carrier of the damped tail, Hz.
    pub tail_freq_hz: f64,
    /// Exponential decay constant of the tail, s.
    pub tail_decay_s: f64,
    /// The tail is cut after this many decay constants.
    pub tail_cutoff: f64,
    /// Amplitude of a unit-magnitude drop.
    pub a0: f64,
    /// Amplitude exponent.
    pub gamma: f64,
}

impl Default for BurstModel {
    fn default() -> Self {
        Self {
            onset_freq_hz: 250e3,
            onset_duration_s: 20e-6,
            tail_freq_hz: 100e3,
            tail_decay_s: 50e-6,
            tail_cutoff: 6.0,
            a0: 1.0,
            gamma: 1.0,
        }
    }
}

impl BurstModel {
    pub fn duration(&self) -> f64 {
        self.onset_duration_s + self.tail_cutoff * self.tail_decay_s
    }

    /// Unit-amplitude waveform at `s` seconds after the burst start.
    pub fn shape(&self, s: f64) -> f64 {
        if s < 0.0 {
            0.0
        } else if s < self.onset_duration_s {
            (2.0 * PI * self.onset_freq_hz * s).sin()
        } else if s < self.duration() {
            let u = s - self.onset_duration_s;
            (-u / self.tail_decay_s).exp() * (2.0 * PI * self.tail_freq_hz * u).sin()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub center_hz: f64,
    /// Half-power bandwidth of the resonator, Hz.
    pub bandwidth_hz: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            center_hz: 500e3,
            bandwidth_hz: 200e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub id: String,
    pub diameter_um: f64,
    /// s.
    pub duration_s: f64,
    pub ae_sampling_rate_hz: f64,
    pub force_sampling_rate_hz: f64,
    /// Mean drops per second.
    pub drop_rate_hz: f64,
    /// Smallest drop, mN.
    pub drop_min_mn: f64,
    /// Largest drop, mN.
    pub drop_max_mn: f64,
    /// Density `∝ m^-exponent` on `[min, max]`.
    pub drop_exponent: f64,
    /// mN/s.
    pub loading_slope_mn_s: f64,
    /// mN.
    pub initial_force_mn: f64,
    pub burst: BurstModel,
    pub noise: NoiseModel,
    /// Smallest burst amplitude over noise standard deviation; `inf` disables noise.
    #[serde(with = "maybe_inf")]
    pub snr: f64,
    /// Width of the windows whose true increments are reported, s.
    pub truth_window_s: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            id: "synth".into(),
            diameter_um: 8.0,
            duration_s: 600.0,
            ae_sampling_rate_hz: 2.5e6,
            force_sampling_rate_hz: 200.0,
            drop_rate_hz: 1.0,
            drop_min_mn: 0.02,
            drop_max_mn: 2.0,
            drop_exponent: 1.5,
            loading_slope_mn_s: 0.1,
            initial_force_mn: 1.0,
            burst: BurstModel::default(),
            noise: NoiseModel::default(),
            snr: 10.0,
            truth_window_s: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Slow the AE side down by `factor`: sampling rate and every AE
    /// frequency divided, every AE duration multiplied. The force side and
    /// the drop schedule are unchanged. Useful to keep long runs small.
    pub fn time_compressed(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.ae_sampling_rate_hz /= factor;
        c.burst.onset_freq_hz /= factor;
        c.burst.tail_freq_hz /= factor;
        c.burst.onset_duration_s *= factor;
        c.burst.tail_decay_s *= factor;
        c.noise.center_hz /= factor;
        c.noise.bandwidth_hz /= factor;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.duration_s > 0.0) {
            return bad(format!("duration {} s must be positive", self.duration_s));
        }
        if !(self.ae_sampling_rate_hz > 0.0 && self.force_sampling_rate_hz > 0.0) {
            return bad("sampling rates must be positive".into());
        }
        if !(self.drop_rate_hz >= 0.0 && self.drop_rate_hz.is_finite()) {
            return bad(format!(
                "drop rate {} must be non-negative",
                self.drop_rate_hz
            ));
        }
        if !(self.drop_min_mn > 0.0 && self.drop_max_mn > self.drop_min_mn) {
            return bad("drop magnitudes need 0 < min < max".into());
        }
        if !(self.snr > 0.0) {
            return bad(format!("snr {} must be positive", self.snr));
        }
        if !(self.truth_window_s > 0.0) {
            return bad("truth window must be positive".into());
        }
        let nyquist = self.ae_sampling_rate_hz / 2.0;
        let b = &self.burst;
        if [b.onset_freq_hz, b.tail_freq_hz, self.noise.center_hz]
            .iter()
            .any(|&f| !(f > 0.0 && f < nyquist))
        {
            return bad(format!("AE frequencies must lie in (0, {nyquist}) Hz"));
        }
        if !(b.onset_duration_s >= 0.0
            && b.tail_decay_s > 0.0
            && b.tail_cutoff >= 0.0
            && b.a0 > 0.0)
        {
            return bad("burst durations and amplitude must be positive".into());
        }
        if !(self.noise.bandwidth_hz > 0.0) {
            return bad("noise bandwidth must be positive".into());
        }
        Ok(())
    }

    /// Amplitude of a drop of magnitude `m`.
    pub fn amplitude(&self, m: f64) -> f64 {
        self.burst.a0 * m.powf(self.burst.gamma)
    }

    pub fn noise_std(&self) -> f64 {
        if self.snr.is_infinite() {
            0.0
        } else {
            self.amplitude(self.drop_min_mn) / self.snr
        }
    }

    /// CDF of the drop magnitude law.
    pub fn magnitude_cdf(&self, m: f64) -> f64 {
        let (a, b, t) = (self.drop_min_mn, self.drop_max_mn, self.drop_exponent);
        if m <= a {
            return 0.0;
        }
        if m >= b {
            return 1.0;
        }
        if (t - 1.0).abs() < 1e-12 {
            (m / a).ln() / (b / a).ln()
        } else {
            let e = 1.0 - t;
            (m.powf(e) - a.powf(e)) / (b.powf(e) - a.powf(e))
        }
    }

    /// Inverse of [`Self::magnitude_cdf`].
    pub fn magnitude_quantile(&self, u: f64) -> f64 {
        let (a, b, t) = (self.drop_min_mn, self.drop_max_mn, self.drop_exponent);
        if (t - 1.0).abs() < 1e-12 {
            a * (b / a).powf(u)
        } else {
            let e = 1.0 - t;
            (a.powf(e) + u * (b.powf(e) - a.powf(e))).powf(1.0 / e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthDrop {
    /// s.
    pub time: f64,
    /// mN.
    pub magnitude: f64,
}

/// Exact labels of a synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub drops: Vec<SynthDrop>,
    /// One burst per drop.
    pub events: EventList,
    pub windows: Vec<TimeWindow>,
    /// Force change over each window, mN.
    pub increments: Vec<f64>,
}

/// Poisson drop times and power-law magnitudes on `(0, duration)`.
pub fn drop_schedule(cfg: &SynthConfig) -> Vec<SynthDrop> {
    let mut r = rng::stream(cfg.seed, 0);
    let mut drops = Vec::new();
    if cfg.drop_rate_hz == 0.0 {
        return drops;
    }
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng::unit(&mut r)).ln() / cfg.drop_rate_hz;
        if t >= cfg.duration_s {
            return drops;
        }
        let magnitude = cfg.magnitude_quantile(rng::unit(&mut r));
        drops.push(SynthDrop { time: t, magnitude });
    }
}

/// Unit-variance band-limited noise: white Gaussian samples through an
/// RBJ band-pass biquad, rescaled to the sample standard deviation.
fn unit_noise(cfg: &SynthConfig, n: usize) -> Vec<f64> {
    let mut r = rng::stream(cfg.seed, 1);
    let fs = cfg.ae_sampling_rate_hz;
    let w0 = 2.0 * PI * cfg.noise.center_hz / fs;
    let q = cfg.noise.center_hz / cfg.noise.bandwidth_hz;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = StandardNormal.sample(&mut r);
        let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = x;
        y2 = y1;
        y1 = y;
        out.push(y);
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if std > 0.0 {
        for v in out.iter_mut() {
            *v = (*v - mean) / std;
        }
    }
    out
}

fn build(
    cfg: &SynthConfig,
    drops: Vec<SynthDrop>,
    noise: Option<&[f64]>,
) -> Result<(ExperimentRecord, SynthTruth)> {
    let fs = cfg.ae_sampling_rate_hz;
    let n = (cfg.duration_s * fs).round() as usize;
    let mut ae: Vec<f64> = match noise {
        Some(z) if cfg.noise_std() > 0.0 => z.iter().map(|v| v * cfg.noise_std()).collect(),
        _ => vec![0.0; n],
    };
    let burst_len = (cfg.burst.duration() * fs).ceil() as usize + 1;
    for d in &drops {
        let a = cfg.amplitude(d.magnitude);
        let first = (d.time * fs).ceil() as usize;
        let end = (first + burst_len).min(n);
        for (i, v) in ae.iter_mut().enumerate().take(end).skip(first) {
            *v += a * cfg.burst.shape(i as f64 / fs - d.time);
        }
    }
    if ae.iter().all(|&v| v == 0.0) {
        // a silent trace cannot be normalised; one tiny sample keeps it usable
        ae[0] = 1e-12;
    }

    let ff = cfg.force_sampling_rate_hz;
    let nf = (cfg.duration_s * ff).round() as usize + 1;
    let mut values = Vec::with_capacity(nf);
    let mut k = 0;
    let mut lost = 0.0;
    for j in 0..nf {
        let t = j as f64 / ff;
        while k < drops.len() && drops[k].time <= t {
            lost += drops[k].magnitude;
            k += 1;
        }
        values.push(cfg.initial_force_mn + cfg.loading_slope_mn_s * t - lost);
    }
    let force = ForceTrace::from_uniform(values, ff, 0.0)?;
    let rec = ExperimentRecord {
        id: cfg.id.clone(),
        diameter_um: cfg.diameter_um,
        ae: AeTrace::new(ae, fs, 0.0)?,
        force,
        platen_velocity_nm_s: DEFAULT_PLATEN_VELOCITY_NM_S,
        spring_constant_mn_um: DEFAULT_SPRING_CONSTANT_MN_UM,
        unseen_size: !DECLARED_DIAMETERS_UM.contains(&cfg.diameter_um),
    };
    rec.validate()?;

    let windows = partition_windows(rec.common_span(), cfg.truth_window_s)?;
    let increments = windows
        .iter()
        .map(|w| force_increment(&rec.force, w))
        .collect::<Result<Vec<_>>>()?;
    let events = EventList {
        events: drops
            .iter()
            .map(|d| AeEvent {
                onset: d.time,
                duration: cfg.burst.duration(),
            })
            .collect(),
        threshold_used: 0.0,
    };
    Ok((
        rec,
        SynthTruth {
            drops,
            events,
            windows,
            increments,
        },
    ))
}

pub fn generate_experiment(cfg: &SynthConfig) -> Result<(ExperimentRecord, SynthTruth)> {
    cfg.validate()?;
    let n = (cfg.duration_s * cfg.ae_sampling_rate_hz).round() as usize;
    let noise = (cfg.noise_std() > 0.0).then(|| unit_noise(cfg, n));
    build(cfg, drop_schedule(cfg), noise.as_deref())
}

/// One experiment per snr sharing the drop schedule and the noise
/// realisation, which is only rescaled. Ids get an `-snr<value>` suffix.
pub fn snr_sweep(base: &SynthConfig, snrs: &[f64]) -> Result<Vec<(ExperimentRecord, SynthTruth)>> {
    if snrs.is_empty() {
        return Err(Error::ConfigInvalid(
            "snr sweep needs at least one value".into(),
        ));
    }
    let cfgs: Vec<SynthConfig> = snrs
        .iter()
        .map(|&snr| SynthConfig {
            id: format!("{}-snr{}", base.id, snr),
            snr,
            ..base.clone()
        })
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let n = (base.duration_s * base.ae_sampling_rate_hz).round() as usize;
    let noise = cfgs
        .iter()
        .any(|c| c.noise_std() > 0.0)
        .then(|| unit_noise(base, n));
    let drops = drop_schedule(base);
    cfgs.par_iter()
        .map(|c| build(c, drops.clone(), noise.as_deref()))
        .collect()
}

/// `n` experiments with ids `<id>-<i>` and seeds `job_seed(seed, i)`.
pub fn generate_set(base: &SynthConfig, n: usize) -> Result<Vec<(ExperimentRecord, SynthTruth)>> {
    base.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            generate_experiment(&SynthConfig {
                id: format!("{}-{}", base.id, i),
                seed: rng::job_seed(base.seed, i as u64),
                ..base.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            duration_s: 30.0,
            drop_rate_hz: 1.0,
            ..SynthConfig::default().time_compressed(100.0)
        }
    }

    #[test]
    fn no_drops_gives_ramp_and_noise() {
        let cfg = SynthConfig {
            drop_rate_hz: 0.0,
            ..small()
        };
        let (rec, truth) = generate_experiment(&cfg).unwrap();
        assert!(truth.drops.is_empty() && truth.events.events.is_empty());
        for (i, v) in rec.force.values.iter().enumerate() {
            let t = i as f64 / cfg.force_sampling_rate_hz;
            assert!((v - (1.0 + 0.1 * t)).abs() < 1e-12);
        }
        let std = (rec.ae.samples.iter().map(|v| v * v).sum::<f64>() / rec.ae.samples.len() as f64)
            .sqrt();
        assert!((std - cfg.noise_std()).abs() < 1e-3 * cfg.noise_std());
    }

    #[test]
    fn deterministic() {
        let a = generate_experiment(&small()).unwrap();
        let b = generate_experiment(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_experiment(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.1.drops, c.1.drops);
    }

    #[test]
    fn increments_reconstruct_force() {
        let cfg = small();
        let (rec, truth) = generate_experiment(&cfg).unwrap();
        assert_eq!(truth.windows.len(), 100);
        let mut f = rec.force.values[0];
        for (w, d) in truth.windows.iter().zip(&truth.increments) {
            f += d;
            assert!((f - rec.force.value_at(w.t_end).unwrap()).abs() < 1e-9);
        }
        assert_eq!(truth.events.events.len(), truth.drops.len());
        assert!(!truth.drops.is_empty());
    }

    #[test]
    fn sweep_shares_schedule_and_noise() {
        let sweep = snr_sweep(&small(), &[f64::INFINITY, 10.0, 1.0]).unwrap();
        assert!(sweep.windows(2).all(|w| w[0].1.drops == w[1].1.drops));
        let clean = &sweep[0].0.ae.samples;
        let n10: Vec<f64> = sweep[1]
            .0
            .ae
            .samples
            .iter()
            .zip(clean)
            .map(|(a, b)| a - b)
            .collect();
        let n1: Vec<f64> = sweep[2]
            .0
            .ae
            .samples
            .iter()
            .zip(clean)
            .map(|(a, b)| a - b)
            .collect();
        for (a, b) in n10.iter().zip(&n1) {
            assert!((a * 10.0 - b).abs() < 1e-9);
        }
        // bursts only: silent outside the burst intervals
        let fs = sweep[0].0.ae.sampling_rate;
        let dur = small().burst.duration();
        for (i, v) in clean.iter().enumerate() {
            let t = i as f64 / fs;
            if !sweep[0]
                .1
                .drops
                .iter()
                .any(|d| t >= d.time && t <= d.time + dur + 1.0 / fs)
            {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn magnitudes_follow_the_law() {
        let cfg = SynthConfig::default();
        let mut r = rng::stream(5, 0);
        let mut m: Vec<f64> = (0..10_000)
            .map(|_| cfg.magnitude_quantile(rng::unit(&mut r)))
            .collect();
        m.sort_by(f64::total_cmp);
        let n = m.len() as f64;
        let ks = m
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = cfg.magnitude_cdf(v);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "KS distance {ks}");
        for u in [0.0, 0.3, 0.9] {
            assert!((cfg.magnitude_cdf(cfg.magnitude_quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs() {
        for c in [
            SynthConfig {
                duration_s: 0.0,
                ..small()
            },
            SynthConfig {
                snr: 0.0,
                ..small()
            },
            SynthConfig {
                drop_rate_hz: -1.0,
                ..small()
            },
            SynthConfig {
                ae_sampling_rate_hz: 500e3,
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(
                generate_experiment(&c),
                Err(Error::ConfigInvalid(_))
            ));
        }
    }

    #[test]
    fn snr_round_trips_through_json() {
        let c = SynthConfig {
            snr: f64::INFINITY,
            ..small()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"snr\":\"inf\""));
        assert_eq!(serde_json::from_str::<SynthConfig>(&s).unwrap(), c);
    }
}
