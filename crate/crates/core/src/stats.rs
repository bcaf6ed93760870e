//! Force-drop statistics, probability densities and mean AE spectra.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::EventList;
use crate::pipeline::eval::pearson;
use crate::signal::{AeTrace, ExperimentRecord, ForceTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceDrop {
    /// Time of the peak sample, s.
    pub t_start: f64,
    /// Time of the trough sample, s.
    pub t_end: f64,
    /// mN, positive.
    pub magnitude: f64,
}

impl ForceDrop {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Maximal strictly decreasing runs, bridged across single-sample upticks
/// smaller than `eps`, ending at the run minimum and kept when they fall
/// by at least `eps`.
pub fn detect_force_drops(force: &ForceTrace, eps: f64) -> Result<Vec<ForceDrop>> {
    if !(eps > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "drop threshold {eps} must be positive"
        )));
    }
    let v = &force.values;
    let n = v.len();
    let mut drops = Vec::new();
    let mut i = 0;
    while i + 1 < n {
        if !(v[i + 1] < v[i]) {
            i += 1;
            continue;
        }
        let start = i;
        let mut j = i + 1;
        loop {
            while j + 1 < n && v[j + 1] < v[j] {
                j += 1;
            }
            if j + 2 < n && v[j + 1] - v[j] < eps && v[j + 2] < v[j + 1] {
                j += 2;
                continue;
            }
            break;
        }
        let trough = (start..=j).fold(start, |m, k| if v[k] < v[m] { k } else { m });
        let magnitude = v[start] - v[trough];
        if magnitude >= eps {
            drops.push(ForceDrop {
                t_start: force.times[start],
                t_end: force.times[trough],
                magnitude,
            });
        }
        i = j;
    }
    Ok(drops)
}

/// Three times the median absolute successive difference; if that median
/// is zero, the median over the nonzero differences is used instead.
pub fn default_drop_threshold(force: &ForceTrace) -> Result<f64> {
    let mut d: Vec<f64> = force
        .values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .collect();
    if d.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut m = median(&mut d);
    if m == 0.0 {
        let mut nz: Vec<f64> = d.into_iter().filter(|&x| x > 0.0).collect();
        if nz.is_empty() {
            return Err(Error::DegenerateInput("force trace is constant".into()));
        }
        m = median(&mut nz);
    }
    Ok(3.0 * m)
}

fn median(x: &mut [f64]) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Gaps from each drop's end to the next drop's start.
pub fn waiting_times(drops: &[ForceDrop]) -> Vec<f64> {
    drops
        .windows(2)
        .map(|w| (w[1].t_start - w[0].t_end).max(0.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "spacing", content = "bins")]
pub enum Binning {
    Linear(usize),
    Log(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdf {
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Pdf {
    pub fn integral(&self) -> f64 {
        self.densities
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }
}

/// Histogram density over `[min, max]`; the top edge is inclusive. A
/// zero-width range widens to `[v - 0.5, v + 0.5]` (linear) or `[v/2, 2v]` (log).
pub fn pdf(values: &[f64], bins: Binning) -> Result<Pdf> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite value in pdf input".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (nb, log) = match bins {
        Binning::Linear(n) => (n, false),
        Binning::Log(n) => (n, true),
    };
    if nb == 0 {
        return Err(Error::ConfigInvalid("pdf needs at least one bin".into()));
    }
    if log && lo <= 0.0 {
        return Err(Error::InvalidData(
            "log-spaced bins need positive values".into(),
        ));
    }
    let (lo, hi) = match (lo < hi, log) {
        (true, _) => (lo, hi),
        (false, false) => (lo - 0.5, hi + 0.5),
        (false, true) => (lo / 2.0, hi * 2.0),
    };
    let map = |v: f64| if log { v.ln() } else { v };
    let (a, b) = (map(lo), map(hi));
    let edges: Vec<f64> = (0..=nb)
        .map(|i| {
            let u = a + (b - a) * i as f64 / nb as f64;
            if log {
                u.exp()
            } else {
                u
            }
        })
        .collect();
    let mut counts = vec![0usize; nb];
    for &v in values {
        let u = (map(v) - a) / (b - a) * nb as f64;
        counts[(u.floor().max(0.0) as usize).min(nb - 1)] += 1;
    }
    let total = values.len() as f64;
    let densities = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, e)| c as f64 / (total * (e[1] - e[0])))
        .collect();
    let centers = edges
        .windows(2)
        .map(|e| {
            if log {
                (e[0] * e[1]).sqrt()
            } else {
                0.5 * (e[0] + e[1])
            }
        })
        .collect();
    Ok(Pdf {
        edges,
        centers,
        densities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Hz.
    pub frequencies: Vec<f64>,
    /// Mean `|FFT|` over segments.
    pub magnitude: Vec<f64>,
    pub segments: usize,
}

/// Average one-sided FFT magnitude of `window_s` segments centred on event
/// onsets. Segments that would run past either end of the trace are skipped.
pub fn mean_power_spectrum(
    ae: &AeTrace,
    events: &EventList,
    window_s: f64,
    taper: Taper,
) -> Result<Spectrum> {
    let len = (window_s * ae.sampling_rate).round() as usize;
    if len < 2 {
        return Err(Error::ConfigInvalid(format!(
            "spectrum window {window_s} s is under two samples"
        )));
    }
    let starts: Vec<usize> = events
        .events
        .iter()
        .filter_map(|e| {
            let c = ((e.onset - ae.t0) * ae.sampling_rate).round() as i64;
            let s = c - (len / 2) as i64;
            (s >= 0 && s as usize + len <= ae.samples.len()).then_some(s as usize)
        })
        .collect();
    if starts.is_empty() {
        return Err(Error::NoEvents);
    }
    let w: Vec<f64> = match taper {
        Taper::Rectangular => vec![1.0; len],
        Taper::Hann => (0..len)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
            .collect(),
    };
    let fft = FftPlanner::new().plan_fft_forward(len);
    let half = len / 2 + 1;
    let mut sum = vec![0.0; half];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for &s in &starts {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(ae.samples[s + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for (acc, c) in sum.iter_mut().zip(&buf) {
            *acc += c.norm();
        }
    }
    let k = starts.len() as f64;
    Ok(Spectrum {
        frequencies: (0..half)
            .map(|i| i as f64 * ae.sampling_rate / len as f64)
            .collect(),
        magnitude: sum.into_iter().map(|v| v / k).collect(),
        segments: starts.len(),
    })
}

/// Engineering stress `σ = F / d²`; mN over µm² is GPa.
pub fn stress_gpa(force_mn: f64, diameter_um: f64) -> f64 {
    force_mn / (diameter_um * diameter_um)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropStatsConfig {
    /// Fixed threshold in mN; `None` derives it per experiment.
    pub eps_mn: Option<f64>,
    /// Durations are compared against this window, s.
    pub fine_dt_s: f64,
    pub bins: usize,
}

impl Default for DropStatsConfig {
    fn default() -> Self {
        Self {
            eps_mn: None,
            fine_dt_s: 0.3,
            bins: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropGroupStats {
    /// Diameter label such as `8um`, or `all`.
    pub label: String,
    pub n_drops: usize,
    pub magnitude_pdf: Option<Pdf>,
    pub duration_pdf: Option<Pdf>,
    pub waiting_pdf: Option<Pdf>,
    pub magnitude_duration_pearson: Option<f64>,
    /// Fraction of drops shorter than the fine window.
    pub fraction_below_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDrops {
    pub experiment: String,
    pub diameter_um: f64,
    pub eps_mn: f64,
    pub drops: Vec<ForceDrop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropStatsReport {
    pub experiments: Vec<ExperimentDrops>,
    /// One entry per diameter in ascending order, then the pooled entry.
    pub groups: Vec<DropGroupStats>,
}

fn group_stats(label: String, parts: &[&ExperimentDrops], cfg: &DropStatsConfig) -> DropGroupStats {
    let drops: Vec<&ForceDrop> = parts.iter().flat_map(|p| &p.drops).collect();
    let mags: Vec<f64> = drops.iter().map(|d| d.magnitude).collect();
    let durs: Vec<f64> = drops.iter().map(|d| d.duration()).collect();
    let waits: Vec<f64> = parts
        .iter()
        .flat_map(|p| waiting_times(&p.drops))
        .filter(|&w| w > 0.0)
        .collect();
    let log_pdf = |v: &[f64]| {
        let pos: Vec<f64> = v.iter().copied().filter(|&x| x > 0.0).collect();
        pdf(&pos, Binning::Log(cfg.bins)).ok()
    };
    DropGroupStats {
        label,
        n_drops: drops.len(),
        magnitude_pdf: log_pdf(&mags),
        duration_pdf: log_pdf(&durs),
        waiting_pdf: log_pdf(&waits),
        magnitude_duration_pearson: pearson(&mags, &durs).ok(),
        fraction_below_dt: (!durs.is_empty()).then(|| {
            durs.iter().filter(|&&d| d < cfg.fine_dt_s).count() as f64 / durs.len() as f64
        }),
    }
}

/// Drops of every experiment plus per-diameter and pooled distributions.
pub fn drop_stats_summary(
    exps: &[ExperimentRecord],
    cfg: &DropStatsConfig,
) -> Result<DropStatsReport> {
    if exps.is_empty() {
        return Err(Error::InsufficientExperiments(
            "drop statistics need at least one experiment".into(),
        ));
    }
    let per = exps
        .par_iter()
        .map(|e| {
            let eps = match cfg.eps_mn {
                Some(v) => v,
                None => default_drop_threshold(&e.force)?,
            };
            Ok(ExperimentDrops {
                experiment: e.id.clone(),
                diameter_um: e.diameter_um,
                eps_mn: eps,
                drops: detect_force_drops(&e.force, eps)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut diameters: Vec<f64> = per.iter().map(|p| p.diameter_um).collect();
    diameters.sort_by(f64::total_cmp);
    diameters.dedup();
    let mut groups: Vec<DropGroupStats> = diameters
        .iter()
        .map(|&d| {
            let parts: Vec<&ExperimentDrops> = per.iter().filter(|p| p.diameter_um == d).collect();
            group_stats(format!("{d}um"), &parts, cfg)
        })
        .collect();
    groups.push(group_stats(
        "all".into(),
        &per.iter().collect::<Vec<_>>(),
        cfg,
    ));
    Ok(DropStatsReport {
        experiments: per,
        groups,
    })
}
