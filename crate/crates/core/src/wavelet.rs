//! Continuous wavelet transform with the third-order Gaussian wavelet.
//!
//! Scales are measured in samples: the coefficient at scale `a` (samples)
//! and position `b` (sample index) is
//!
//! ```text
//! W(a, b) = a^{-1/2} * sum_t x[t] * psi((t - b) / a)
//! ```
//!
//! with the signal taken as zero outside the window. The wavelet is
//! truncated to `|u| <= 8` where it is below 1e-12.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the wavelet support in natural units.
pub const SUPPORT_HALF_WIDTH: f64 = 8.0;

/// Kernels up to this many taps are convolved directly in [`CwtMethod::Auto`].
const DIRECT_MAX_TAPS: usize = 64;

/// `C` such that the gaus3 wavelet has unit energy:
/// `int (4 t (2t^2 - 3))^2 e^{-2t^2} dt = 15 sqrt(pi/2)`.
pub fn gaus3_norm() -> f64 {
    1.0 / (15.0 * (std::f64::consts::PI / 2.0).sqrt()).sqrt()
}

/// Third derivative of `C e^{-t^2}`.
#[inline]
pub fn gaus3(t: f64) -> f64 {
    -4.0 * gaus3_norm() * t * (2.0 * t * t - 3.0) * (-t * t).exp()
}

/// Constants describing the mother wavelet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletSpec {
    pub norm: f64,
    /// Cycles per unit of the wavelet's natural time.
    pub central_frequency: f64,
    /// `int |psi|^2 dt`, computed numerically.
    pub energy: f64,
    /// `int psi dt`, computed numerically.
    pub mean: f64,
}

pub fn gaus3_spec() -> WaveletSpec {
    let n = 16_001;
    let h = 2.0 * SUPPORT_HALF_WIDTH / (n - 1) as f64;
    let (energy, mean) = simpson(n, h, |t| {
        let v = gaus3(t);
        (v * v, v)
    });
    WaveletSpec {
        norm: gaus3_norm(),
        central_frequency: central_frequency(),
        energy,
        mean,
    }
}

fn simpson(n: usize, h: f64, f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
    debug_assert!(n % 2 == 1);
    let (mut a, mut b) = (0.0, 0.0);
    for i in 0..n {
        let t = -SUPPORT_HALF_WIDTH + i as f64 * h;
        let w = if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let (u, v) = f(t);
        a += w * u;
        b += w * v;
    }
    (a * h / 3.0, b * h / 3.0)
}

/// Magnitude of the wavelet's Fourier transform at frequency `f`
/// (cycles per natural unit). The wavelet is odd, so only the sine part survives.
pub fn fourier_magnitude(f: f64) -> f64 {
    let n = 4001;
    let h = 2.0 * SUPPORT_HALF_WIDTH / (n - 1) as f64;
    let w = 2.0 * std::f64::consts::PI * f;
    simpson(n, h, |t| (gaus3(t) * (w * t).sin(), 0.0)).0.abs()
}

/// Frequency maximising `|FT psi|`, found by golden-section search and cached.
pub fn central_frequency() -> f64 {
    static FC: OnceLock<f64> = OnceLock::new();
    *FC.get_or_init(|| {
        let (mut lo, mut hi) = (0.1_f64, 1.0_f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - g * (hi - lo);
        let mut d = lo + g * (hi - lo);
        let (mut fc, mut fd) = (fourier_magnitude(c), fourier_magnitude(d));
        while hi - lo > 1e-10 {
            if fc > fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - g * (hi - lo);
                fc = fourier_magnitude(c);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + g * (hi - lo);
                fd = fourier_magnitude(d);
            }
        }
        0.5 * (lo + hi)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CwtMethod {
    /// Direct sum for short kernels, FFT convolution otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletConfig {
    pub n_scales: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Divide `|W|^2` by the scale so a pure tone peaks at its own frequency row.
    pub rectify_scale_bias: bool,
    pub method: CwtMethod,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            n_scales: 64,
            f_min_hz: 50e3,
            f_max_hz: 800e3,
            rectify_scale_bias: true,
            method: CwtMethod::Auto,
        }
    }
}

impl WaveletConfig {
    pub fn grid(&self, sampling_rate: f64) -> Result<ScaleGrid> {
        ScaleGrid::log_spaced(self.f_min_hz, self.f_max_hz, self.n_scales, sampling_rate)
    }
}

/// Scales (in samples) paired with their frequencies `f = f_c / (a * dt)`.
/// Ordered by increasing scale, so frequencies decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    pub scales: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub sample_period: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl ScaleGrid {
    /// `count` log-spaced frequencies from `f_max` down to `f_min` inclusive.
    pub fn log_spaced(f_min: f64, f_max: f64, count: usize, sampling_rate: f64) -> Result<Self> {
        if !(f_min > 0.0 && f_max > f_min && count >= 2 && sampling_rate > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "scale grid needs 0 < f_min < f_max and at least 2 scales (got {f_min}, {f_max}, {count})"
            )));
        }
        let ratio = (f_min / f_max).ln() / (count - 1) as f64;
        let frequencies: Vec<f64> = (0..count)
            .map(|i| match i {
                0 => f_max,
                i if i == count - 1 => f_min,
                i => f_max * (ratio * i as f64).exp(),
            })
            .collect();
        Self::from_frequencies(frequencies, sampling_rate, f_min, f_max)
    }

    fn from_frequencies(
        frequencies: Vec<f64>,
        sampling_rate: f64,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        let dt = 1.0 / sampling_rate;
        let fc = central_frequency();
        let scales = frequencies.iter().map(|f| fc / (f * dt)).collect();
        Ok(Self {
            scales,
            frequencies,
            sample_period: dt,
            f_min,
            f_max,
        })
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Row whose frequency is nearest `f`; ties go to the lower frequency.
    pub fn nearest(&self, f: f64) -> Result<usize> {
        let tol = 1e-9 * self.f_max;
        if !(f >= self.f_min - tol && f <= self.f_max + tol) {
            return Err(Error::FrequencyOutOfBand {
                freq: f,
                f_min: self.f_min,
                f_max: self.f_max,
            });
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &fi) in self.frequencies.iter().enumerate() {
            let d = (fi - f).abs();
            // frequencies decrease with i, so `<=` prefers the lower frequency on ties
            if d <= best_d {
                best = i;
                best_d = d;
            }
        }
        Ok(best)
    }

    /// Grid restricted to the given rows, keeping the declared band.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            scales: rows.iter().map(|&i| self.scales[i]).collect(),
            frequencies: rows.iter().map(|&i| self.frequencies[i]).collect(),
            sample_period: self.sample_period,
            f_min: self.f_min,
            f_max: self.f_max,
        }
    }
}

/// Time-frequency power of one window: row `i` belongs to `grid.frequencies[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Row-major `[n_scales x n_times]`.
    pub power: Vec<f64>,
    pub n_times: usize,
    /// Time of column 0, s.
    pub t0: f64,
    pub grid: ScaleGrid,
}

impl Spectrogram {
    pub fn n_scales(&self) -> usize {
        self.grid.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.power[i * self.n_times..(i + 1) * self.n_times]
    }

    pub fn time(&self, col: usize) -> f64 {
        self.t0 + col as f64 * self.grid.sample_period
    }

    /// Mean over time of each row.
    pub fn time_averaged(&self) -> Vec<f64> {
        (0..self.n_scales())
            .map(|i| self.row(i).iter().sum::<f64>() / self.n_times.max(1) as f64)
            .collect()
    }
}

/// Sampled, scaled kernel `g[k] = a^{-1/2} psi(k / a)` for `k = -h..=h`.
fn kernel(a: f64) -> Vec<f64> {
    let h = (SUPPORT_HALF_WIDTH * a).ceil() as i64;
    let s = 1.0 / a.sqrt();
    (-h..=h).map(|k| s * gaus3(k as f64 / a)).collect()
}

/// Wavelet coefficients at one scale by the direct sum.
pub fn cwt_row_direct(x: &[f64], a: f64) -> Vec<f64> {
    let g = kernel(a);
    let h = (g.len() / 2) as i64;
    let n = x.len() as i64;
    (0..n)
        .map(|b| {
            let lo = (-h).max(-b);
            let hi = h.min(n - 1 - b);
            (lo..=hi)
                .map(|k| x[(b + k) as usize] * g[(k + h) as usize])
                .sum()
        })
        .collect()
}

/// Signal spectrum shared across scales for the FFT path.
struct FftPlan {
    n: usize,
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    x_hat: Vec<Complex<f64>>,
}

impl FftPlan {
    fn new(x: &[f64], max_half: usize) -> Self {
        let size = (x.len() + 2 * max_half + 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut x_hat: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        x_hat.resize(size, Complex::new(0.0, 0.0));
        forward.process(&mut x_hat);
        Self {
            n: x.len(),
            size,
            forward,
            inverse,
            x_hat,
        }
    }

    fn row(&self, a: f64) -> Vec<f64> {
        let g = kernel(a);
        let h = g.len() / 2;
        // correlation with g == convolution with g reversed, offset by h
        let mut k_hat: Vec<Complex<f64>> = g.iter().rev().map(|&v| Complex::new(v, 0.0)).collect();
        k_hat.resize(self.size, Complex::new(0.0, 0.0));
        self.forward.process(&mut k_hat);
        for (k, x) in k_hat.iter_mut().zip(&self.x_hat) {
            *k *= x;
        }
        self.inverse.process(&mut k_hat);
        let scale = 1.0 / self.size as f64;
        k_hat[h..h + self.n].iter().map(|c| c.re * scale).collect()
    }
}

/// Wavelet coefficients `W(a, b)` for every scale of `grid`, row-major.
pub fn cwt_coefficients(x: &[f64], grid: &ScaleGrid, method: CwtMethod) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let taps = |a: f64| 2 * (SUPPORT_HALF_WIDTH * a).ceil() as usize + 1;
    let use_fft = |a: f64| match method {
        CwtMethod::Direct => false,
        CwtMethod::Fft => true,
        CwtMethod::Auto => taps(a) > DIRECT_MAX_TAPS,
    };
    let max_half = grid
        .scales
        .iter()
        .filter(|&&a| use_fft(a))
        .map(|&a| (SUPPORT_HALF_WIDTH * a).ceil() as usize)
        .max();
    let plan = max_half.map(|h| FftPlan::new(x, h));
    Ok(grid
        .scales
        .par_iter()
        .map(|&a| match (&plan, use_fft(a)) {
            (Some(p), true) => p.row(a),
            _ => cwt_row_direct(x, a),
        })
        .collect())
}

/// Spectrogram of `x` over `grid`; `t0` is the time of the first sample.
pub fn cwt(x: &[f64], grid: &ScaleGrid, cfg: &WaveletConfig, t0: f64) -> Result<Spectrogram> {
    let rows = cwt_coefficients(x, grid, cfg.method)?;
    let mut power = Vec::with_capacity(x.len() * grid.len());
    for (row, &a) in rows.iter().zip(&grid.scales) {
        let s = if cfg.rectify_scale_bias { 1.0 / a } else { 1.0 };
        power.extend(row.iter().map(|w| w * w * s));
    }
    Ok(Spectrogram {
        power,
        n_times: x.len(),
        t0,
        grid: grid.clone(),
    })
}

/// Power row at the grid frequency nearest `f`, with that frequency.
pub fn spectrogram_slice(spec: &Spectrogram, f: f64) -> Result<(f64, &[f64])> {
    let i = spec.grid.nearest(f)?;
    Ok((spec.grid.frequencies[i], spec.row(i)))
}

/// Binary spectrogram cache: little-endian `u32 n_scales, u32 n_times,
/// f64 f_min, f64 f_max, f64 dt`, then the row-major power as `f32`.
pub fn write_cache(path: &Path, spec: &Spectrogram) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&(spec.n_scales() as u32).to_le_bytes())?;
    put(&(spec.n_times as u32).to_le_bytes())?;
    put(&spec.grid.f_min.to_le_bytes())?;
    put(&spec.grid.f_max.to_le_bytes())?;
    put(&spec.grid.sample_period.to_le_bytes())?;
    for &p in &spec.power {
        put(&(p as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a cache written by [`write_cache`]. The grid is rebuilt as the
/// log-spaced grid over the stored band.
pub fn read_cache(path: &Path) -> Result<Spectrogram> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() < 32 {
        return Err(Error::InvalidData(format!(
            "{}: truncated spectrogram cache",
            path.display()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let (n_scales, n_times) = (u32_at(0), u32_at(4));
    let (f_min, f_max, dt) = (f64_at(8), f64_at(16), f64_at(24));
    let body = &buf[32..];
    if body.len() != n_scales * n_times * 4 {
        return Err(Error::InvalidData(format!(
            "{}: expected {} power values, found {} bytes",
            path.display(),
            n_scales * n_times,
            body.len()
        )));
    }
    let power = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Spectrogram {
        power,
        n_times,
        t0: 0.0,
        grid: ScaleGrid::log_spaced(f_min, f_max, n_scales, 1.0 / dt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f0: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn gaus3_roots_and_oddness() {
        assert_eq!(gaus3(0.0), 0.0);
        let r = (1.5f64).sqrt();
        assert!(gaus3(r).abs() < 1e-15 && gaus3(-r).abs() < 1e-15);
        for t in [0.5, 1.0, 2.0] {
            assert_eq!(gaus3(-t), -gaus3(t));
        }
    }

    #[test]
    fn admissibility() {
        let s = gaus3_spec();
        assert!((s.energy - 1.0).abs() < 1e-6, "energy {}", s.energy);
        assert!(s.mean.abs() < 1e-9, "mean {}", s.mean);
        assert!(gaus3(SUPPORT_HALF_WIDTH).abs() < 1e-12);
    }

    #[test]
    fn central_frequency_matches_fft_peak() {
        // oracle: FFT of the densely sampled wavelet, heavily zero padded
        let dt = 1.0 / 64.0;
        let m = (2.0 * SUPPORT_HALF_WIDTH / dt) as usize + 1;
        let size = 1 << 18;
        let mut buf: Vec<Complex<f64>> = (0..m)
            .map(|i| Complex::new(gaus3(-SUPPORT_HALF_WIDTH + i as f64 * dt), 0.0))
            .collect();
        buf.resize(size, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(size).process(&mut buf);
        let peak = (0..size / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        let df = 1.0 / (size as f64 * dt);
        let f_fft = peak as f64 * df;
        let fc = central_frequency();
        assert!(fc > 0.0);
        assert!((fc - f_fft).abs() <= df, "fc {fc} vs fft {f_fft}");
        // closed form: |FT| ∝ w^3 exp(-w^2/4), peak at w = sqrt(6)
        assert!((fc - 6f64.sqrt() / (2.0 * std::f64::consts::PI)).abs() < 1e-6);
    }

    #[test]
    fn grid_is_log_spaced_and_decreasing() {
        let g = WaveletConfig::default().grid(2.5e6).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.frequencies[0], 800e3);
        assert_eq!(g.frequencies[63], 50e3);
        assert!(g.frequencies.windows(2).all(|w| w[1] < w[0]));
        assert!(g.scales.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn slice_rules() {
        let g = ScaleGrid::log_spaced(100.0, 400.0, 3, 1e4).unwrap();
        // frequencies 400, 200, 100
        let spec = Spectrogram {
            power: (0..6).map(|v| v as f64).collect(),
            n_times: 2,
            t0: 0.0,
            grid: g,
        };
        let (f, row) = spectrogram_slice(&spec, 200.0).unwrap();
        assert_eq!((f, row), (200.0, &[2.0, 3.0][..]));
        // 300 Hz is equidistant from 400 and 200: lower wins
        assert_eq!(spectrogram_slice(&spec, 300.0).unwrap().0, 200.0);
        assert_eq!(spectrogram_slice(&spec, 390.0).unwrap().0, 400.0);
        assert!(matches!(
            spectrogram_slice(&spec, 50.0),
            Err(Error::FrequencyOutOfBand { .. })
        ));
    }

    #[test]
    fn zero_and_linearity() {
        let cfg = WaveletConfig::default();
        let g = cfg.grid(2.5e6).unwrap();
        let z = cwt(&[0.0; 300], &g, &cfg, 0.0).unwrap();
        assert!(z.power.iter().all(|&p| p == 0.0));
        let x: Vec<f64> = (0..300)
            .map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0)
            .collect();
        let x3: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let w1 = cwt_coefficients(&x, &g, CwtMethod::Auto).unwrap();
        let w3 = cwt_coefficients(&x3, &g, CwtMethod::Auto).unwrap();
        for (r1, r3) in w1.iter().zip(&w3) {
            for (a, b) in r1.iter().zip(r3) {
                assert!((3.0 * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
        assert!(matches!(cwt(&[], &g, &cfg, 0.0), Err(Error::EmptySignal)));
    }

    #[test]
    fn fft_matches_direct() {
        let g = WaveletConfig::default().grid(2.5e6).unwrap();
        let x: Vec<f64> = (0..500)
            .map(|i| ((i as f64) * 0.731).sin() + ((i * i) % 17) as f64 * 0.1)
            .collect();
        let d = cwt_coefficients(&x, &g, CwtMethod::Direct).unwrap();
        let f = cwt_coefficients(&x, &g, CwtMethod::Fft).unwrap();
        for (rd, rf) in d.iter().zip(&f) {
            let scale = rd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in rd.iter().zip(rf) {
                assert!((a - b).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn time_shift_covariance() {
        let cfg = WaveletConfig::default();
        let g = cfg.grid(2.5e6).unwrap();
        let n = 1200;
        let x: Vec<f64> = (0..n)
            .map(|i| ((i as f64) * 0.3).sin() * ((i % 13) as f64))
            .collect();
        let shift = 37;
        let mut xs = x.clone();
        xs.rotate_right(shift);
        let a = cwt(&x, &g, &cfg, 0.0).unwrap();
        let b = cwt(&xs, &g, &cfg, 0.0).unwrap();
        let h = (SUPPORT_HALF_WIDTH * g.scales[g.len() - 1]).ceil() as usize;
        for i in 0..g.len() {
            let (ra, rb) = (a.row(i), b.row(i));
            let scale = ra.iter().cloned().fold(0.0, f64::max);
            for c in (h + shift)..(n - h - shift) {
                assert!((ra[c] - rb[c + shift]).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn raw_power_is_biased_toward_low_frequency() {
        // Without rectification the 1/sqrt(a) weighting moves the peak of a
        // pure tone to a*f0 = sqrt(7)/2pi, i.e. ~0.93 f0 (two bins low here).
        let fs = 2.5e6;
        let mut cfg = WaveletConfig::default();
        let g = cfg.grid(fs).unwrap();
        let x = tone(250e3, fs, 400);
        cfg.rectify_scale_bias = false;
        let raw = cwt(&x, &g, &cfg, 0.0).unwrap().time_averaged();
        cfg.rectify_scale_bias = true;
        let rect = cwt(&x, &g, &cfg, 0.0).unwrap().time_averaged();
        let argmax = |v: &[f64]| {
            (0..v.len())
                .max_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap())
                .unwrap()
        };
        let target = g.nearest(250e3).unwrap();
        assert_eq!(argmax(&rect), target);
        assert!(argmax(&raw) >= target + 2);
    }

    #[test]
    fn cache_round_trip() {
        let cfg = WaveletConfig {
            n_scales: 8,
            ..Default::default()
        };
        let g = cfg.grid(2.5e6).unwrap();
        let s = cwt(&tone(100e3, 2.5e6, 64), &g, &cfg, 0.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        write_cache(&p, &s).unwrap();
        let r = read_cache(&p).unwrap();
        assert_eq!((r.n_scales(), r.n_times), (8, 64));
        for (a, b) in s.power.iter().zip(&r.power) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-30));
        }
        assert_eq!(r.grid.frequencies, g.frequencies);
    }
}
