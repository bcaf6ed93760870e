//! Window descriptors: normalised moments of the raw AE, moments of
//! spectrogram slices, and coarse-scale event statistics.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::signal::AeTrace;
use crate::wavelet::{self, ScaleGrid, WaveletConfig};

/// Moment order `k`; `Infinite` is the maximum absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MomentOrder {
    Finite(u32),
    Infinite,
}

impl MomentOrder {
    /// `{1..10, ∞}`.
    pub fn default_grid() -> Vec<MomentOrder> {
        (1..=10)
            .map(MomentOrder::Finite)
            .chain(std::iter::once(MomentOrder::Infinite))
            .collect()
    }

    /// `{1, 2, 4, ∞}`, used for spectrogram slices.
    pub fn slice_grid() -> Vec<MomentOrder> {
        vec![
            MomentOrder::Finite(1),
            MomentOrder::Finite(2),
            MomentOrder::Finite(4),
            MomentOrder::Infinite,
        ]
    }
}

impl fmt::Display for MomentOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentOrder::Finite(k) => write!(f, "{k}"),
            MomentOrder::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for MomentOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "∞" => Ok(MomentOrder::Infinite),
            t => match t.parse::<u32>() {
                Ok(k) if k > 0 => Ok(MomentOrder::Finite(k)),
                _ => Err(Error::ConfigInvalid(format!("invalid moment order '{s}'"))),
            },
        }
    }
}

impl Serialize for MomentOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MomentOrder::Finite(k) => s.serialize_u32(*k),
            MomentOrder::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for MomentOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) if k > 0 => Ok(MomentOrder::Finite(k)),
            Raw::Int(k) => Err(serde::de::Error::custom(format!(
                "moment order must be positive, got {k}"
            ))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Name of one feature column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureKey {
    FreqIndependent {
        k: MomentOrder,
    },
    /// `f_hz` is the grid frequency actually used.
    FreqDependent {
        f_hz: f64,
        k: MomentOrder,
    },
    EventCount,
    EventDuration,
    Diameter,
}

impl FeatureKey {
    /// Column name: `fi_k2`, `fi_kinf`, `fd_f101106_k2`, `event_count`,
    /// `event_duration_s`, `diameter_um`.
    pub fn name(&self) -> String {
        match self {
            FeatureKey::FreqIndependent { k } => format!("fi_k{k}"),
            FeatureKey::FreqDependent { f_hz, k } => format!("fd_f{}_k{k}", f_hz.round() as u64),
            FeatureKey::EventCount => "event_count".into(),
            FeatureKey::EventDuration => "event_duration_s".into(),
            FeatureKey::Diameter => "diameter_um".into(),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let bad = || Error::InvalidData(format!("unknown feature column '{name}'"));
        match name {
            "event_count" => return Ok(FeatureKey::EventCount),
            "event_duration_s" => return Ok(FeatureKey::EventDuration),
            "diameter_um" => return Ok(FeatureKey::Diameter),
            _ => {}
        }
        if let Some(k) = name.strip_prefix("fi_k") {
            return Ok(FeatureKey::FreqIndependent {
                k: k.parse().map_err(|_| bad())?,
            });
        }
        let rest = name.strip_prefix("fd_f").ok_or_else(bad)?;
        let (f, k) = rest.split_once("_k").ok_or_else(bad)?;
        Ok(FeatureKey::FreqDependent {
            f_hz: f.parse().map_err(|_| bad())?,
            k: k.parse().map_err(|_| bad())?,
        })
    }

    pub fn order(&self) -> Option<MomentOrder> {
        match self {
            FeatureKey::FreqIndependent { k } | FeatureKey::FreqDependent { k, .. } => Some(*k),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for FeatureKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for FeatureKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FeatureKey::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// `(mean |x|^k)^(1/k)`, or `max |x|` for `k = ∞`.
pub fn moment(x: &[f64], k: MomentOrder) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = match k {
        MomentOrder::Infinite => return Ok(m),
        MomentOrder::Finite(k) => k as i32,
    };
    if m == 0.0 {
        return Ok(0.0);
    }
    // scaling by the maximum keeps |x/m|^k in [0, 1]
    let mean = x.iter().map(|v| (v.abs() / m).powi(k)).sum::<f64>() / x.len() as f64;
    Ok(m * mean.powf(1.0 / k as f64))
}

/// Mergeable running sums for a set of moment orders, so long windows can
/// be assembled from shorter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    max_k: u32,
    /// `sums[j] = Σ |x|^(j+1)`.
    sums: Vec<f64>,
    max: f64,
    count: usize,
}

impl MomentAccumulator {
    pub fn new(orders: &[MomentOrder]) -> Self {
        let max_k = orders
            .iter()
            .filter_map(|k| match k {
                MomentOrder::Finite(k) => Some(*k),
                MomentOrder::Infinite => None,
            })
            .max()
            .unwrap_or(0);
        Self {
            max_k,
            sums: vec![0.0; max_k as usize],
            max: 0.0,
            count: 0,
        }
    }

    pub fn push_slice(&mut self, x: &[f64]) {
        for v in x {
            let a = v.abs();
            self.max = self.max.max(a);
            let mut p = a;
            for s in self.sums.iter_mut() {
                *s += p;
                p *= a;
            }
        }
        self.count += x.len();
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.max_k, other.max_k);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.max = self.max.max(other.max);
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn moment(&self, k: MomentOrder) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::EmptyInput);
        }
        match k {
            MomentOrder::Infinite => Ok(self.max),
            MomentOrder::Finite(k) if k <= self.max_k => {
                let mean = self.sums[k as usize - 1] / self.count as f64;
                // clamp tiny rounding overshoot so the power-mean chain stays ordered
                Ok(mean.powf(1.0 / k as f64).min(self.max))
            }
            MomentOrder::Finite(k) => Err(Error::ConfigInvalid(format!(
                "moment order {k} was not accumulated"
            ))),
        }
    }
}

/// One moment of the raw window per order in `k_grid`.
pub fn freq_independent_features(x: &[f64], k_grid: &[MomentOrder]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = MomentAccumulator::new(k_grid);
    acc.push_slice(x);
    k_grid.iter().map(|&k| acc.moment(k)).collect()
}

pub fn freq_independent_keys(k_grid: &[MomentOrder]) -> Vec<FeatureKey> {
    k_grid
        .iter()
        .map(|&k| FeatureKey::FreqIndependent { k })
        .collect()
}

/// Whether slice moments are taken over power rows or their square root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SliceValue {
    #[default]
    Power,
    Magnitude,
}

/// Frequency-dependent feature definition for a given sampling rate.
#[derive(Debug, Clone)]
pub struct SliceFeatureSpec {
    /// Full grid (only the rows nearest `f_set` are computed).
    pub grid: ScaleGrid,
    pub f_set: Vec<f64>,
    pub k_set: Vec<MomentOrder>,
    pub wavelet: WaveletConfig,
    pub value: SliceValue,
    rows: Vec<usize>,
}

impl SliceFeatureSpec {
    pub fn new(
        sampling_rate: f64,
        f_set: &[f64],
        k_set: &[MomentOrder],
        wavelet: &WaveletConfig,
        value: SliceValue,
    ) -> Result<Self> {
        let grid = wavelet.grid(sampling_rate)?;
        let rows = f_set
            .iter()
            .map(|&f| grid.nearest(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            f_set: f_set.to_vec(),
            k_set: k_set.to_vec(),
            wavelet: wavelet.clone(),
            value,
            rows,
        })
    }

    pub fn keys(&self) -> Vec<FeatureKey> {
        self.rows
            .iter()
            .flat_map(|&r| {
                let f_hz = self.grid.frequencies[r];
                self.k_set
                    .iter()
                    .map(move |&k| FeatureKey::FreqDependent { f_hz, k })
            })
            .collect()
    }

    /// Sub-grid containing only the rows the features need, deduplicated.
    fn compute_grid(&self) -> (ScaleGrid, Vec<usize>) {
        let mut uniq = self.rows.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let pos = self
            .rows
            .iter()
            .map(|r| uniq.binary_search(r).unwrap())
            .collect();
        (self.grid.subset(&uniq), pos)
    }
}

/// For each `(f, k)`: `moment(slice(cwt(x), f), k)`, ordered by `f` then `k`.
pub fn freq_dependent_features(x: &[f64], spec: &SliceFeatureSpec) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (grid, pos) = spec.compute_grid();
    let s = wavelet::cwt(x, &grid, &spec.wavelet, 0.0)?;
    slice_features(&s, &pos, spec)
}

/// Same features from a precomputed spectrogram over the full grid.
pub fn freq_dependent_from_spectrogram(
    s: &wavelet::Spectrogram,
    spec: &SliceFeatureSpec,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(spec.rows.len() * spec.k_set.len());
    for &f in &spec.f_set {
        let (_, row) = wavelet::spectrogram_slice(s, f)?;
        push_row_moments(row, spec, &mut out)?;
    }
    Ok(out)
}

fn slice_features(
    s: &wavelet::Spectrogram,
    pos: &[usize],
    spec: &SliceFeatureSpec,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pos.len() * spec.k_set.len());
    for &p in pos {
        push_row_moments(s.row(p), spec, &mut out)?;
    }
    Ok(out)
}

fn push_row_moments(row: &[f64], spec: &SliceFeatureSpec, out: &mut Vec<f64>) -> Result<()> {
    let magnitude;
    let row = match spec.value {
        SliceValue::Power => row,
        SliceValue::Magnitude => {
            magnitude = row.iter().map(|p| p.sqrt()).collect::<Vec<_>>();
            &magnitude
        }
    };
    for &k in &spec.k_set {
        out.push(moment(row, k)?);
    }
    Ok(())
}

/// Thresholding parameters for AE event detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventConfig {
    /// Trigger level in units of the robust noise scale.
    pub c_thr: f64,
    /// Release level in units of the robust noise scale; events are grouped at
    /// this level. Must not exceed `c_thr`.
    pub c_release: f64,
    pub hang_time_s: f64,
    pub merge_gap_s: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        Self {
            c_thr: 5.0,
            c_release: 4.0,
            hang_time_s: 50e-6,
            merge_gap_s: 100e-6,
        }
    }
}

impl EventConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_release > 0.0 && self.c_thr >= self.c_release) {
            return Err(Error::ConfigInvalid(format!(
                "events need 0 < c_release <= c_thr (got {} and {})",
                self.c_release, self.c_thr
            )));
        }
        if !(self.hang_time_s >= 0.0 && self.merge_gap_s >= 0.0) {
            return Err(Error::ConfigInvalid(
                "hang time and merge gap must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AeEvent {
    /// s, on the trace clock.
    pub onset: f64,
    /// s.
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventList {
    pub events: Vec<AeEvent>,
    /// Trigger amplitude, in trace units.
    pub threshold_used: f64,
}

impl EventList {
    /// Events whose onset lies in `[t_start, t_end)`.
    pub fn in_range(&self, t_start: f64, t_end: f64) -> &[AeEvent] {
        let a = self.events.partition_point(|e| e.onset < t_start);
        let b = self.events.partition_point(|e| e.onset < t_end);
        &self.events[a..b]
    }
}

/// `1.4826 * median(|x - median(x)|)`.
pub fn robust_noise_scale(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut buf = x.to_vec();
    let med = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - med).abs();
    }
    1.4826 * median_in_place(&mut buf)
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, &mut hi, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        hi
    } else {
        let lo = buf[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Hysteresis event detection on a normalised trace.
///
/// Samples with `|V| > c_release * sigma` are grouped when the gap between
/// one group's end (last sample + hang time) and the next sample is below
/// the merge gap. A group is an event if some sample in it exceeds
/// `c_thr * sigma`. Onset is the group's first sample; duration runs to the
/// last sample plus the hang time.
pub fn detect_ae_events(ae: &AeTrace, cfg: &EventConfig) -> Result<EventList> {
    cfg.validate()?;
    let sigma = robust_noise_scale(&ae.samples);
    Ok(detect_with_scale(ae, cfg, sigma))
}

/// [`detect_ae_events`] with a given noise scale.
pub fn detect_with_scale(ae: &AeTrace, cfg: &EventConfig, sigma: f64) -> EventList {
    let trigger = cfg.c_thr * sigma;
    let release = cfg.c_release * sigma;
    let dt = ae.sample_period();
    let bridge = cfg.hang_time_s + cfg.merge_gap_s;
    let mut events = Vec::new();
    // (first, last, triggered)
    let mut open: Option<(usize, usize, bool)> = None;
    let close = |g: (usize, usize, bool), events: &mut Vec<AeEvent>| {
        if g.2 {
            events.push(AeEvent {
                onset: ae.t0 + g.0 as f64 * dt,
                duration: (g.1 - g.0) as f64 * dt + cfg.hang_time_s,
            });
        }
    };
    for (i, v) in ae.samples.iter().enumerate() {
        let a = v.abs();
        if a <= release {
            continue;
        }
        let hit = a > trigger;
        open = match open {
            Some((s, l, t)) if ((i - l) as f64 * dt) < bridge => Some((s, i, t || hit)),
            Some(g) => {
                close(g, &mut events);
                Some((i, i, hit))
            }
            None => Some((i, i, hit)),
        };
    }
    if let Some(g) = open {
        close(g, &mut events);
    }
    EventList {
        events,
        threshold_used: trigger,
    }
}

/// Coarse-window descriptors: raw moments, event count, summed event
/// duration and the pillar diameter.
pub fn coarse_features(
    x: &[f64],
    events: &[AeEvent],
    diameter_um: f64,
    k_grid: &[MomentOrder],
) -> Result<Vec<f64>> {
    let mut acc = MomentAccumulator::new(k_grid);
    acc.push_slice(x);
    coarse_from_accumulator(&acc, events, diameter_um, k_grid)
}

pub fn coarse_from_accumulator(
    acc: &MomentAccumulator,
    events: &[AeEvent],
    diameter_um: f64,
    k_grid: &[MomentOrder],
) -> Result<Vec<f64>> {
    let mut out = k_grid
        .iter()
        .map(|&k| acc.moment(k))
        .collect::<Result<Vec<_>>>()?;
    out.push(events.len() as f64);
    out.push(events.iter().map(|e| e.duration).sum());
    out.push(diameter_um);
    Ok(out)
}

pub fn coarse_keys(k_grid: &[MomentOrder]) -> Vec<FeatureKey> {
    let mut keys = freq_independent_keys(k_grid);
    keys.extend([
        FeatureKey::EventCount,
        FeatureKey::EventDuration,
        FeatureKey::Diameter,
    ]);
    keys
}

/// Provenance of one feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub experiment: String,
    pub window: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Force increment over the window, mN.
    Increment,
    /// Force at the window end, mN.
    Force,
}

impl TargetKind {
    pub fn column(&self) -> &'static str {
        match self {
            TargetKind::Increment => "target_dF_mN",
            TargetKind::Force => "target_F_mN",
        }
    }
}

/// Rows of window features with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub keys: Vec<FeatureKey>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub meta: Vec<RowMeta>,
    pub target_kind: TargetKind,
}

impl FeatureMatrix {
    pub fn new(keys: Vec<FeatureKey>, target_kind: TargetKind) -> Self {
        Self {
            keys,
            rows: Vec::new(),
            targets: Vec::new(),
            meta: Vec::new(),
            target_kind,
        }
    }

    pub fn push(&mut self, row: Vec<f64>, target: f64, meta: RowMeta) {
        debug_assert_eq!(row.len(), self.keys.len());
        self.rows.push(row);
        self.targets.push(target);
        self.meta.push(meta);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.keys.len()
    }

    pub fn extend(&mut self, other: FeatureMatrix) -> Result<()> {
        if other.keys != self.keys {
            return Err(Error::ShapeMismatch("feature keys differ".into()));
        }
        self.rows.extend(other.rows);
        self.targets.extend(other.targets);
        self.meta.extend(other.meta);
        Ok(())
    }

    /// Rows whose indices satisfy `keep`, in order.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize, &RowMeta) -> bool) -> Self {
        let mut out = Self::new(self.keys.clone(), self.target_kind);
        for (i, m) in self.meta.iter().enumerate() {
            if keep(i, m) {
                out.push(self.rows[i].clone(), self.targets[i], m.clone());
            }
        }
        out
    }

    /// Keep only the given feature columns.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        Self {
            keys: cols.iter().map(|&c| self.keys[c]).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| cols.iter().map(|&c| r[c]).collect())
                .collect(),
            targets: self.targets.clone(),
            meta: self.meta.clone(),
            target_kind: self.target_kind,
        }
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    /// Distinct experiment ids in first-appearance order.
    pub fn experiments(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for m in &self.meta {
            if ids.last() != Some(&m.experiment) && !ids.contains(&m.experiment) {
                ids.push(m.experiment.clone());
            }
        }
        ids
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec![
            "experiment".to_string(),
            "window".into(),
            "t_start_s".into(),
            "t_end_s".into(),
        ];
        header.extend(self.keys.iter().map(|k| k.name()));
        header.push(self.target_kind.column().into());
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for ((row, t), m) in self.rows.iter().zip(&self.targets).zip(&self.meta) {
            let mut rec = vec![
                m.experiment.clone(),
                m.window.to_string(),
                m.t_start.to_string(),
                m.t_end.to_string(),
            ];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(t.to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
        let n = header.len();
        if n < 6 {
            return Err(Error::InvalidData(format!(
                "{}: too few columns",
                path.display()
            )));
        }
        let target_kind = match &header[n - 1] {
            "target_dF_mN" => TargetKind::Increment,
            "target_F_mN" => TargetKind::Force,
            other => {
                return Err(Error::InvalidData(format!(
                    "{}: unknown target column '{other}'",
                    path.display()
                )))
            }
        };
        let keys = header
            .iter()
            .skip(4)
            .take(n - 5)
            .map(FeatureKey::parse)
            .collect::<Result<Vec<_>>>()?;
        let mut fm = Self::new(keys, target_kind);
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidData(format!("{}: bad number '{s}'", path.display())))
        };
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let meta = RowMeta {
                experiment: rec[0].to_string(),
                window: rec[1].parse().map_err(|_| {
                    Error::InvalidData(format!("{}: bad window index", path.display()))
                })?,
                t_start: num(&rec[2])?,
                t_end: num(&rec[3])?,
            };
            let row = (4..n - 1)
                .map(|i| num(&rec[i]))
                .collect::<Result<Vec<_>>>()?;
            fm.push(row, num(&rec[n - 1])?, meta);
        }
        Ok(fm)
    }
}
