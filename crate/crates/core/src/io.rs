//! On-disk formats.
//!
//! A canonical experiment directory holds `meta.json`, `ae.f32` (the AE
//! voltage as little-endian `f32`) and `force.csv` (`t_s,F_mN`).

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{AeTrace, ExperimentRecord, ForceTrace};
use crate::synth::SynthTruth;

pub const META_FILE: &str = "meta.json";
pub const AE_FILE: &str = "ae.f32";
pub const FORCE_FILE: &str = "force.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub id: String,
    pub diameter_um: f64,
    pub ae_sampling_rate_hz: f64,
    pub force_sampling_rate_hz: f64,
    pub t0_ae_s: f64,
    pub t0_force_s: f64,
    pub platen_velocity_nm_s: f64,
    #[serde(rename = "spring_constant_mN_um")]
    pub spring_constant_mn_um: f64,
    #[serde(default)]
    pub unseen_size: bool,
}

impl ExperimentMeta {
    pub fn of(rec: &ExperimentRecord) -> Self {
        Self {
            id: rec.id.clone(),
            diameter_um: rec.diameter_um,
            ae_sampling_rate_hz: rec.ae.sampling_rate,
            force_sampling_rate_hz: rec.force.sampling_rate,
            t0_ae_s: rec.ae.t0,
            t0_force_s: rec.force.times.first().copied().unwrap_or(0.0),
            platen_velocity_nm_s: rec.platen_velocity_nm_s,
            spring_constant_mn_um: rec.spring_constant_mn_um,
            unseen_size: rec.unseen_size,
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Little-endian `f32` samples.
pub fn read_f32_le(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::InvalidData(format!(
            "{}: {} bytes is not a whole number of f32 samples",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Little-endian `i16` samples scaled by `scale`.
pub fn read_i16_le(path: &Path, scale: f64) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::InvalidData(format!(
            "{}: odd byte count for i16 samples",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 * scale)
        .collect())
}

pub fn write_f32_le(path: &Path, samples: &[f64]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for &v in samples {
        w.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Two numeric columns chosen by header name.
pub fn read_force_csv(
    path: &Path,
    time_col: &str,
    force_col: &str,
    sampling_rate: f64,
) -> Result<ForceTrace> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidData(format!("{}: no column '{name}'", path.display())))
    };
    let (ti, fi) = (find(time_col)?, find(force_col)?);
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").trim().parse::<f64>().map_err(|_| {
                Error::InvalidData(format!(
                    "{}: row {} has a non-numeric value",
                    path.display(),
                    line + 2
                ))
            })
        };
        times.push(parse(ti)?);
        values.push(parse(fi)?);
    }
    ForceTrace::new(times, values, sampling_rate)
}

pub fn write_force_csv(path: &Path, force: &ForceTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t_s", "F_mN"])
        .map_err(|e| Error::csv(path, e))?;
    for (t, f) in force.times.iter().zip(&force.values) {
        w.write_record([t.to_string(), f.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_experiment(dir: &Path) -> Result<ExperimentRecord> {
    let meta: ExperimentMeta = read_json(&dir.join(META_FILE))?;
    let samples = read_f32_le(&dir.join(AE_FILE))?;
    let ae = AeTrace::new(samples, meta.ae_sampling_rate_hz, meta.t0_ae_s)?;
    let force = read_force_csv(
        &dir.join(FORCE_FILE),
        "t_s",
        "F_mN",
        meta.force_sampling_rate_hz,
    )?;
    let rec = ExperimentRecord {
        id: meta.id,
        diameter_um: meta.diameter_um,
        ae,
        force,
        platen_velocity_nm_s: meta.platen_velocity_nm_s,
        spring_constant_mn_um: meta.spring_constant_mn_um,
        unseen_size: meta.unseen_size,
    };
    rec.validate()?;
    Ok(rec)
}

pub fn write_experiment(dir: &Path, rec: &ExperimentRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(META_FILE), &ExperimentMeta::of(rec))?;
    write_f32_le(&dir.join(AE_FILE), &rec.ae.samples)?;
    write_force_csv(&dir.join(FORCE_FILE), &rec.force)
}

/// Canonical experiment directories directly under `root` or one level
/// below it, sorted by path.
pub fn find_experiments(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![(root.to_path_buf(), 0)];
    while let Some((dir, depth)) = stack.pop() {
        if dir.join(META_FILE).is_file() {
            out.push(dir);
            continue;
        }
        if depth == 2 {
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push((p, depth + 1));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_dataset(root: &Path) -> Result<Vec<ExperimentRecord>> {
    let dirs = find_experiments(root)?;
    if dirs.is_empty() {
        return Err(Error::InvalidData(format!(
            "no experiment directories under {}",
            root.display()
        )));
    }
    dirs.iter().map(|d| read_experiment(d)).collect()
}

/// Sample encoding of a raw AE file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RawAeFormat {
    F32Le,
    I16Le { volts_per_count: f64 },
}

/// Sources of one experiment in a raw layout; see [`import_raw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSources {
    pub ae_path: PathBuf,
    pub ae_format: RawAeFormat,
    pub force_path: PathBuf,
    pub time_column: String,
    pub force_column: String,
    /// Multiplies the force column to get mN.
    pub force_scale: f64,
    pub meta: ExperimentMeta,
}

/// Build a record from a raw AE file and a force table.
pub fn import_raw(src: &RawSources) -> Result<ExperimentRecord> {
    let samples = match src.ae_format {
        RawAeFormat::F32Le => read_f32_le(&src.ae_path)?,
        RawAeFormat::I16Le { volts_per_count } => read_i16_le(&src.ae_path, volts_per_count)?,
    };
    let ae = AeTrace::new(samples, src.meta.ae_sampling_rate_hz, src.meta.t0_ae_s)?;
    let raw = read_force_csv(
        &src.force_path,
        &src.time_column,
        &src.force_column,
        src.meta.force_sampling_rate_hz,
    )?;
    let force = ForceTrace::new(
        raw.times.iter().map(|t| t + src.meta.t0_force_s).collect(),
        raw.values.iter().map(|v| v * src.force_scale).collect(),
        raw.sampling_rate,
    )?;
    let rec = ExperimentRecord {
        id: src.meta.id.clone(),
        diameter_um: src.meta.diameter_um,
        ae,
        force,
        platen_velocity_nm_s: src.meta.platen_velocity_nm_s,
        spring_constant_mn_um: src.meta.spring_constant_mn_um,
        unseen_size: src.meta.unseen_size,
    };
    rec.validate()?;
    Ok(rec)
}

/// `kind,t_start_s,t_end_s,value_mN`: one `drop` row per generated drop
/// (time, burst end, magnitude) and one `window` row per truth window (ΔF).
pub fn write_truth(path: &Path, truth: &SynthTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let err = |e| Error::csv(path, e);
    w.write_record(["kind", "t_start_s", "t_end_s", "value_mN"])
        .map_err(err)?;
    for (d, e) in truth.drops.iter().zip(&truth.events.events) {
        w.write_record([
            "drop".into(),
            d.time.to_string(),
            (e.onset + e.duration).to_string(),
            d.magnitude.to_string(),
        ])
        .map_err(err)?;
    }
    for (win, d) in truth.windows.iter().zip(&truth.increments) {
        w.write_record([
            "window".into(),
            win.t_start.to_string(),
            win.t_end.to_string(),
            d.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `t_s,F_ground_mN,F_pred_mN`.
pub fn write_prediction(path: &Path, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t_s", "F_ground_mN", "F_pred_mN"])
        .map_err(|e| Error::csv(path, e))?;
    for (t, g, p) in rows {
        w.write_record([t.to_string(), g.to_string(), p.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
