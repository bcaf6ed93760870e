//! Subcommand bodies. Each writes its outputs plus `run_config.json` and
//! `log.txt` into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::{json, Map, Value};

use aeforce::config::RunConfig;
use aeforce::features::{detect_ae_events, FeatureMatrix};
use aeforce::forest::ForestModel;
use aeforce::io::{self, ExperimentMeta, RawAeFormat, RawSources};
use aeforce::pipeline::{self, feature_correlations};
use aeforce::signal::{
    ExperimentRecord, DEFAULT_PLATEN_VELOCITY_NM_S, DEFAULT_SPRING_CONSTANT_MN_UM,
};
use aeforce::stats::{self, Pdf};
use aeforce::synth::{self, SynthConfig};

use crate::logger;
use crate::DataArgs;

pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, set: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        cfg = cfg.overlay_file(p)?;
    }
    let mut overlay = Map::new();
    for kv in set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        overlay.insert(k.to_string(), value);
    }
    if let Some(s) = seed {
        overlay.insert("seed".into(), json!(s));
    }
    Ok(cfg.overlay(&overlay)?.resolve()?)
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

/// Write `run_config.json` and `log.txt`.
fn finish(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::write(out.join("run_config.json"), cfg.to_json())?;
    fs::write(out.join("log.txt"), logger::contents())?;
    Ok(())
}

fn load(data: &DataArgs) -> Result<Vec<ExperimentRecord>> {
    let mut dirs = Vec::new();
    for root in &data.data {
        let found = io::find_experiments(root)?;
        if found.is_empty() {
            bail!(aeforce::Error::InvalidData(format!(
                "no experiments under {}",
                root.display()
            )));
        }
        dirs.extend(found);
    }
    let mut exps = Vec::new();
    for d in dirs {
        let meta: ExperimentMeta = io::read_json(&d.join(io::META_FILE))?;
        if (!data.only.is_empty() && !data.only.contains(&meta.id))
            || data.exclude.contains(&meta.id)
        {
            continue;
        }
        log::info!("loading {} from {}", meta.id, d.display());
        exps.push(io::read_experiment(&d)?);
    }
    if exps.is_empty() {
        bail!(aeforce::Error::InsufficientExperiments(
            "no experiments left after filtering".into()
        ));
    }
    Ok(exps)
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    Ok(io::write_json(path, v)?)
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw AE samples.
    #[arg(long)]
    ae: PathBuf,
    /// `f32` or `i16` (little-endian).
    #[arg(long, default_value = "f32")]
    ae_format: String,
    /// Scale for `i16` samples.
    #[arg(long, default_value_t = 1.0)]
    volts_per_count: f64,
    /// Force table with a header row.
    #[arg(long)]
    force: PathBuf,
    /// Time column, s.
    #[arg(long, default_value = "t_s")]
    time_column: String,
    /// Force column.
    #[arg(long, default_value = "F_mN")]
    force_column: String,
    /// Multiplier that turns the force column into mN.
    #[arg(long, default_value_t = 1.0)]
    force_scale: f64,
    /// Experiment id.
    #[arg(long)]
    id: String,
    /// Pillar diameter, µm.
    #[arg(long)]
    diameter_um: f64,
    /// AE sampling rate, Hz.
    #[arg(long, default_value_t = 2.5e6)]
    ae_rate_hz: f64,
    /// Nominal force sampling rate, Hz.
    #[arg(long, default_value_t = 200.0)]
    force_rate_hz: f64,
    /// Time of the first AE sample, s.
    #[arg(long, default_value_t = 0.0)]
    t0_ae_s: f64,
    /// Added to every force time stamp.
    #[arg(long, default_value_t = 0.0)]
    t0_force_s: f64,
    /// Accept a diameter outside 8/16/32 µm.
    #[arg(long)]
    unseen_size: bool,
    /// Output experiment directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn ingest(cfg: &RunConfig, a: &IngestArgs) -> Result<()> {
    let ae_format = match a.ae_format.as_str() {
        "f32" => RawAeFormat::F32Le,
        "i16" => RawAeFormat::I16Le {
            volts_per_count: a.volts_per_count,
        },
        other => bail!(aeforce::Error::ConfigInvalid(format!(
            "unknown AE format '{other}'"
        ))),
    };
    let src = RawSources {
        ae_path: a.ae.clone(),
        ae_format,
        force_path: a.force.clone(),
        time_column: a.time_column.clone(),
        force_column: a.force_column.clone(),
        force_scale: a.force_scale,
        meta: ExperimentMeta {
            id: a.id.clone(),
            diameter_um: a.diameter_um,
            ae_sampling_rate_hz: a.ae_rate_hz,
            force_sampling_rate_hz: a.force_rate_hz,
            t0_ae_s: a.t0_ae_s,
            t0_force_s: a.t0_force_s,
            platen_velocity_nm_s: DEFAULT_PLATEN_VELOCITY_NM_S,
            spring_constant_mn_um: DEFAULT_SPRING_CONSTANT_MN_UM,
            unseen_size: a.unseen_size,
        },
    };
    let rec = io::import_raw(&src)?;
    io::write_experiment(&a.out, &rec)?;
    log::info!(
        "{}: {} AE samples, {} force samples",
        rec.id,
        rec.ae.samples.len(),
        rec.force.values.len()
    );
    finish(cfg, &a.out)
}

fn pdf_rows(p: &Pdf) -> Vec<Vec<String>> {
    p.centers
        .iter()
        .zip(p.edges.windows(2))
        .zip(&p.densities)
        .map(|((c, e), d)| {
            vec![
                e[0].to_string(),
                e[1].to_string(),
                c.to_string(),
                d.to_string(),
            ]
        })
        .collect()
}

pub fn stats(cfg: &RunConfig, data: &DataArgs, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let exps = load(data)?;
    let report = stats::drop_stats_summary(&exps, &cfg.stats.drops)?;
    write_csv(
        &out.join("drops.csv"),
        &["experiment", "t_start", "t_d_s", "dF_mN"],
        report.experiments.iter().flat_map(|e| {
            e.drops.iter().map(move |d| {
                vec![
                    e.experiment.clone(),
                    d.t_start.to_string(),
                    d.duration().to_string(),
                    d.magnitude.to_string(),
                ]
            })
        }),
    )?;
    for g in &report.groups {
        for (name, p) in [
            ("magnitude", &g.magnitude_pdf),
            ("duration", &g.duration_pdf),
            ("waiting", &g.waiting_pdf),
        ] {
            if let Some(p) = p {
                write_csv(
                    &out.join(format!("pdf_{name}_{}.csv", g.label)),
                    &["lo", "hi", "center", "density"],
                    pdf_rows(p),
                )?;
            }
        }
    }
    let mut spectra = Vec::new();
    for e in &exps {
        let norm = e.normalized()?;
        let events = detect_ae_events(&norm.ae, &cfg.coarse.events)?;
        match stats::mean_power_spectrum(
            &norm.ae,
            &events,
            cfg.stats.spectrum.window_s,
            cfg.stats.spectrum.taper,
        ) {
            Ok(s) => spectra.push((e.id.clone(), s)),
            Err(aeforce::Error::NoEvents) => log::warn!("{}: no AE events, no spectrum", e.id),
            Err(err) => return Err(err.into()),
        }
    }
    write_csv(
        &out.join("spectrum.csv"),
        &["experiment", "f_Hz", "C_F", "segments"],
        spectra.iter().flat_map(|(id, s)| {
            s.frequencies.iter().zip(&s.magnitude).map(move |(f, m)| {
                vec![
                    id.clone(),
                    f.to_string(),
                    m.to_string(),
                    s.segments.to_string(),
                ]
            })
        }),
    )?;
    write_csv(
        &out.join("stress.csv"),
        &["experiment", "t_s", "F_mN", "sigma_GPa"],
        exps.iter().flat_map(|e| {
            e.force
                .times
                .iter()
                .zip(&e.force.values)
                .map(move |(t, f)| {
                    vec![
                        e.id.clone(),
                        t.to_string(),
                        f.to_string(),
                        stats::stress_gpa(*f, e.diameter_um).to_string(),
                    ]
                })
        }),
    )?;
    let summary: Vec<Value> = report
        .groups
        .iter()
        .map(|g| {
            json!({
                "label": g.label,
                "n_drops": g.n_drops,
                "magnitude_duration_pearson": g.magnitude_duration_pearson,
                "fraction_below_dt": g.fraction_below_dt,
            })
        })
        .collect();
    write_json(&out.join("stats.json"), &summary)?;
    finish(cfg, out)
}

fn fine_cfg(cfg: &RunConfig, cache: Option<PathBuf>) -> pipeline::FineScaleConfig {
    pipeline::FineScaleConfig {
        cache_dir: cache,
        ..cfg.fine.clone()
    }
}

fn fine_matrices(
    exps: &[ExperimentRecord],
    fine: &pipeline::FineScaleConfig,
) -> Result<Vec<FeatureMatrix>> {
    Ok(exps
        .iter()
        .map(|e| pipeline::fine_matrix(e, fine))
        .collect::<aeforce::Result<Vec<_>>>()?)
}

fn concat(parts: Vec<FeatureMatrix>) -> Result<FeatureMatrix> {
    let mut it = parts.into_iter();
    let mut m = it.next().context("no feature rows")?;
    for p in it {
        m.extend(p)?;
    }
    Ok(m)
}

pub fn train_fine(
    cfg: &RunConfig,
    data: &DataArgs,
    out: &Path,
    cache: Option<PathBuf>,
) -> Result<()> {
    prepare_out(out)?;
    let exps = load(data)?;
    let fine = fine_cfg(cfg, cache);
    let m = concat(fine_matrices(&exps, &fine)?)?;
    m.write_csv(&out.join("features_fine.csv"))?;
    let model = pipeline::train_on_matrix(&m, &fine.forest, fine.cv_folds, fine.seed)?;
    log::info!(
        "fine model: {} trees over {} rows",
        model.trees.len(),
        m.len()
    );
    model.save(&out.join("model_fine.json"))?;
    finish(cfg, out)
}

pub fn train_coarse(cfg: &RunConfig, data: &DataArgs, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let exps = load(data)?;
    let model = pipeline::train_coarse(&exps, &cfg.coarse)?;
    log::info!("coarse model: {} trees", model.trees.len());
    model.save(&out.join("model_coarse.json"))?;
    finish(cfg, out)
}

pub fn predict(
    cfg: &RunConfig,
    fine_model: &Path,
    coarse_model: &Path,
    data: &DataArgs,
    out: &Path,
    cache: Option<PathBuf>,
) -> Result<()> {
    prepare_out(out)?;
    let fm = ForestModel::load(fine_model)?;
    let cm = ForestModel::load(coarse_model)?;
    let exps = load(data)?;
    let fine = fine_cfg(cfg, cache);
    let single = exps.len() == 1;
    for e in &exps {
        let dir = if single {
            out.to_path_buf()
        } else {
            out.join(&e.id)
        };
        prepare_out(&dir)?;
        let s = pipeline::predict_series(&fm, &cm, e, &fine, &cfg.coarse)?;
        io::write_prediction(&dir.join("prediction.csv"), &s.rows(e))?;
        write_csv(
            &dir.join("fine_increments.csv"),
            &["t_start_s", "t_end_s", "dF_ground_mN", "dF_pred_mN"],
            s.fine
                .windows
                .iter()
                .zip(&s.fine.truth)
                .zip(&s.fine.predicted)
                .map(|((w, g), p)| {
                    vec![
                        w.t_start.to_string(),
                        w.t_end.to_string(),
                        g.to_string(),
                        p.to_string(),
                    ]
                }),
        )?;
        write_csv(
            &dir.join("anchors.csv"),
            &["t_s", "F_ground_mN", "F_pred_mN"],
            s.coarse
                .times
                .iter()
                .zip(&s.coarse.truth)
                .zip(&s.coarse.values)
                .map(|((t, g), p)| vec![t.to_string(), g.to_string(), p.to_string()]),
        )?;
        match s.fine.r2() {
            Ok(r) => log::info!("{}: fine R2 {r:.4}, {} anchors", e.id, s.n_anchors),
            Err(_) => log::info!("{}: fine R2 undefined, {} anchors", e.id, s.n_anchors),
        }
    }
    finish(cfg, out)
}

fn read_two_columns(path: &Path, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = io::read_force_csv(path, a, b, 1.0)?;
    Ok((f.times, f.values))
}

pub fn combine(cfg: &RunConfig, fine: &Path, anchors: &Path, out: &Path) -> Result<()> {
    prepare_out(out)?;
    let (t, f) = read_two_columns(fine, "t_s", "f_mN")?;
    let (ta, fa) = read_two_columns(anchors, "t_s", "F_mN")?;
    let curve = pipeline::Curve::new(t, f)?;
    let origin = curve.start();
    let dt = cfg.coarse.dt_s;
    // An anchor at the origin carries no correction; the rest must lie on the ΔT grid.
    let mut a = Vec::new();
    for (t, v) in ta.iter().zip(&fa) {
        let n = (t - origin) / dt;
        if n.abs() < 1e-9 {
            continue;
        }
        if (n - (a.len() + 1) as f64).abs() > 1e-6 {
            bail!(aeforce::Error::InvalidData(format!(
                "anchor at t = {t} s is not at {origin} + {}·{dt} s",
                a.len() + 1
            )));
        }
        a.push(*v);
    }
    let c = pipeline::combine(&curve, &a, dt, origin)?;
    write_csv(
        &out.join("combined.csv"),
        &["t_s", "f_mN"],
        c.times
            .iter()
            .zip(&c.values)
            .map(|(t, v)| vec![t.to_string(), v.to_string()]),
    )?;
    finish(cfg, out)
}

pub fn evaluate(
    cfg: &RunConfig,
    data: &DataArgs,
    out: &Path,
    cache: Option<PathBuf>,
) -> Result<()> {
    prepare_out(out)?;
    let exps = load(data)?;
    let fine = fine_cfg(cfg, cache);
    let ms = fine_matrices(&exps, &fine)?;
    let folds = pipeline::leave_one_out(&ms, &fine.forest, fine.cv_folds, fine.seed)?;
    let r: Vec<f64> = folds.iter().map(|f| f.r2).collect();
    let (mean, std) = pipeline::mean_std(&r);
    let all = concat(ms)?;
    let pearson = all
        .keys
        .iter()
        .enumerate()
        .map(|(c, k)| (*k, pipeline::pearson(&all.column(c), &all.targets).ok()))
        .collect();
    let report = pipeline::EvalReport {
        feature_mode: fine.feature_mode,
        dt_s: fine.dt_s,
        folds,
        mean_r2: mean,
        std_r2: std,
        pearson,
    };
    log::info!("mean held-out R2 {mean:.4} +- {std:.4}");
    write_json(&out.join("report.json"), &report)?;
    finish(cfg, out)
}

pub fn importance(
    cfg: &RunConfig,
    data: &DataArgs,
    out: &Path,
    cache: Option<PathBuf>,
) -> Result<()> {
    prepare_out(out)?;
    let exps = load(data)?;
    let fine = fine_cfg(cfg, cache);
    let m = concat(fine_matrices(&exps, &fine)?)?;
    let imp = &cfg.importance;
    let single = pipeline::importance_single(&m, &imp.forest)?;
    let subsets =
        pipeline::importance_subsets(&m, &imp.forest, imp.n_max, imp.max_combinations as u128)?;
    let result = json!({
        "feature_mode": fine.feature_mode,
        "features": m.keys,
        "single": single,
        "subsets": subsets,
        "correlations": feature_correlations(&m),
    });
    write_json(&out.join("importance.json"), &result)?;
    finish(cfg, out)
}

pub fn transfer(
    cfg: &RunConfig,
    data: &DataArgs,
    out: &Path,
    cache: Option<PathBuf>,
) -> Result<()> {
    prepare_out(out)?;
    let exps = load(data)?;
    let mut tc = cfg.transfer.clone();
    tc.fine.cache_dir = cache;
    let cells = pipeline::transfer_matrix(&exps, &tc)?;
    write_csv(
        &out.join("transfer.csv"),
        &[
            "mode",
            "test",
            "test_diameter_um",
            "train",
            "train_diameters_um",
            "same_diameter",
            "n_windows",
            "r2",
        ],
        cells.iter().map(|c| {
            vec![
                c.mode.name().to_string(),
                c.test.clone(),
                c.test_diameter_um.to_string(),
                c.train.join(";"),
                c.train_diameters_um
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                c.same_diameter.to_string(),
                c.n_windows.to_string(),
                c.r2.map(|r| r.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    write_json(
        &out.join("transfer_summary.json"),
        &pipeline::summarize_transfer(&cells),
    )?;
    finish(cfg, out)
}

fn parse_snr(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        v => v.parse().with_context(|| format!("bad snr '{v}'")),
    }
}

pub fn synth(cfg: &RunConfig, out: &Path, count: Option<usize>, snr: &[String]) -> Result<()> {
    prepare_out(out)?;
    let base: SynthConfig = if cfg.synth.time_compression == 1.0 {
        cfg.synth.experiment.clone()
    } else {
        cfg.synth
            .experiment
            .time_compressed(cfg.synth.time_compression)
    };
    let n = count.unwrap_or(cfg.synth.count);
    let snrs = snr
        .iter()
        .map(|s| parse_snr(s))
        .collect::<Result<Vec<_>>>()?;
    let generated = if snrs.is_empty() {
        synth::generate_set(&base, n)?
    } else {
        let mut all = Vec::new();
        for i in 0..n {
            let b = SynthConfig {
                id: format!("{}-{}", base.id, i),
                seed: aeforce::rng::job_seed(base.seed, i as u64),
                ..base.clone()
            };
            all.extend(synth::snr_sweep(&b, &snrs)?);
        }
        all
    };
    for (rec, truth) in &generated {
        let dir = out.join(&rec.id);
        io::write_experiment(&dir, rec)?;
        io::write_truth(&dir.join("truth.csv"), truth)?;
        log::info!("{}: {} drops", rec.id, truth.drops.len());
    }
    finish(cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_flag_wins_over_set() {
        let c = resolve_config(None, Some(5), &["seed=9".into(), "fine.dt_s=0.5".into()]).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.fine.seed, 5);
        assert_eq!(c.fine.dt_s, 0.5);
    }

    #[test]
    fn set_values_fall_back_to_strings() {
        let c = resolve_config(None, None, &["synth.experiment.id=run".into()]).unwrap();
        assert_eq!(c.synth.experiment.id, "run");
        assert!(resolve_config(None, None, &["fine.dt_s".into()]).is_err());
    }

    #[test]
    fn config_file_then_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"fine.dt_s": 0.6, "coarse": {"stride_s": 10.0}}"#).unwrap();
        let c = resolve_config(Some(&p), None, &["fine.dt_s=0.4".into()]).unwrap();
        assert_eq!(c.fine.dt_s, 0.4);
        assert_eq!(c.coarse.stride_s, 10.0);
    }

    #[test]
    fn snr_parsing() {
        assert_eq!(parse_snr("inf").unwrap(), f64::INFINITY);
        assert_eq!(parse_snr(" 3 ").unwrap(), 3.0);
        assert!(parse_snr("loud").is_err());
    }
}
