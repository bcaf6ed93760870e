//! Acceptance suite. Each criterion prints one `PASS`, `FAIL` or `SKIP`
//! line on stderr. Criteria 6 to 9 read canonical experiment directories
//! under `AEFORCE_DATA_DIR` and skip when it is unset.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use aeforce::features::{moment, FeatureKey, FeatureMatrix, MomentOrder};
use aeforce::forest::{
    fit_forest, fit_tree, midpoint, ForestConfig, ForestGrid, MaxFeatures, Tree, TreeNode,
    TIE_TOLERANCE,
};
use aeforce::pipeline::{
    self, combine, fine_matrix, importance_subsets, leave_one_out, mean_std, r2, subset_r2, Curve,
    FeatureMode, FineScaleConfig, TransferConfig,
};
use aeforce::rng;
use aeforce::signal::ExperimentRecord;
use aeforce::stats::{drop_stats_summary, DropStatsConfig};
use aeforce::synth::{snr_sweep, SynthConfig};
use aeforce::wavelet::{cwt, cwt_coefficients, gaus3, CwtMethod, ScaleGrid, WaveletConfig};

/// Write straight to stderr so the line survives test output capture.
fn line(id: u32, status: &str, name: &str, detail: &str) {
    // leading newline: libtest may be midway through its own `test ... ` line
    let _ = writeln!(
        std::io::stderr(),
        "\nacceptance {id} {status:4} {name}: {detail}"
    );
}

fn report(
    id: u32,
    name: &str,
    started: Instant,
    budget: Duration,
    outcome: Result<String, String>,
) {
    let took = started.elapsed();
    let outcome = outcome.and_then(|d| {
        if took <= budget {
            Ok(d)
        } else {
            Err(format!("{d}; took {took:.1?}, budget {budget:?}"))
        }
    });
    match outcome {
        Ok(d) => line(id, "PASS", name, &format!("{d} ({took:.1?})")),
        Err(d) => {
            line(id, "FAIL", name, &d);
            panic!("criterion {id} failed: {d}");
        }
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(r: &mut impl RngCore) -> f64 {
    r.sample(StandardNormal)
}

// ---------------------------------------------------------------------------
// 1. Combination exactness

/// Independent closed form: the correction is the continuous piecewise-linear
/// function that is 0 at the origin and `F_n - f(nΔT)` at each anchor.
fn combine_oracle(f: &Curve, anchors: &[f64], dt: f64, t: f64) -> f64 {
    let n_c = anchors.len();
    let offset = |n: usize| {
        if n == 0 {
            0.0
        } else {
            anchors[n - 1] - f.eval(n as f64 * dt)
        }
    };
    let n = ((t / dt).floor() as usize).min(n_c - 1);
    let w = t / dt - n as f64;
    f.eval(t) + (1.0 - w) * offset(n) + w * offset(n + 1)
}

fn criterion_1() -> Result<String, String> {
    let mut r = rng::stream(101, 0);
    let mut worst_anchor = 0.0f64;
    let mut worst_second = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for case in 0..100 {
        let n_c = 1 + rng::below(&mut r, 20);
        let dt = 1.0 + 99.0 * rng::unit(&mut r);
        // fine step is generally not a divisor of ΔT, so anchors fall inside segments
        let per_window = 3.0 + 60.0 * rng::unit(&mut r);
        let h = dt / per_window;
        let n_fine = (n_c as f64 * dt / h).ceil() as usize;
        let times: Vec<f64> = (0..=n_fine).map(|i| i as f64 * h).collect();
        let mut v = 0.0;
        let values: Vec<f64> = times
            .iter()
            .map(|_| {
                v += normal(&mut r);
                v
            })
            .collect();
        let anchors: Vec<f64> = (0..n_c).map(|_| 20.0 * normal(&mut r)).collect();
        let f = Curve::new(times.clone(), values).map_err(|e| e.to_string())?;
        let out = combine(&f, &anchors, dt, 0.0).map_err(|e| format!("case {case}: {e}"))?;

        for (n, a) in anchors.iter().enumerate() {
            let got = out.eval((n + 1) as f64 * dt);
            worst_anchor = worst_anchor.max((got - a).abs() / a.abs().max(1.0));
        }
        for &t in &times {
            let scale = out.eval(t).abs().max(1.0);
            worst_oracle =
                worst_oracle.max((out.eval(t) - combine_oracle(&f, &anchors, dt, t)).abs() / scale);
        }
        for n in 0..n_c {
            let (lo, hi) = (n as f64 * dt, (n + 1) as f64 * dt);
            let inside: Vec<f64> = times
                .iter()
                .copied()
                .filter(|&t| t >= lo && t <= hi)
                .collect();
            for w in inside.windows(3) {
                let before = f.eval(w[0]) - 2.0 * f.eval(w[1]) + f.eval(w[2]);
                let after = out.eval(w[0]) - 2.0 * out.eval(w[1]) + out.eval(w[2]);
                let scale = out.eval(w[1]).abs().max(f.eval(w[1]).abs()).max(1.0);
                worst_second = worst_second.max((after - before).abs() / scale);
            }
        }
    }
    ensure(worst_anchor <= 1e-9, || {
        format!("anchor error {worst_anchor:.2e}")
    })?;
    ensure(worst_second <= 1e-9, || {
        format!("second-difference change {worst_second:.2e}")
    })?;
    ensure(worst_oracle <= 1e-9, || {
        format!("closed-form mismatch {worst_oracle:.2e}")
    })?;
    Ok(format!(
        "100 cases, anchor err {worst_anchor:.1e}, second-diff err {worst_second:.1e}, closed-form err {worst_oracle:.1e}"
    ))
}

#[test]
fn criterion_1_combination_exactness() {
    let t = Instant::now();
    report(
        1,
        "combination exactness",
        t,
        Duration::from_secs(1),
        criterion_1(),
    );
}

// ---------------------------------------------------------------------------
// 2. Wavelet correctness

/// Unnormalised third derivative of `exp(-t^2)`.
fn d3_gauss(t: f64) -> f64 {
    (12.0 * t - 8.0 * t * t * t) * (-t * t).exp()
}

/// Composite Simpson rule over `[-12, 12]`.
fn integrate(f: impl Fn(f64) -> f64) -> f64 {
    let n = 48_000;
    let h = 24.0 / n as f64;
    let mut s = f(-12.0) + f(12.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(-12.0 + i as f64 * h);
    }
    s * h / 3.0
}

/// `W(a, b) = a^{-1/2} sum_t x[t] psi((t - b)/a)` over every sample.
fn cwt_direct(x: &[f64], a: f64, b: usize) -> f64 {
    let s: f64 = x
        .iter()
        .enumerate()
        .map(|(t, v)| v * gaus3((t as f64 - b as f64) / a))
        .sum();
    s / a.sqrt()
}

fn criterion_2() -> Result<String, String> {
    let mean = integrate(gaus3);
    let energy = integrate(|t| gaus3(t).powi(2));
    ensure(mean.abs() <= 1e-6, || format!("wavelet mean {mean:.2e}"))?;
    ensure((energy - 1.0).abs() <= 1e-6, || {
        format!("wavelet energy {energy}")
    })?;
    // the implemented wavelet is the normalised third Gaussian derivative
    let norm = integrate(|t| d3_gauss(t).powi(2)).sqrt();
    for i in -40..=40 {
        let t = i as f64 * 0.1;
        let want = d3_gauss(t) / norm;
        let got = gaus3(t);
        ensure((got - want).abs() <= 1e-9, || {
            format!("gaus3({t}) = {got}, expected {want}")
        })?;
    }

    let fs = 2.5e6;
    let n = (160e-6 * fs) as usize;
    let cfg = WaveletConfig::default();
    let grid = ScaleGrid::log_spaced(50e3, 800e3, 64, fs).map_err(|e| e.to_string())?;
    let mut offsets = Vec::new();
    for f0 in [100e3, 250e3, 500e3] {
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f0 * i as f64 / fs).sin())
            .collect();
        let spec = cwt(&x, &grid, &cfg, 0.0).map_err(|e| e.to_string())?;
        let avg = spec.time_averaged();
        let peak = (0..avg.len())
            .max_by(|&i, &j| avg[i].total_cmp(&avg[j]))
            .unwrap();
        let want = grid.nearest(f0).map_err(|e| e.to_string())?;
        let off = peak as i64 - want as i64;
        ensure(off.abs() <= 1, || {
            format!(
                "{f0} Hz tone peaks at row {peak} ({} Hz), nearest row {want}",
                grid.frequencies[peak]
            )
        })?;
        offsets.push(off);
    }

    let mut r = rng::stream(202, 0);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let fft = cwt_coefficients(&x, &grid, CwtMethod::Fft).map_err(|e| e.to_string())?;
        for (row, &a) in fft.iter().zip(&grid.scales) {
            let direct: Vec<f64> = (0..n).map(|b| cwt_direct(&x, a, b)).collect();
            let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = row
                .iter()
                .zip(&direct)
                .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            worst = worst.max(err / scale);
        }
    }
    ensure(worst <= 1e-6, || {
        format!("FFT vs direct relative error {worst:.2e}")
    })?;
    Ok(format!(
        "mean {mean:.1e}, energy-1 {:.1e}, tone row offsets {offsets:?}, FFT vs direct {worst:.1e}",
        energy - 1.0
    ))
}

#[test]
fn criterion_2_wavelet_correctness() {
    let t = Instant::now();
    report(
        2,
        "wavelet correctness",
        t,
        Duration::from_secs(10),
        criterion_2(),
    );
}

// ---------------------------------------------------------------------------
// 3. Moment properties and R² examples

fn criterion_3() -> Result<String, String> {
    let mut r = rng::stream(303, 0);
    let mut orders = MomentOrder::default_grid();
    orders.sort();
    let tol = 1e-12;
    for w in 0..1000 {
        let n = 1 + rng::below(&mut r, 500);
        let spread = (4.0 * normal(&mut r)).exp();
        let x: Vec<f64> = (0..n).map(|_| spread * normal(&mut r)).collect();
        let alpha = match w % 4 {
            0 => -(3.0 * normal(&mut r)).exp(),
            1 => 0.0,
            _ => (3.0 * normal(&mut r)).exp(),
        };
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let mut prev = 0.0;
        for &k in &orders {
            let m = moment(&x, k).map_err(|e| e.to_string())?;
            let ms = moment(&scaled, k).map_err(|e| e.to_string())?;
            let want = alpha.abs() * m;
            ensure(
                (ms - want).abs() <= tol * want.max(f64::MIN_POSITIVE),
                || format!("window {w}: moment(αx, {k}) = {ms}, |α|·moment(x, {k}) = {want}"),
            )?;
            ensure(m >= prev * (1.0 - tol), || {
                format!("window {w}: moment order {k} = {m} below {prev}")
            })?;
            prev = m;
        }
    }
    let exact = |y: &[f64], p: &[f64], want: f64| -> Result<(), String> {
        let got = r2(y, p).map_err(|e| e.to_string())?;
        ensure(got == want, || {
            format!("r2({y:?}, {p:?}) = {got}, expected {want}")
        })
    };
    exact(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1.0)?;
    exact(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0], 0.0)?;
    exact(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], 0.5)?;
    Ok("1000 windows, 11 orders each; r2 examples 1, 0, 0.5 exact".into())
}

#[test]
fn criterion_3_moment_properties() {
    let t = Instant::now();
    report(
        3,
        "moment properties",
        t,
        Duration::from_secs(10),
        criterion_3(),
    );
}

// ---------------------------------------------------------------------------
// 4. Forest oracle equivalence

/// Exhaustive split search written without prefix sums: every feature, every
/// gap between consecutive distinct values, SSE summed directly. The winner
/// is the first candidate in (feature, threshold) order within the tie
/// tolerance of the minimum.
#[allow(clippy::needless_range_loop)]
fn oracle_tree(x: &[Vec<f64>], y: &[f64], max_depth: usize) -> Vec<TreeNode> {
    fn sse(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum()
    }
    fn grow(
        x: &[Vec<f64>],
        y: &[f64],
        rows: &[usize],
        depth: usize,
        max_depth: usize,
        out: &mut Vec<TreeNode>,
    ) -> usize {
        let id = out.len();
        let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        out.push(TreeNode::Leaf { value: mean });
        let constant = ys.iter().all(|&v| v == ys[0]);
        if depth >= max_depth || rows.len() < 2 || constant {
            return id;
        }
        let centred: Vec<f64> = ys.iter().map(|v| v - mean).collect();
        let tol = TIE_TOLERANCE * centred.iter().map(|v| v * v).sum::<f64>();
        let mut cands: Vec<(f64, usize, f64)> = Vec::new();
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = midpoint(w[0], w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) =
                    (0..rows.len()).partition(|&i| x[rows[i]][f] <= thr);
                let pick = |ix: &[usize]| ix.iter().map(|&i| centred[i]).collect::<Vec<_>>();
                cands.push((sse(&pick(&l)) + sse(&pick(&r)), f, thr));
            }
        }
        let Some(min) = cands.iter().map(|c| c.0).min_by(f64::total_cmp) else {
            return id;
        };
        let &(_, f, thr) = cands.iter().find(|c| c.0 <= min + tol).unwrap();
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= thr);
        let li = grow(x, y, &l, depth + 1, max_depth, out);
        let ri = grow(x, y, &r, depth + 1, max_depth, out);
        out[id] = TreeNode::Split {
            feature: f,
            threshold: thr,
            left: li,
            right: ri,
        };
        id
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    let mut out = Vec::new();
    grow(x, y, &rows, 0, max_depth, &mut out);
    out
}

fn same_nodes(a: &Tree, b: &[TreeNode]) -> Result<(), String> {
    ensure(a.nodes.len() == b.len(), || {
        format!("{} nodes vs oracle {}", a.nodes.len(), b.len())
    })?;
    for (i, (p, q)) in a.nodes.iter().zip(b).enumerate() {
        let ok = match (p, q) {
            (TreeNode::Leaf { value: u }, TreeNode::Leaf { value: v }) => {
                (u - v).abs() <= 1e-12 * v.abs().max(1.0)
            }
            (
                TreeNode::Split {
                    feature: f1,
                    threshold: t1,
                    left: l1,
                    right: r1,
                },
                TreeNode::Split {
                    feature: f2,
                    threshold: t2,
                    left: l2,
                    right: r2,
                },
            ) => f1 == f2 && t1 == t2 && l1 == l2 && r1 == r2,
            _ => false,
        };
        ensure(ok, || format!("node {i}: {p:?} vs oracle {q:?}"))?;
    }
    Ok(())
}

fn criterion_4() -> Result<String, String> {
    let mut r = rng::stream(404, 0);
    let mut splits = 0;
    for d in 0..50 {
        let n = 2 + rng::below(&mut r, 7);
        let p = 1 + rng::below(&mut r, 3);
        let depth = 1 + rng::below(&mut r, 2);
        // half the datasets use a few integer levels so ties are common
        let coarse = d % 2 == 0;
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            if coarse {
                rng::below(r, 3) as f64
            } else {
                normal(r)
            }
        };
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| draw(&mut r)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut r)).collect();
        let cfg = ForestConfig {
            n_trees: 1,
            max_depth: Some(depth),
            min_samples_leaf: 1,
            max_features: MaxFeatures::Fraction(1.0),
            bootstrap: false,
            seed: d as u64,
            oob_score: false,
        };
        let tree =
            fit_tree(&x, &y, &cfg, &mut rng::stream(cfg.seed, 0)).map_err(|e| e.to_string())?;
        let oracle = oracle_tree(&x, &y, depth);
        same_nodes(&tree, &oracle)
            .map_err(|e| format!("dataset {d} (n={n}, p={p}, depth={depth}): {e}"))?;
        let forest = fit_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
        same_nodes(&forest.trees[0], &oracle)
            .map_err(|e| format!("dataset {d} via forest: {e}"))?;
        splits += oracle
            .iter()
            .filter(|n| matches!(n, TreeNode::Split { .. }))
            .count();
    }

    let n = 300;
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..6).map(|_| normal(&mut r)).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| v[0] * v[1] + v[2].sin() + 0.1 * normal(&mut r))
        .collect();
    let cfg = ForestConfig {
        n_trees: 20,
        seed: 77,
        ..ForestConfig::default()
    };
    let a = fit_forest(&x, &y, &cfg)
        .map_err(|e| e.to_string())?
        .to_json()
        .map_err(|e| e.to_string())?;
    let b = fit_forest(&x, &y, &cfg)
        .map_err(|e| e.to_string())?
        .to_json()
        .map_err(|e| e.to_string())?;
    ensure(a == b, || "same seed gave different models".into())?;
    let other = ForestConfig { seed: 78, ..cfg };
    let c = fit_forest(&x, &y, &other)
        .map_err(|e| e.to_string())?
        .to_json()
        .map_err(|e| e.to_string())?;
    ensure(a != c, || "different seeds gave identical models".into())?;
    Ok(format!(
        "50 datasets, {splits} oracle splits matched; same seed bit-identical"
    ))
}

#[test]
fn criterion_4_forest_oracle_equivalence() {
    let t = Instant::now();
    report(
        4,
        "forest oracle equivalence",
        t,
        Duration::from_secs(5),
        criterion_4(),
    );
}

// ---------------------------------------------------------------------------
// 5. End-to-end on synthetic data

/// Frozen before the suite was run against the synthetic generator.
const SYNTH_R2_THRESHOLD: f64 = 0.8;
const SYNTH_TIME_COMPRESSION: f64 = 100.0;
const SYNTH_SNRS: [f64; 4] = [f64::INFINITY, 10.0, 3.0, 1.0];

/// One frozen configuration: a grid search per fold does not fit the
/// runtime budget on a single core.
fn frozen_grid() -> ForestGrid {
    ForestGrid {
        n_trees: vec![50],
        max_depth: vec![None],
        min_samples_leaf: vec![5],
        max_features: vec![MaxFeatures::Fraction(1.0 / 3.0)],
        bootstrap: true,
    }
}

fn loo_scores(ms: &[FeatureMatrix], grid: &ForestGrid) -> Result<(f64, f64), String> {
    let folds = leave_one_out(ms, grid, 5, 0).map_err(|e| e.to_string())?;
    let r: Vec<f64> = folds.iter().map(|f| f.r2).collect();
    Ok(mean_std(&r))
}

fn criterion_5() -> Result<String, String> {
    let base = SynthConfig {
        duration_s: 600.0,
        snr: 10.0,
        burst: aeforce::synth::BurstModel {
            gamma: 1.0,
            ..Default::default()
        },
        ..SynthConfig::default()
    }
    .time_compressed(SYNTH_TIME_COMPRESSION);
    let cfg = FineScaleConfig {
        forest: frozen_grid(),
        ..Default::default()
    };
    let mut per_snr: Vec<Vec<FeatureMatrix>> = vec![Vec::new(); SYNTH_SNRS.len()];
    for i in 0..5u64 {
        let b = SynthConfig {
            id: format!("synth-{i}"),
            seed: rng::job_seed(2024, i),
            ..base.clone()
        };
        for (j, (rec, _)) in snr_sweep(&b, &SYNTH_SNRS)
            .map_err(|e| e.to_string())?
            .iter()
            .enumerate()
        {
            per_snr[j].push(fine_matrix(rec, &cfg).map_err(|e| e.to_string())?);
        }
    }
    let mut levels = Vec::new();
    for ms in &per_snr {
        levels.push(loo_scores(ms, &cfg.forest)?);
    }
    let (m10, s10) = levels[1];
    ensure(m10 >= SYNTH_R2_THRESHOLD, || {
        format!("leave-one-out R² at snr 10 is {m10:.3} ± {s10:.3}, below {SYNTH_R2_THRESHOLD}")
    })?;
    for j in 1..levels.len() {
        let ((mp, sp), (mn, sn)) = (levels[j - 1], levels[j]);
        ensure(mn <= mp + sp.max(sn), || {
            format!(
                "R² rises from {mp:.3} (snr {}) to {mn:.3} (snr {}) beyond one std",
                SYNTH_SNRS[j - 1],
                SYNTH_SNRS[j]
            )
        })?;
    }
    let sweep: Vec<String> = SYNTH_SNRS
        .iter()
        .zip(&levels)
        .map(|(s, (m, sd))| format!("{s}: {m:.3}±{sd:.3}"))
        .collect();
    Ok(format!(
        "R² at snr 10 {m10:.3} ≥ {SYNTH_R2_THRESHOLD}; sweep {}",
        sweep.join(", ")
    ))
}

#[test]
fn criterion_5_synthetic_end_to_end() {
    let t = Instant::now();
    report(
        5,
        "synthetic end-to-end",
        t,
        Duration::from_secs(300),
        criterion_5(),
    );
}

// ---------------------------------------------------------------------------
// 6 to 9. Real data

fn dataset() -> Option<(PathBuf, Vec<ExperimentRecord>)> {
    let dir = std::env::var_os("AEFORCE_DATA_DIR").filter(|d| !d.is_empty())?;
    let dir = PathBuf::from(dir);
    let exps = aeforce::io::read_dataset(&dir)
        .unwrap_or_else(|e| panic!("reading {}: {e}", dir.display()));
    Some((dir, exps))
}

fn with_data(
    id: u32,
    name: &str,
    budget: Duration,
    f: impl FnOnce(Vec<ExperimentRecord>) -> Result<String, String>,
) {
    match dataset() {
        None => line(id, "SKIP", name, "AEFORCE_DATA_DIR is not set"),
        Some((_, exps)) => {
            let t = Instant::now();
            report(id, name, t, budget, f(exps));
        }
    }
}

fn eight_um(exps: &[ExperimentRecord]) -> Vec<&ExperimentRecord> {
    exps.iter()
        .filter(|e| (e.diameter_um - 8.0).abs() < 0.5)
        .collect()
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol
}

#[test]
fn criterion_6_fine_scale_reproduction() {
    with_data(
        6,
        "8 µm fine-scale reproduction",
        Duration::from_secs(30 * 60),
        |exps| {
            let eight = eight_um(&exps);
            ensure(eight.len() >= 2, || {
                format!("{} experiments of 8 µm", eight.len())
            })?;
            let mut parts = Vec::new();
            for (mode, want) in [
                (FeatureMode::FreqIndependent, 0.60),
                (FeatureMode::FreqDependent, 0.65),
            ] {
                let cfg = FineScaleConfig {
                    dt_s: 0.3,
                    feature_mode: mode,
                    ..Default::default()
                };
                let ms = eight
                    .iter()
                    .map(|e| fine_matrix(e, &cfg))
                    .collect::<aeforce::Result<Vec<_>>>()
                    .map_err(|e| e.to_string())?;
                let (m, s) = loo_scores(&ms, &cfg.forest)?;
                ensure(within(m, want, 0.10), || {
                    format!(
                        "{}: mean R² {m:.3} ± {s:.3}, expected {want} ± 0.10",
                        mode.name()
                    )
                })?;
                parts.push(format!("{} {m:.3}±{s:.3}", mode.name()));
            }
            Ok(parts.join(", "))
        },
    );
}

fn fd_matches(key: &FeatureKey, f_hz: f64, k: MomentOrder) -> bool {
    match key {
        FeatureKey::FreqDependent { f_hz: g, k: kk } => {
            let nominal = [100e3, 250e3, 500e3]
                .into_iter()
                .min_by(|a, b| (a - g).abs().total_cmp(&(b - g).abs()))
                .unwrap();
            nominal == f_hz && *kk == k
        }
        _ => false,
    }
}

#[test]
fn criterion_7_feature_importance() {
    with_data(
        7,
        "feature importance",
        Duration::from_secs(60 * 60),
        |exps| {
            let eight: Vec<ExperimentRecord> = eight_um(&exps).into_iter().cloned().collect();
            ensure(eight.len() >= 2, || {
                format!("{} experiments of 8 µm", eight.len())
            })?;
            let forest = ForestConfig::default();
            let mut notes = Vec::new();
            for (mode, saturate_at) in [
                (FeatureMode::FreqIndependent, 3),
                (FeatureMode::FreqDependent, 4),
            ] {
                let cfg = FineScaleConfig {
                    feature_mode: mode,
                    ..Default::default()
                };
                let mut m: Option<FeatureMatrix> = None;
                for e in &eight {
                    let part = fine_matrix(e, &cfg).map_err(|e| e.to_string())?;
                    match &mut m {
                        None => m = Some(part),
                        Some(all) => all.extend(part).map_err(|e| e.to_string())?,
                    }
                }
                let m = m.unwrap();
                let all: Vec<usize> = (0..m.n_features()).collect();
                let full = subset_r2(&m, &forest, &all).map_err(|e| e.to_string())?;
                let report = importance_subsets(&m, &forest, saturate_at, u128::MAX)
                    .map_err(|e| e.to_string())?;
                let sat = report.best[saturate_at - 1].r2;
                ensure(full - sat <= 0.02, || {
                    format!(
                        "{}: best {saturate_at}-subset R² {sat:.3} vs full {full:.3}",
                        mode.name()
                    )
                })?;
                notes.push(format!(
                    "{} n={saturate_at} {sat:.3} vs full {full:.3}",
                    mode.name()
                ));
                match mode {
                    FeatureMode::FreqIndependent => {
                        let col = |k| {
                            m.keys
                                .iter()
                                .position(|key| *key == FeatureKey::FreqIndependent { k })
                        };
                        let (a, b) = (col(MomentOrder::Finite(10)), col(MomentOrder::Infinite));
                        let (a, b) = a.zip(b).ok_or("k=10 or k=∞ column missing")?;
                        let rho = pipeline::pearson(&m.column(a), &m.column(b))
                            .map_err(|e| e.to_string())?;
                        ensure(within(rho, 0.995, 0.01), || {
                            format!("k=10 vs k=∞ Pearson {rho:.4}")
                        })?;
                        notes.push(format!("Pearson(k=10, k=∞) {rho:.4}"));
                    }
                    FeatureMode::FreqDependent => {
                        let best = &report.best[1].features;
                        let ok = best
                            .iter()
                            .any(|k| fd_matches(k, 100e3, MomentOrder::Finite(2)))
                            && best
                                .iter()
                                .any(|k| fd_matches(k, 250e3, MomentOrder::Infinite));
                        let names: Vec<String> = best.iter().map(|k| k.name()).collect();
                        ensure(ok, || format!("best pair {names:?}"))?;
                        notes.push(format!("best pair {names:?}"));
                    }
                }
            }
            Ok(notes.join("; "))
        },
    );
}

#[test]
fn criterion_8_drop_statistics() {
    with_data(8, "drop statistics", Duration::from_secs(10 * 60), |exps| {
        let report =
            drop_stats_summary(&exps, &DropStatsConfig::default()).map_err(|e| e.to_string())?;
        let all = report
            .groups
            .iter()
            .find(|g| g.label == "all")
            .ok_or("no pooled group")?;
        let rho = all
            .magnitude_duration_pearson
            .ok_or("pooled Pearson undefined")?;
        let frac = all.fraction_below_dt.ok_or("no drops detected")?;
        ensure(within(rho, 0.52, 0.05), || {
            format!("pooled magnitude-duration Pearson {rho:.3}")
        })?;
        ensure(frac >= 0.95, || {
            format!("{:.1}% of drops shorter than 300 ms", 100.0 * frac)
        })?;
        Ok(format!(
            "{} drops, Pearson {rho:.3}, {:.1}% below 300 ms",
            all.n_drops,
            100.0 * frac
        ))
    });
}

#[test]
fn criterion_9_transferability() {
    with_data(
        9,
        "transferability trend",
        Duration::from_secs(60 * 60),
        |exps| {
            let cells = pipeline::transfer_matrix(&exps, &TransferConfig::default())
                .map_err(|e| e.to_string())?;
            let mut notes = Vec::new();
            for s in pipeline::summarize_transfer(&cells) {
                let same = s
                    .same_mean
                    .ok_or_else(|| format!("{}: no same-diameter cells", s.mode.name()))?;
                let disjoint = s
                    .disjoint_mean
                    .ok_or_else(|| format!("{}: no disjoint cells", s.mode.name()))?;
                ensure(same >= disjoint, || {
                    format!("{}: same {same:.3} < disjoint {disjoint:.3}", s.mode.name())
                })?;
                ensure(disjoint > 0.0, || {
                    format!("{}: disjoint mean {disjoint:.3}", s.mode.name())
                })?;
                notes.push(format!(
                    "{} same {same:.3}, disjoint {disjoint:.3}",
                    s.mode.name()
                ));
            }
            Ok(notes.join("; "))
        },
    );
}
