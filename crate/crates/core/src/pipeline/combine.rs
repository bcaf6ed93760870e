//! Slope correction of an integrated fine-scale curve through coarse anchors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear curve through `(times[i], values[i])`, times strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Curve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::LengthMismatch(format!(
                "curve has {} times and {} values",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidData(
                "curve times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    /// Linear interpolation, clamped to the end values outside the support.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return self.values[0];
        }
        if i == self.times.len() {
            return self.values[i - 1];
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn knot_index(&self, t: f64, tol: f64) -> usize {
        self.times.partition_point(|&x| x < t - tol)
    }

    /// Add a knot at `t` unless one already lies within `tol`.
    fn insert_knot(&mut self, t: f64, tol: f64) {
        let i = self.knot_index(t, tol);
        if i < self.times.len() && (self.times[i] - t).abs() <= tol {
            return;
        }
        let v = self.eval(t);
        self.times.insert(i, t);
        self.values.insert(i, v);
    }
}

/// Force the curve through `anchors[n-1]` at `origin + n·ΔT` for `n = 1..=N_c`.
///
/// For each `n` in turn, `δ_n = (F_n - f_{n-1}(nΔT)) / ΔT` and every point
/// with `t > origin + (n-1)ΔT` is raised by `δ_n · (t - origin - (n-1)ΔT)`.
/// Knots are inserted at the anchor times so the correction stays exact
/// when they fall inside a fine segment.
pub fn combine(fine: &Curve, anchors: &[f64], coarse_dt: f64, origin: f64) -> Result<Curve> {
    if !(coarse_dt > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "coarse window {coarse_dt} must be positive"
        )));
    }
    let n_c = anchors.len();
    let tol = 1e-9 * coarse_dt.max(origin.abs() + n_c as f64 * coarse_dt);
    let need = origin + n_c as f64 * coarse_dt;
    if fine.start() > origin + tol || fine.end() < need - tol {
        return Err(Error::LengthMismatch(format!(
            "fine curve covers [{}, {}] but {} anchors need [{}, {}]",
            fine.start(),
            fine.end(),
            n_c,
            origin,
            need
        )));
    }
    let mut out = fine.clone();
    for n in 1..=n_c {
        out.insert_knot(origin + n as f64 * coarse_dt, tol);
    }
    let knots: Vec<usize> = (1..=n_c)
        .map(|n| out.knot_index(origin + n as f64 * coarse_dt, tol))
        .collect();
    for (n, (&target, &k)) in anchors.iter().zip(&knots).enumerate() {
        let left = origin + n as f64 * coarse_dt;
        let delta = (target - out.values[k]) / coarse_dt;
        if delta == 0.0 {
            continue;
        }
        let first = out.times.partition_point(|&x| x <= left + tol);
        for i in first..out.times.len() {
            out.values[i] += delta * (out.times[i] - left);
        }
        // the anchor knot carries the anchor exactly
        out.values[k] = target;
    }
    Ok(out)
}
