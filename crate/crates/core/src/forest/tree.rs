//! Variance-reduction regression trees.

use rand::RngCore;

use super::{ForestConfig, MaxFeatures};
use crate::error::{Error, Result};
use crate::rng;

/// Relative tolerance under which two split impurities count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

/// Number of features tried at each node.
pub fn features_per_node(rule: MaxFeatures, n_features: usize) -> usize {
    let m = match rule {
        MaxFeatures::Fraction(f) => (f * n_features as f64 - 1e-9).ceil() as usize,
        MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
    };
    m.clamp(1, n_features.max(1))
}

struct Builder<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    n_try: usize,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, f64)>,
}

struct Candidate {
    sse: f64,
    feature: usize,
    threshold: f64,
}

impl<R: RngCore> Builder<'_, R> {
    fn build(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / n as f64;
        self.nodes.push(TreeNode::Leaf { value: mean });

        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(self.y[r]), hi.max(self.y[r]))
            });
        if !depth_ok || n < 2 * self.cfg.min_samples_leaf || lo == hi {
            return id;
        }
        let Some(best) = self.best_split(rows, mean) else {
            return id;
        };
        // stable partition keeps row order deterministic
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r][best.feature] <= best.threshold);
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.x[0].len();
        let mut feats: Vec<usize> = (0..p).collect();
        if self.n_try < p {
            // partial Fisher-Yates
            for i in 0..self.n_try {
                let j = i + rng::below(self.rng, p - i);
                feats.swap(i, j);
            }
            feats.truncate(self.n_try);
            feats.sort_unstable();
        }
        feats
    }

    fn best_split(&mut self, rows: &[usize], mean: f64) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let parent_sse: f64 = rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum();
        let tol = TIE_TOLERANCE * parent_sse;
        let mut best: Option<Candidate> = None;
        for f in self.candidate_features() {
            let pairs = &mut self.scratch;
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r] - mean)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            let (mut s, mut sq) = (0.0, 0.0);
            for i in 0..n - 1 {
                s += pairs[i].1;
                sq += pairs[i].1 * pairs[i].1;
                let nl = i + 1;
                let nr = n - nl;
                if pairs[i].0 == pairs[i + 1].0 || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let sse_l = sq - s * s / nl as f64;
                let sr = total - s;
                let sse_r = (total_sq - sq) - sr * sr / nr as f64;
                let sse = sse_l + sse_r;
                if best.as_ref().is_none_or(|b| sse < b.sse - tol) {
                    best = Some(Candidate {
                        sse,
                        feature: f,
                        threshold: midpoint(pairs[i].0, pairs[i + 1].0),
                    });
                }
            }
        }
        best
    }
}

/// Midpoint of two consecutive distinct values, never equal to the upper one.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

/// Fit one tree on the rows listed in `rows` (repeats allowed).
pub fn fit_tree_on<R: RngCore>(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &mut [usize],
    cfg: &ForestConfig,
    rng: &mut R,
) -> Tree {
    let n_try = features_per_node(cfg.max_features, x[0].len());
    let mut b = Builder {
        x,
        y,
        cfg,
        n_try,
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(rows.len()),
    };
    b.build(rows, 0);
    Tree { nodes: b.nodes }
}

/// Fit one tree on all rows of `x`.
pub fn fit_tree<R: RngCore>(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &ForestConfig,
    rng: &mut R,
) -> Result<Tree> {
    check_shape(x, y)?;
    let mut rows: Vec<usize> = (0..y.len()).collect();
    Ok(fit_tree_on(x, y, &mut rows, cfg, rng))
}

pub(crate) fn check_shape(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows of X but {} targets",
            x.len(),
            y.len()
        )));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::ShapeMismatch("X has no feature columns".into()));
    }
    if let Some(i) = x.iter().position(|r| r.len() != p) {
        return Err(Error::ShapeMismatch(format!(
            "row {i} has {} features, expected {p}",
            x[i].len()
        )));
    }
    Ok(())
}
