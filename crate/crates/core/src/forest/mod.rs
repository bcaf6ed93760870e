//! Random-forest regression: bagged CART trees averaged at prediction time.

mod cv;
mod tree;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::FeatureKey;
use crate::pipeline::eval::r2;
use crate::rng;

pub use cv::{default_grid, fold_bounds, grid_search_cv, CvResult, ForestGrid};
pub use tree::{features_per_node, fit_tree, fit_tree_on, midpoint, Tree, TreeNode, TIE_TOLERANCE};

/// How many features a node may consider.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxFeatures {
    /// `ceil(fraction * n_features)`, `0 < fraction <= 1`.
    Fraction(f64),
    /// `floor(sqrt(n_features))`, at least 1.
    Sqrt,
}

impl Serialize for MaxFeatures {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaxFeatures::Fraction(f) => s.serialize_f64(*f),
            MaxFeatures::Sqrt => s.serialize_str("sqrt"),
        }
    }
}

impl<'de> Deserialize<'de> for MaxFeatures {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(f) => Ok(MaxFeatures::Fraction(f)),
            Raw::Str(s) if s == "sqrt" => Ok(MaxFeatures::Sqrt),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "unknown max_features rule '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
    /// Record the out-of-bag R² (bootstrap only).
    #[serde(default)]
    pub oob_score: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Fraction(1.0 / 3.0),
            bootstrap: true,
            seed: 0,
            oob_score: false,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::ConfigInvalid("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::ConfigInvalid(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::ConfigInvalid(format!(
                    "max_features fraction {f} not in (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// A fitted forest.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    pub feature_keys: Vec<FeatureKey>,
    pub n_features: usize,
    pub oob_score: Option<f64>,
}

/// Fit `cfg.n_trees` trees; tree `t` draws from stream `t` of `cfg.seed`,
/// bootstrap indices first, then per-node feature subsets.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    tree::check_shape(x, y)?;
    cfg.validate()?;
    let n = y.len();
    let fitted: Vec<(Tree, Option<Vec<bool>>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(cfg.seed, t as u64);
            if cfg.bootstrap {
                let mut rows: Vec<usize> = (0..n).map(|_| rng::below(&mut r, n)).collect();
                let mut in_bag = vec![false; n];
                for &i in &rows {
                    in_bag[i] = true;
                }
                (fit_tree_on(x, y, &mut rows, cfg, &mut r), Some(in_bag))
            } else {
                let mut rows: Vec<usize> = (0..n).collect();
                (fit_tree_on(x, y, &mut rows, cfg, &mut r), None)
            }
        })
        .collect();
    let oob_score = if cfg.bootstrap && cfg.oob_score {
        oob_r2(x, y, &fitted)
    } else {
        None
    };
    Ok(ForestModel {
        trees: fitted.into_iter().map(|(t, _)| t).collect(),
        config: cfg.clone(),
        feature_keys: Vec::new(),
        n_features: x[0].len(),
        oob_score,
    })
}

fn oob_r2(x: &[Vec<f64>], y: &[f64], fitted: &[(Tree, Option<Vec<bool>>)]) -> Option<f64> {
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for (i, row) in x.iter().enumerate() {
        let (mut s, mut c) = (0.0, 0usize);
        for (t, bag) in fitted {
            if bag.as_ref().is_some_and(|b| !b[i]) {
                s += t.predict(row);
                c += 1;
            }
        }
        if c > 0 {
            truth.push(y[i]);
            pred.push(s / c as f64);
        }
    }
    r2(&truth, &pred).ok()
}

impl ForestModel {
    pub fn with_keys(mut self, keys: Vec<FeatureKey>) -> Self {
        self.feature_keys = keys;
        self
    }

    /// Mean of the per-tree leaf values.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::ArityMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict_batch(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        x.par_iter().map(|r| self.predict(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(&SerializedForest::from(self))
            .map_err(|e| Error::json("serialising model", e))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: SerializedForest =
            serde_json::from_str(s).map_err(|e| Error::json("parsing model", e))?;
        raw.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

pub const MODEL_FORMAT: &str = "aeforce-forest";
pub const MODEL_VERSION: u32 = 1;

/// Trees as parallel arrays; leaves have `feature = -1`, `left = right = -1`.
#[derive(Debug, Serialize, Deserialize)]
struct FlatTree {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    value: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SerializedForest {
    format: String,
    version: u32,
    config: ForestConfig,
    feature_keys: Vec<FeatureKey>,
    n_features: usize,
    oob_score: Option<f64>,
    trees: Vec<FlatTree>,
}

impl From<&ForestModel> for SerializedForest {
    fn from(m: &ForestModel) -> Self {
        let trees = m
            .trees
            .iter()
            .map(|t| {
                let mut f = FlatTree {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    value: Vec::new(),
                };
                for n in &t.nodes {
                    match *n {
                        TreeNode::Leaf { value } => {
                            f.feature.push(-1);
                            f.threshold.push(0.0);
                            f.left.push(-1);
                            f.right.push(-1);
                            f.value.push(value);
                        }
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            f.feature.push(feature as i64);
                            f.threshold.push(threshold);
                            f.left.push(left as i64);
                            f.right.push(right as i64);
                            f.value.push(0.0);
                        }
                    }
                }
                f
            })
            .collect();
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: m.config.clone(),
            feature_keys: m.feature_keys.clone(),
            n_features: m.n_features,
            oob_score: m.oob_score,
            trees,
        }
    }
}

impl SerializedForest {
    fn into_model(self) -> Result<ForestModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported model format {} v{}",
                self.format, self.version
            )));
        }
        let bad = |msg: &str| Error::InvalidData(format!("corrupt model: {msg}"));
        let mut trees = Vec::with_capacity(self.trees.len());
        for f in self.trees {
            let n = f.feature.len();
            if [
                f.threshold.len(),
                f.left.len(),
                f.right.len(),
                f.value.len(),
            ] != [n; 4]
                || n == 0
            {
                return Err(bad("tree arrays differ in length"));
            }
            let mut nodes = Vec::with_capacity(n);
            for i in 0..n {
                if f.feature[i] < 0 {
                    nodes.push(TreeNode::Leaf { value: f.value[i] });
                } else {
                    let (l, r) = (f.left[i], f.right[i]);
                    if l <= i as i64 || r <= i as i64 || l >= n as i64 || r >= n as i64 {
                        return Err(bad("child index out of range"));
                    }
                    if f.feature[i] as usize >= self.n_features {
                        return Err(bad("feature index out of range"));
                    }
                    nodes.push(TreeNode::Split {
                        feature: f.feature[i] as usize,
                        threshold: f.threshold[i],
                        left: l as usize,
                        right: r as usize,
                    });
                }
            }
            trees.push(Tree { nodes });
        }
        if trees.is_empty() {
            return Err(bad("no trees"));
        }
        Ok(ForestModel {
            trees,
            config: self.config,
            feature_keys: self.feature_keys,
            n_features: self.n_features,
            oob_score: self.oob_score,
        })
    }
}
