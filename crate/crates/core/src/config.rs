//! Run configuration as one flat namespace of dotted keys.
//!
//! The resolved configuration is the defaults, overlaid with a JSON file
//! (flat `{"fine.dt_s": 0.3}` or nested objects), overlaid with command-line
//! flags. Unknown keys are rejected. The top-level `seed` is copied into
//! every module seed when the configuration is resolved.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::forest::{ForestConfig, MaxFeatures};
use crate::pipeline::{CoarseScaleConfig, FineScaleConfig, TransferConfig};
use crate::stats::{DropStatsConfig, Taper};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    /// Frozen forest used for every single-feature and subset score.
    pub forest: ForestConfig,
    /// Largest subset size searched.
    pub n_max: usize,
    /// Largest number of subsets allowed for any size.
    pub max_combinations: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig {
                n_trees: 100,
                max_features: MaxFeatures::Fraction(1.0 / 3.0),
                ..Default::default()
            },
            n_max: 4,
            max_combinations: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    /// Segment length, s.
    pub window_s: f64,
    pub taper: Taper,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            window_s: 160e-6,
            taper: Taper::Rectangular,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StatsSection {
    pub drops: DropStatsConfig,
    pub spectrum: SpectrumConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub experiment: SynthConfig,
    /// Experiments written by one `synth` run.
    pub count: usize,
    /// AE slow-down factor; 1 keeps real-time rates.
    pub time_compression: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            experiment: SynthConfig::default(),
            count: 1,
            time_compression: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub seed: u64,
    pub fine: FineScaleConfig,
    pub coarse: CoarseScaleConfig,
    pub importance: ImportanceConfig,
    pub transfer: TransferConfig,
    pub stats: StatsSection,
    pub synth: SynthSection,
}

/// Flatten nested objects into dotted keys; arrays and scalars are leaves.
pub fn flatten(v: &Value) -> Map<String, Value> {
    fn go(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, x) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    go(&key, x, out);
                }
            }
            Value::Object(_) if prefix.is_empty() => {}
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = Map::new();
    go("", v, &mut out);
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(flat: &Map<String, Value>) -> Value {
    let mut root = Map::new();
    for (k, v) in flat {
        let mut cur = &mut root;
        let parts: Vec<&str> = k.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted keys do not collide with leaves");
        }
        cur.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    pub fn to_flat(&self) -> Map<String, Value> {
        flatten(&serde_json::to_value(self).expect("config serialises"))
    }

    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self> {
        serde_json::from_value(unflatten(flat)).map_err(|e| Error::json("config", e))
    }

    /// Replace keys of `self` with those in `overlay`.
    pub fn overlay(&self, overlay: &Map<String, Value>) -> Result<Self> {
        let mut flat = self.to_flat();
        for (k, v) in flatten(&Value::Object(overlay.clone())) {
            if !flat.contains_key(&k) {
                return Err(Error::ConfigInvalid(format!("unknown config key '{k}'")));
            }
            flat.insert(k, v);
        }
        Self::from_flat(&flat)
    }

    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let v: Value = crate::io::read_json(path)?;
        match v {
            Value::Object(m) => self.overlay(&m),
            _ => Err(Error::ConfigInvalid(format!(
                "{}: config must be a JSON object",
                path.display()
            ))),
        }
    }

    /// Copy the top-level seed into every module and validate.
    pub fn resolve(mut self) -> Result<Self> {
        let s = self.seed;
        self.fine.seed = s;
        self.coarse.seed = s;
        self.importance.forest.seed = s;
        self.transfer.forest.seed = s;
        self.transfer.fine.seed = s;
        self.synth.experiment.seed = s;
        self.fine.validate()?;
        self.coarse.validate()?;
        self.synth.experiment.validate()?;
        if !(self.synth.time_compression > 0.0) {
            return Err(Error::ConfigInvalid(
                "synth.time_compression must be positive".into(),
            ));
        }
        Ok(self)
    }

    /// Flat JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let flat: std::collections::BTreeMap<String, Value> = self.to_flat().into_iter().collect();
        let mut s = serde_json::to_string_pretty(&flat).expect("config serialises");
        s.push('\n');
        s
    }
}
