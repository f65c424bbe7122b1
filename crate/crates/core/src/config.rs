//! Flat `key = value` configuration files.
//!
//! Blank lines, `#` comment lines and trailing ` # ...` comments are ignored.
//! Keys may be written with `-` or `_`; they are normalised to `_`. A key may
//! appear once.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::data_line;
use crate::model::{UpdateOrder, Variant};
use crate::tensor::Precision;
use crate::train::Profile;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    pairs: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let Some(line) = data_line(raw) else {
                continue;
            };
            let line = line.split(" #").next().unwrap_or(line);
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "expected `key = value`".into(),
                });
            };
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "empty key".into(),
                });
            }
            if pairs.iter().any(|(p, _)| *p == key) {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            pairs.push((key, v.trim().to_owned()));
        }
        Ok(Self { pairs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.iter().find(|(k, _)| *k == key).map(|(_, v)| v)
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        raw.parse()
            .map_err(|e| Error::Config(format!("bad value `{raw}` for `{key}`: {e}")))
    }
}

/// Every setting a run can take. `None` means "use the profile default".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub facts: Option<PathBuf>,
    pub types: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub l_max: Option<usize>,
    pub variant: Option<Variant>,
    pub t_max: Option<usize>,
    pub dim: Option<usize>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub deterministic: Option<bool>,
    pub update_order: Option<UpdateOrder>,
    pub clip_norm: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub precision: Option<Precision>,
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for (key, _) in kv.iter() {
            match key {
                "facts" => c.facts = Some(kv.parse(key)?),
                "types" => c.types = Some(kv.parse(key)?),
                "queries" => c.queries = Some(kv.parse(key)?),
                "profile" => c.profile = Some(kv.parse(key)?),
                "seed" => c.seed = Some(kv.parse(key)?),
                "l_max" => c.l_max = Some(kv.parse(key)?),
                "variant" => c.variant = Some(kv.parse(key)?),
                "t_max" => c.t_max = Some(kv.parse(key)?),
                "dim" => c.dim = Some(kv.parse(key)?),
                "epochs" => c.epochs = Some(kv.parse(key)?),
                "steps" => c.steps = Some(kv.parse(key)?),
                "batch" => c.batch = Some(kv.parse(key)?),
                "lr" => c.lr = Some(kv.parse(key)?),
                "checkpoint" => c.checkpoint = Some(kv.parse(key)?),
                "out" => c.out = Some(kv.parse(key)?),
                "deterministic" => c.deterministic = Some(kv.parse(key)?),
                "update_order" => c.update_order = Some(kv.parse(key)?),
                "clip_norm" => c.clip_norm = Some(kv.parse(key)?),
                "checkpoint_every" => c.checkpoint_every = Some(kv.parse(key)?),
                "precision" => {
                    c.precision = Some(match kv.get(key).unwrap() {
                        "f32" | "32" => Precision::F32,
                        "f64" | "64" => Precision::F64,
                        other => {
                            return Err(Error::Config(format!(
                                "bad value `{other}` for `precision` (f32 or f64)"
                            )))
                        }
                    })
                }
                _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => {
                RunConfig { $($f: over.$f.or(self.$f)),* }
            };
        }
        pick!(
            facts, types, queries, profile, seed, l_max, variant, t_max, dim, epochs, steps,
            batch, lr, checkpoint, out, deterministic, update_order, clip_norm,
            checkpoint_every, precision
        )
    }
}
