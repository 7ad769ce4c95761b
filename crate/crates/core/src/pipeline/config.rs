use serde::{Deserialize, Serialize};

use crate::clustering::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::coupling::DEFAULT_LAP_CAP;
use crate::datasets::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::io::hex_digest;
use crate::net::{Activation, AdamConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RectifiedFlow,
    OtCfm,
    CotFm,
    Reflow,
}

impl Method {
    pub const TABLE1: [Method; 3] = [Method::RectifiedFlow, Method::OtCfm, Method::CotFm];

    pub fn name(self) -> &'static str {
        match self {
            Method::RectifiedFlow => "rectified_flow",
            Method::OtCfm => "ot_cfm",
            Method::CotFm => "cot_fm",
            Method::Reflow => "reflow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rectified_flow" => Ok(Method::RectifiedFlow),
            "ot_cfm" => Ok(Method::OtCfm),
            "cot_fm" => Ok(Method::CotFm),
            "reflow" => Ok(Method::Reflow),
            other => Err(Error::parameter("method", format!("unknown method `{other}`"))),
        }
    }

    /// Methods that start from a rectified-flow pretrained model.
    pub fn uses_pretrained(self) -> bool {
        matches!(self, Method::RectifiedFlow | Method::CotFm | Method::Reflow)
    }
}

/// How training minibatches and samples pick a cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSampling {
    /// Probability proportional to cluster size.
    Proportional,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            data: base,
            init: base + 1_000,
            train: base + 2_000,
            eval: base + 3_000,
        }
    }

    pub fn offset(self, by: u64) -> Self {
        Self {
            data: self.data + by,
            init: self.init + by,
            train: self.train + by,
            eval: self.eval + by,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![3, 64, 64, 64, 2],
            activation: Activation::Tanh,
        }
    }
}

/// One experiment cell. Every field has a TOML key of the same name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Training targets; `dataset.n` is the training-set size.
    pub dataset: DatasetSpec,
    pub method: Method,
    pub k: usize,
    /// Epochs from scratch (baselines and the pretrained bootstrap).
    pub epochs: usize,
    /// Fine-tuning epochs per alternation round (and per reflow round).
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alternations: usize,
    pub t_train_reverse: usize,
    pub t_sample: usize,
    pub n_eval: usize,
    /// Minibatch size of the batch-wise OT baseline.
    pub ot_batch: usize,
    pub lap_cap: usize,
    pub cluster_sampling: ClusterSampling,
    pub recluster_each_round: bool,
    /// Global-norm gradient clipping; 0 disables it.
    pub grad_clip: f64,
    /// Std of the global isotropic source.
    pub source_std: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Number of sampling trajectories written for plotting.
    pub trajectory_dump: usize,
    pub net: NetConfig,
    pub seeds: Seeds,
}

/// Training points per 2D dataset. Two minibatches per epoch.
pub const TRAIN_N_2D: usize = 1024;

impl ExperimentConfig {
    pub fn protocol_2d(kind: DatasetKind, method: Method) -> Self {
        Self {
            dataset: DatasetSpec::default_for(kind, TRAIN_N_2D),
            method,
            k: 5,
            epochs: 500,
            finetune_epochs: 250,
            batch_size: 512,
            lr: 1e-3,
            alternations: 2,
            t_train_reverse: 100,
            t_sample: 100,
            n_eval: 2000,
            ot_batch: 512,
            lap_cap: DEFAULT_LAP_CAP,
            cluster_sampling: ClusterSampling::Proportional,
            recluster_each_round: false,
            grad_clip: 0.0,
            source_std: 0.6,
            kmeans_max_iter: DEFAULT_MAX_ITER,
            kmeans_tol: DEFAULT_TOL,
            trajectory_dump: 64,
            net: NetConfig::default(),
            seeds: Seeds::from_base(0),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let at_least_one = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("t_train_reverse", self.t_train_reverse),
            ("t_sample", self.t_sample),
            ("n_eval", self.n_eval),
            ("ot_batch", self.ot_batch),
            ("lap_cap", self.lap_cap),
            ("kmeans_max_iter", self.kmeans_max_iter),
            ("k", self.k),
        ];
        for (field, v) in at_least_one {
            if v == 0 {
                return Err(Error::parameter(field, "must be at least 1"));
            }
        }
        if self.method == Method::CotFm && self.alternations == 0 {
            return Err(Error::parameter("alternations", "cot_fm needs at least 1 round"));
        }
        if self.k > self.dataset.n {
            return Err(Error::parameter("k", "more clusters than training points"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::parameter("lr", "must be > 0"));
        }
        if !(self.source_std > 0.0 && self.source_std.is_finite()) {
            return Err(Error::parameter("source_std", "must be > 0"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::parameter("grad_clip", "must be >= 0"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex_digest(serde_json::to_string(self).unwrap().as_bytes())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `key=value` overrides; `key` is a dotted path that must
    /// already exist in the config, `value` a TOML literal (bare words are
    /// taken as strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::parameter("override", format!("`{ov}` is not key=value")))?;
            let key = key.trim();
            let value = parse_literal(raw.trim());
            let mut slot = &mut root;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .ok_or_else(|| Error::parameter(key, "no such config key"))?;
            }
            *slot = coerce(slot, value);
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Identity of the rectified-flow bootstrap this config would train.
    pub fn pretrain_key(&self) -> String {
        let key = (
            &self.dataset,
            self.epochs,
            self.batch_size,
            self.lr,
            self.grad_clip,
            self.source_std,
            &self.net,
            self.seeds.data,
            self.seeds.init,
            self.seeds.train,
        );
        hex_digest(serde_json::to_string(&key).unwrap().as_bytes())
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Integers written where floats are expected (`lr=1`) become floats.
fn coerce(current: &toml::Value, value: toml::Value) -> toml::Value {
    match (current, value) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    }
}
