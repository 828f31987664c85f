//! Flat `section.key = value` engine configuration.
//!
//! ```text
//! # comment
//! model.kind = lightgcn
//! train.large_batch = 150000
//! ```
//!
//! Every key is optional; unknown or repeated keys are rejected. The
//! canonical form lists every key once, in [`KEYS`] order.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, WriteMode};
use crate::models::{Combine, Dataflow, ModelConfig, ModelKind};
use crate::train::{LrScaling, OptimizerKind, RegScope, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub model: ModelConfig,
    pub dataflow: Dataflow,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub eval_k: usize,
    /// Evaluate every this many epochs during training; 0 disables.
    pub eval_every: usize,
    pub workers: usize,
    pub sddmm_write: WriteMode,
    pub spmm_write: WriteMode,
    pub graph: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::new(ModelKind::LightGcn, 2, 64)
                .expect("default model config is valid")
                .with_normalization(true),
            dataflow: Dataflow::Optimized,
            train: TrainConfig::default(),
            train_fraction: 0.9,
            eval_k: 20,
            eval_every: 1,
            workers: 1,
            sddmm_write: WriteMode::NonTemporal,
            spmm_write: WriteMode::Normal,
            graph: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "model.kind",
    "model.layers",
    "model.dim",
    "model.combine",
    "model.normalize",
    "model.dataflow",
    "train.base_batch",
    "train.base_lr",
    "train.large_batch",
    "train.warmup_epochs",
    "train.warmup_divisor",
    "train.epochs",
    "train.neg_per_pos",
    "train.seed",
    "train.optimizer",
    "train.lr_scaling",
    "train.l2",
    "train.reg_scope",
    "train.train_fraction",
    "eval.k",
    "eval.every",
    "kernels.workers",
    "kernels.sddmm_write",
    "kernels.spmm_write",
    "paths.graph",
    "paths.out_dir",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl EngineConfig {
    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "model.kind" => self.model.kind = parse_value::<ModelKind>(key, v)?,
            "model.layers" => self.model.num_layers = parse_value(key, v)?,
            "model.dim" => self.model.embed_dim = parse_value(key, v)?,
            "model.combine" => self.model.combine = parse_value::<Combine>(key, v)?,
            "model.normalize" => self.model.normalize_by_degree = parse_value(key, v)?,
            "model.dataflow" => self.dataflow = parse_value::<Dataflow>(key, v)?,
            "train.base_batch" => self.train.base_batch = parse_value(key, v)?,
            "train.base_lr" => self.train.base_lr = parse_value(key, v)?,
            "train.large_batch" => self.train.large_batch = parse_value(key, v)?,
            "train.warmup_epochs" => self.train.warmup_epochs = parse_value(key, v)?,
            "train.warmup_divisor" => self.train.warmup_divisor = parse_value(key, v)?,
            "train.epochs" => self.train.epochs = parse_value(key, v)?,
            "train.neg_per_pos" => self.train.neg_per_pos = parse_value(key, v)?,
            "train.seed" => self.train.seed = parse_value(key, v)?,
            "train.optimizer" => self.train.optimizer = parse_value::<OptimizerKind>(key, v)?,
            "train.lr_scaling" => self.train.lr_scaling = parse_value::<LrScaling>(key, v)?,
            "train.l2" => self.train.l2_coeff = parse_value(key, v)?,
            "train.reg_scope" => self.train.reg_scope = parse_value::<RegScope>(key, v)?,
            "train.train_fraction" => self.train_fraction = parse_value(key, v)?,
            "eval.k" => self.eval_k = parse_value(key, v)?,
            "eval.every" => self.eval_every = parse_value(key, v)?,
            "kernels.workers" => self.workers = parse_value(key, v)?,
            "kernels.sddmm_write" => self.sddmm_write = parse_value::<WriteMode>(key, v)?,
            "kernels.spmm_write" => self.spmm_write = parse_value::<WriteMode>(key, v)?,
            "paths.graph" => self.graph = (!v.is_empty()).then(|| PathBuf::from(v)),
            "paths.out_dir" => self.out_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Current text value of `key`.
    pub fn get(&self, key: &str) -> Result<String> {
        let path = |p: &Path| p.display().to_string();
        Ok(match key {
            "model.kind" => self.model.kind.to_string(),
            "model.layers" => self.model.num_layers.to_string(),
            "model.dim" => self.model.embed_dim.to_string(),
            "model.combine" => self.model.combine.to_string(),
            "model.normalize" => self.model.normalize_by_degree.to_string(),
            "model.dataflow" => self.dataflow.to_string(),
            "train.base_batch" => self.train.base_batch.to_string(),
            "train.base_lr" => self.train.base_lr.to_string(),
            "train.large_batch" => self.train.large_batch.to_string(),
            "train.warmup_epochs" => self.train.warmup_epochs.to_string(),
            "train.warmup_divisor" => self.train.warmup_divisor.to_string(),
            "train.epochs" => self.train.epochs.to_string(),
            "train.neg_per_pos" => self.train.neg_per_pos.to_string(),
            "train.seed" => self.train.seed.to_string(),
            "train.optimizer" => self.train.optimizer.to_string(),
            "train.lr_scaling" => self.train.lr_scaling.to_string(),
            "train.l2" => self.train.l2_coeff.to_string(),
            "train.reg_scope" => self.train.reg_scope.to_string(),
            "train.train_fraction" => self.train_fraction.to_string(),
            "eval.k" => self.eval_k.to_string(),
            "eval.every" => self.eval_every.to_string(),
            "kernels.workers" => self.workers.to_string(),
            "kernels.sddmm_write" => self.sddmm_write.to_string(),
            "kernels.spmm_write" => self.spmm_write.to_string(),
            "paths.graph" => self.graph.as_deref().map(path).unwrap_or_default(),
            "paths.out_dir" => path(&self.out_dir),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key `{key}`", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate().map_err(|e| Error::Config(strip_prefix(&e)))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.eval_k == 0 || self.workers == 0 {
            return Err(Error::Config("eval.k and kernels.workers must be positive".into()));
        }
        Ok(())
    }

    pub fn kernels(&self) -> KernelConfig {
        let mut k = KernelConfig::with_workers(self.workers);
        k.sddmm.write_mode = self.sddmm_write;
        k.spmm.write_mode = self.spmm_write;
        k
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

impl fmt::Display for EngineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in KEYS {
            writeln!(f, "{key} = {}", self.get(key).map_err(|_| fmt::Error)?)?;
        }
        Ok(())
    }
}

impl FromStr for EngineConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = EngineConfig::default();
        let text = c.to_string();
        assert_eq!(text.lines().count(), KEYS.len());
        assert!(text.contains("model.kind = lightgcn\n"));
        assert!(text.contains("train.base_lr = 0.0001\n"));
        assert_eq!(EngineConfig::parse(&text).unwrap(), c);
        assert_eq!(EngineConfig::parse("").unwrap(), c);
    }

    #[test]
    fn partial_file_with_comments() {
        let c = EngineConfig::parse("# run\nmodel.kind = ngcf\n\n  train.large_batch=150000  \npaths.graph = data/g.tsv\n").unwrap();
        assert_eq!(c.model.kind, ModelKind::Ngcf);
        assert_eq!(c.train.large_batch, 150_000);
        assert_eq!(c.graph, Some(PathBuf::from("data/g.tsv")));
        let canon = c.to_string();
        assert_eq!(EngineConfig::parse(&canon).unwrap().to_string(), canon);
    }

    #[test]
    fn rejections() {
        for bad in [
            "model.colour = red",
            "model.kind = gcn",
            "model.layers = -1",
            "train.epochs = 3\ntrain.epochs = 4",
            "just words",
            "train.train_fraction = 1.5",
            "model.dim = 0",
        ] {
            let e = EngineConfig::parse(bad).unwrap_err();
            assert_eq!(e.kind(), "config", "{bad}: {e}");
        }
    }

    proptest! {
        #[test]
        fn canonical_form_is_a_fixed_point(
            layers in 1usize..5,
            dim in 1usize..300,
            lr in 1e-6f64..1.0,
            batch in 1usize..100_000,
            seed in any::<u64>(),
            ngcf in any::<bool>(),
            frac in 0.01f64..0.99,
        ) {
            let text = format!(
                "model.kind = {}\nmodel.layers = {layers}\nmodel.dim = {dim}\ntrain.base_lr = {lr}\n\
                 train.base_batch = {batch}\ntrain.large_batch = {}\ntrain.seed = {seed}\ntrain.train_fraction = {frac}\n",
                if ngcf { "ngcf" } else { "lightgcn" },
                batch * 2,
            );
            let c = EngineConfig::parse(&text).unwrap();
            let canon = c.to_string();
            let again = EngineConfig::parse(&canon).unwrap();
            prop_assert_eq!(&again, &c);
            prop_assert_eq!(again.to_string(), canon);
        }
    }
}
