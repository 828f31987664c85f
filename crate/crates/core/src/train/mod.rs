//! BPR training: tuple sampling, loss, learning-rate scaling, the warm-up
//! batch schedule and the training loop.

mod fit;
mod optim;
mod sampler;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::scalar::Scalar;

pub use fit::{bpr_step, CsvMetrics, EpochStats, MetricsSink, NullMetrics, StepMetrics, TrainLog, Trainer};
pub use optim::{Optimizer, OptimizerKind};
pub use sampler::{sample_bpr_batch, BprBatch};

/// How the learning rate grows with the batch size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LrScaling {
    #[default]
    Linear,
    Sqrt,
}

impl fmt::Display for LrScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrScaling::Linear => "linear",
            LrScaling::Sqrt => "sqrt",
        })
    }
}

impl FromStr for LrScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LrScaling::Linear),
            "sqrt" => Ok(LrScaling::Sqrt),
            other => Err(Error::InvalidArgument(format!("unknown lr scaling `{other}`"))),
        }
    }
}

/// Which parameters the L2 penalty covers. Layer weights are always
/// included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum RegScope {
    /// Ego embeddings of the batch's users and items, averaged per tuple.
    #[default]
    Batch,
    /// Every parameter.
    All,
}

impl fmt::Display for RegScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegScope::Batch => "batch",
            RegScope::All => "all",
        })
    }
}

impl FromStr for RegScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(RegScope::Batch),
            "all" => Ok(RegScope::All),
            other => Err(Error::InvalidArgument(format!("unknown regularization scope `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Regularization {
    pub coeff: f64,
    pub scope: RegScope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_batch: usize,
    pub base_lr: f64,
    pub large_batch: usize,
    pub warmup_epochs: usize,
    pub warmup_divisor: usize,
    pub epochs: usize,
    pub neg_per_pos: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lr_scaling: LrScaling,
    pub l2_coeff: f64,
    pub reg_scope: RegScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_batch: 1000,
            base_lr: 1e-4,
            large_batch: 1000,
            warmup_epochs: 2,
            warmup_divisor: 10,
            epochs: 100,
            neg_per_pos: 1,
            seed: 0,
            optimizer: OptimizerKind::default(),
            lr_scaling: LrScaling::Linear,
            l2_coeff: 1e-4,
            reg_scope: RegScope::Batch,
        }
    }
}

impl TrainConfig {
    pub fn regularization(&self) -> Regularization {
        Regularization {
            coeff: self.l2_coeff,
            scope: self.reg_scope,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.base_batch == 0 || self.base_lr <= 0.0 || !self.base_lr.is_finite() {
            return bad(format!("base batch {} and base lr {} must be positive", self.base_batch, self.base_lr));
        }
        if self.large_batch < self.base_batch {
            return bad(format!("large batch {} below base batch {}", self.large_batch, self.base_batch));
        }
        if self.warmup_divisor == 0 {
            return bad("warm-up divisor must be at least 1".into());
        }
        if self.neg_per_pos == 0 {
            return bad("neg_per_pos must be at least 1".into());
        }
        if self.l2_coeff < 0.0 {
            return bad(format!("negative l2 coefficient {}", self.l2_coeff));
        }
        Ok(())
    }
}

/// Learning rate for `batch` given a reference `(base_batch, base_lr)`.
pub fn scaled_lr(base_lr: f64, base_batch: usize, batch: usize, rule: LrScaling) -> f64 {
    let ratio = batch as f64 / base_batch as f64;
    match rule {
        LrScaling::Linear => base_lr * ratio,
        LrScaling::Sqrt => base_lr * ratio.sqrt(),
    }
}

/// Batch size used in `epoch`: reduced by `warmup_divisor` during warm-up.
pub fn batch_schedule(config: &TrainConfig, epoch: usize) -> usize {
    if epoch < config.warmup_epochs {
        (config.large_batch / config.warmup_divisor).max(1)
    } else {
        config.large_batch
    }
}

/// Loss value and its gradient with respect to each score.
#[derive(Clone, Debug, PartialEq)]
pub struct BprLoss {
    pub loss: f64,
    /// Ranking part only, without the regularizer.
    pub ranking_loss: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean of `-ln sigmoid(pos - neg)` plus `l2_coeff * ||params||^2`.
///
/// Only score gradients are returned; parameter gradients of the penalty
/// are added during the training step.
pub fn bpr_loss<T: Scalar>(pos: &[T], neg: &[T], params: &ModelParams<T>, l2_coeff: f64) -> Result<BprLoss> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::Shape(format!("{} positive and {} negative scores", pos.len(), neg.len())));
    }
    let n = pos.len() as f64;
    let mut ranking = 0.0;
    let mut grad_pos = Vec::with_capacity(pos.len());
    let mut grad_neg = Vec::with_capacity(pos.len());
    for (&p, &q) in pos.iter().zip(neg) {
        let (p, q) = (p.to_f64_lossy(), q.to_f64_lossy());
        if !p.is_finite() || !q.is_finite() {
            return Err(Error::NonFinite(format!("score pair ({p}, {q})")));
        }
        let margin = p - q;
        ranking += softplus(-margin);
        let s = sigmoid(-margin) / n;
        grad_pos.push(-s);
        grad_neg.push(s);
    }
    let ranking_loss = ranking / n;
    Ok(BprLoss {
        loss: ranking_loss + l2_coeff * params.sum_squares(),
        ranking_loss,
        grad_pos,
        grad_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelKind};

    fn tiny_params() -> ModelParams<f64> {
        let cfg = ModelConfig::new(ModelKind::LightGcn, 1, 2).unwrap();
        ModelParams::init(&cfg, 1, 1, 0).unwrap()
    }

    #[test]
    fn loss_examples() {
        let p = tiny_params();
        let l = bpr_loss(&[0.3], &[0.3], &p, 0.0).unwrap();
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-12);
        let l = bpr_loss(&[1.0], &[0.0], &p, 0.0).unwrap();
        let expect = -(1.0 / (1.0 + (-1.0f64).exp())).ln();
        assert!((l.loss - expect).abs() < 1e-12);
        assert!((l.loss - 0.3133).abs() < 1e-4);
        let far = bpr_loss(&[800.0], &[0.0], &p, 0.0).unwrap();
        assert!(far.loss >= 0.0 && far.loss < 1e-300);
        let reg = bpr_loss(&[800.0], &[0.0], &p, 0.5).unwrap();
        assert!((reg.loss - 0.5 * p.sum_squares()).abs() < 1e-12);
        assert!(bpr_loss(&[f64::NAN], &[0.0], &p, 0.0).is_err());
        assert!(bpr_loss(&[1.0, 2.0], &[0.0], &p, 0.0).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let p = tiny_params();
        let pos = [0.4, -1.2, 2.0];
        let neg = [0.1, 0.5, -3.0];
        let l = bpr_loss(&pos, &neg, &p, 0.0).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut a = pos;
            a[k] += h;
            let mut b = pos;
            b[k] -= h;
            let fd = (bpr_loss(&a, &neg, &p, 0.0).unwrap().loss - bpr_loss(&b, &neg, &p, 0.0).unwrap().loss) / (2.0 * h);
            assert!((fd - l.grad_pos[k]).abs() < 1e-8);
            assert!((l.grad_pos[k] + l.grad_neg[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn lr_rules() {
        assert!((scaled_lr(1e-4, 1000, 150_000, LrScaling::Linear) - 1.5e-2).abs() < 1e-15);
        assert!((scaled_lr(1e-4, 1000, 15_000, LrScaling::Linear) - 1.5e-3).abs() < 1e-15);
        assert_eq!(scaled_lr(1e-4, 1000, 1000, LrScaling::Linear), 1e-4);
        assert!((scaled_lr(1e-4, 1000, 4000, LrScaling::Sqrt) - 2e-4).abs() < 1e-15);
    }

    #[test]
    fn schedule() {
        let c = TrainConfig {
            large_batch: 150_000,
            ..Default::default()
        };
        assert_eq!(batch_schedule(&c, 0), 15_000);
        assert_eq!(batch_schedule(&c, 1), 15_000);
        assert_eq!(batch_schedule(&c, 2), 150_000);
        let flat = TrainConfig {
            warmup_divisor: 1,
            ..c.clone()
        };
        assert!((0..5).all(|e| batch_schedule(&flat, e) == 150_000));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            large_batch: 10,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            warmup_divisor: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
