use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    batch_schedule, bpr_loss, sample_bpr_batch, scaled_lr, BprBatch, BprLoss, Optimizer, RegScope, Regularization,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::eval::recall_at_k;
use crate::graph::BipartiteGraph;
use crate::kernels::{EmbeddingMatrix, KernelConfig};
use crate::models::{model_backward, model_forward, save_checkpoint, ModelConfig, ModelGrads, ModelParams};
use crate::scalar::Scalar;

/// One training step as reported to a [`MetricsSink`].
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub epoch: usize,
    /// Step index within the epoch.
    pub step: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Set on the last step of an evaluated epoch.
    pub recall: Option<f64>,
}

pub trait MetricsSink {
    fn record(&mut self, m: &StepMetrics) -> Result<()>;
}

/// Discards all metrics.
pub struct NullMetrics;

impl MetricsSink for NullMetrics {
    fn record(&mut self, _: &StepMetrics) -> Result<()> {
        Ok(())
    }
}

/// Writes `epoch,step,batch,lr,loss[,recall@k]` rows.
pub struct CsvMetrics<W: Write> {
    out: W,
    recall_k: Option<usize>,
    header_done: bool,
}

impl<W: Write> CsvMetrics<W> {
    /// `recall_k` adds a `recall@k` column.
    pub fn new(out: W, recall_k: Option<usize>) -> Self {
        Self {
            out,
            recall_k,
            header_done: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for CsvMetrics<W> {
    fn record(&mut self, m: &StepMetrics) -> Result<()> {
        let fail = |e: std::io::Error| Error::Format(format!("metrics write: {e}"));
        if !self.header_done {
            let mut h = String::from("epoch,step,batch,lr,loss");
            if let Some(k) = self.recall_k {
                h.push_str(&format!(",recall@{k}"));
            }
            writeln!(self.out, "{h}").map_err(fail)?;
            self.header_done = true;
        }
        let mut row = format!("{},{},{},{:e},{:.8}", m.epoch, m.step, m.batch, m.lr, m.loss);
        if self.recall_k.is_some() {
            row.push(',');
            if let Some(r) = m.recall {
                row.push_str(&format!("{r:.6}"));
            }
        }
        writeln!(self.out, "{row}").map_err(fail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Mean loss over the epoch's steps.
    pub loss: f64,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Loss and parameter gradients of one BPR step with a full-graph forward.
pub fn bpr_step<T: Scalar>(
    train: &BipartiteGraph,
    params: &ModelParams<T>,
    model: &ModelConfig,
    batch: &BprBatch,
    reg: Regularization,
    kernels: &KernelConfig,
) -> Result<(BprLoss, ModelGrads<T>)> {
    let (fin, cache) = model_forward(train, params, model, kernels)?;
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    let (mut pos, mut neg) = (Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len()));
    for k in 0..batch.len() {
        let u = fin.users.row(batch.users[k] as usize);
        pos.push(dot(u, fin.items.row(batch.pos_items[k] as usize)));
        neg.push(dot(u, fin.items.row(batch.neg_items[k] as usize)));
    }
    let mut loss = bpr_loss(&pos, &neg, params, 0.0)?;
    let od = model.output_dim();
    let mut gu = EmbeddingMatrix::<T>::zeros(train.num_users(), od);
    let mut gi = EmbeddingMatrix::<T>::zeros(train.num_items(), od);
    for k in 0..batch.len() {
        let (u, p, n) = (batch.users[k] as usize, batch.pos_items[k] as usize, batch.neg_items[k] as usize);
        let gp = T::from_f64_lossy(loss.grad_pos[k]);
        let gn = T::from_f64_lossy(loss.grad_neg[k]);
        for c in 0..od {
            let (fu, fp, fneg) = (fin.users.get(u, c), fin.items.get(p, c), fin.items.get(n, c));
            gu.row_mut(u)[c] = gu.get(u, c) + gp * fp + gn * fneg;
            gi.row_mut(p)[c] = gi.get(p, c) + gp * fu;
            gi.row_mut(n)[c] = gi.get(n, c) + gn * fu;
        }
    }
    let mut grads = model_backward(train, params, model, &cache, &gu, &gi, kernels)?;
    loss.loss += regularize(params, batch, reg, &mut grads);
    Ok((loss, grads))
}

/// Add the regularizer's gradient to `grads` and return its value.
fn regularize<T: Scalar>(params: &ModelParams<T>, batch: &BprBatch, reg: Regularization, grads: &mut ModelGrads<T>) -> f64 {
    let l2 = reg.coeff;
    if l2 == 0.0 {
        return 0.0;
    }
    let decay = |w: &[T], g: &mut [T], scale: f64| -> f64 {
        let mut sq = 0.0;
        for (x, d) in w.iter().zip(g) {
            let xf = x.to_f64_lossy();
            sq += xf * xf;
            *d = T::from_f64_lossy(d.to_f64_lossy() + 2.0 * l2 * scale * xf);
        }
        l2 * scale * sq
    };
    let mut value = 0.0;
    for (w, g) in params.layers().iter().zip(grads.layers.iter_mut()) {
        value += decay(w.w1.as_slice(), g.w1.as_mut_slice(), 1.0);
        value += decay(w.w2.as_slice(), g.w2.as_mut_slice(), 1.0);
    }
    match reg.scope {
        RegScope::All => {
            value += decay(params.user_embed().as_slice(), grads.user_embed.as_mut_slice(), 1.0);
            value += decay(params.item_embed().as_slice(), grads.item_embed.as_mut_slice(), 1.0);
        }
        RegScope::Batch => {
            let inv = 1.0 / batch.len() as f64;
            for k in 0..batch.len() {
                let u = batch.users[k] as usize;
                value += decay(params.user_embed().row(u), grads.user_embed.row_mut(u), inv);
                for i in [batch.pos_items[k] as usize, batch.neg_items[k] as usize] {
                    value += decay(params.item_embed().row(i), grads.item_embed.row_mut(i), inv);
                }
            }
        }
    }
    value
}

/// BPR training loop.
pub struct Trainer<'a> {
    train: &'a BipartiteGraph,
    model: ModelConfig,
    config: TrainConfig,
    kernels: KernelConfig,
    eval: Option<(&'a BipartiteGraph, usize, usize)>,
    checkpoint: Option<(PathBuf, usize)>,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a BipartiteGraph, model: ModelConfig, config: TrainConfig) -> Self {
        Self {
            train,
            model,
            config,
            kernels: KernelConfig::default(),
            eval: None,
            checkpoint: None,
        }
    }

    pub fn with_kernels(mut self, kernels: KernelConfig) -> Self {
        self.kernels = kernels;
        self
    }

    /// Measure recall@k on `test` after every `every`-th epoch.
    pub fn eval_on(mut self, test: &'a BipartiteGraph, k: usize, every: usize) -> Self {
        self.eval = Some((test, k, every.max(1)));
        self
    }

    /// Write a checkpoint after every `every`-th epoch and at the end.
    pub fn checkpoint_to(mut self, path: impl Into<PathBuf>, every: usize) -> Self {
        self.checkpoint = Some((path.into(), every.max(1)));
        self
    }

    pub fn fit(&self, params: &mut ModelParams<f32>, sink: &mut dyn MetricsSink) -> Result<TrainLog> {
        self.config.validate()?;
        params.check(&self.model, self.train.num_users(), self.train.num_items())?;
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut opt = Optimizer::new(c.optimizer);
        let mut log = TrainLog::default();
        let work = self.train.num_edges() * c.neg_per_pos;
        for epoch in 0..c.epochs {
            let batch = batch_schedule(c, epoch);
            let lr = scaled_lr(c.base_lr, c.base_batch, batch, c.lr_scaling);
            let steps = work.div_ceil(batch);
            let mut total = 0.0;
            let mut last = None;
            for step in 0..steps {
                let tuples = sample_bpr_batch(self.train, batch, &mut rng)?;
                let (loss, grads) = match bpr_step(self.train, params, &self.model, &tuples, c.regularization(), &self.kernels) {
                    Ok(v) => v,
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::NonFiniteLoss {
                            epoch,
                            step,
                            loss: f64::NAN,
                        })
                    }
                    Err(e) => return Err(e),
                };
                if !loss.loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        loss: loss.loss,
                    });
                }
                opt.step(params, &grads, lr, 0.0)?;
                total += loss.loss;
                let m = StepMetrics {
                    epoch,
                    step,
                    batch,
                    lr,
                    loss: loss.loss,
                    recall: None,
                };
                if step + 1 < steps {
                    sink.record(&m)?;
                } else {
                    last = Some(m);
                }
            }
            let recall = match self.eval {
                Some((test, k, every)) if (epoch + 1) % every == 0 || epoch + 1 == c.epochs => {
                    let (fin, _) = model_forward(self.train, params, &self.model, &self.kernels)?;
                    Some(recall_at_k(&fin.users, &fin.items, self.train, test, k)?.recall)
                }
                _ => None,
            };
            if let Some(mut m) = last {
                m.recall = recall;
                sink.record(&m)?;
            }
            log.epochs.push(EpochStats {
                epoch,
                batch,
                lr,
                steps,
                loss: if steps > 0 { total / steps as f64 } else { 0.0 },
                recall,
            });
            if let Some((path, every)) = &self.checkpoint {
                if (epoch + 1) % every == 0 || epoch + 1 == c.epochs {
                    save_checkpoint(path, &self.model, params)?;
                }
            }
        }
        Ok(log)
    }
}
