use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::counters::{timed, KernelKind};
use crate::models::{ModelGrads, ModelParams};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::default()),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer state for one parameter set.
#[derive(Clone, Debug)]
pub struct Optimizer<T = f32> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update with learning rate `lr`; `weight_decay * ||params||^2`
    /// is added to the objective.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelGrads<T>, lr: f64, weight_decay: f64) -> Result<()> {
        let gs = grads.tensors();
        let elems: usize = gs.iter().map(|g| g.as_slice().len()).sum();
        let rows: usize = gs.iter().map(|g| g.rows()).sum();
        let mut ps = params.tensors_mut();
        if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.as_slice().len() != g.as_slice().len()) {
            return Err(Error::Shape("gradients do not match parameters".into()));
        }
        self.steps += 1;
        let l2x2 = 2.0 * weight_decay;
        timed(KernelKind::Add, rows, elems * T::BYTES, || match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in ps.iter_mut().zip(&gs) {
                    for (w, &d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        let wf = w.to_f64_lossy();
                        *w = T::from_f64_lossy(wf - lr * (d.to_f64_lossy() + l2x2 * wf));
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = gs.iter().map(|g| vec![T::zero(); g.as_slice().len()]).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (k, (p, g)) in ps.iter_mut().zip(&gs).enumerate() {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (j, (w, &d)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                        let wf = w.to_f64_lossy();
                        let gf = d.to_f64_lossy() + l2x2 * wf;
                        let mf = beta1 * m[j].to_f64_lossy() + (1.0 - beta1) * gf;
                        let vf = beta2 * v[j].to_f64_lossy() + (1.0 - beta2) * gf * gf;
                        m[j] = T::from_f64_lossy(mf);
                        v[j] = T::from_f64_lossy(vf);
                        let update = lr * (mf / c1) / ((vf / c2).sqrt() + eps);
                        *w = T::from_f64_lossy(wf - update);
                    }
                }
            }
        });
        Ok(())
    }
}
