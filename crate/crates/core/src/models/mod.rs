//! NGCF and LightGCN layer stacks over the sparse kernels.
//!
//! Each layer builds per-edge messages from the elementwise product of the
//! endpoint embeddings plus a copy of the source embedding, sums them at
//! the destination, and (for NGCF) applies two weight matrices. The
//! optimized dataflow computes the edge product once for both directions
//! and applies weights after aggregation; the naive dataflow applies
//! weights per edge and is kept as an oracle.

mod checkpoint;
mod layer;
mod naive;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::kernels::{EmbeddingMatrix, KernelConfig, Matrix};
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layer::{layer_backward, lightgcn_layer_forward, ngcf_layer_forward, LayerCache, LayerGrads};
pub use naive::{naive_layer_backward, naive_ngcf_layer_forward, naive_lightgcn_layer_forward, NaiveLayerCache};

pub(crate) use layer::{layer_forward_views, LayerViews};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Ngcf,
    LightGcn,
}

/// How per-layer embeddings (including the input layer) form the final one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Combine {
    Concat,
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Dataflow {
    #[default]
    Optimized,
    Naive,
}

macro_rules! text_enum {
    ($ty:ident { $($var:ident => $s:literal $(| $alt:literal)*),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $s),* })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s $(| $alt)* => Ok($ty::$var),)*
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(ModelKind { Ngcf => "ngcf", LightGcn => "lightgcn" });
text_enum!(Combine { Concat => "concat", Mean => "mean" });
text_enum!(Dataflow { Optimized => "optimized", Naive => "naive" });

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub num_layers: usize,
    pub embed_dim: usize,
    pub combine: Combine,
    /// Scale each message by `1 / sqrt(deg(u) * deg(i))`.
    pub normalize_by_degree: bool,
}

impl ModelConfig {
    /// Concat for NGCF, mean for LightGCN, no degree normalization.
    pub fn new(kind: ModelKind, num_layers: usize, embed_dim: usize) -> Result<Self> {
        let c = Self {
            kind,
            num_layers,
            embed_dim,
            combine: match kind {
                ModelKind::Ngcf => Combine::Concat,
                ModelKind::LightGcn => Combine::Mean,
            },
            normalize_by_degree: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_combine(mut self, combine: Combine) -> Self {
        self.combine = combine;
        self
    }

    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize_by_degree = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "model needs at least one layer and dimension, got L={} d={}",
                self.num_layers, self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn has_weights(&self) -> bool {
        self.kind == ModelKind::Ngcf
    }

    /// Width of the final embeddings.
    pub fn output_dim(&self) -> usize {
        match self.combine {
            Combine::Concat => (self.num_layers + 1) * self.embed_dim,
            Combine::Mean => self.embed_dim,
        }
    }
}

/// The two weight matrices of one NGCF layer, or their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T = f32> {
    /// Applied to the aggregated edge products.
    pub w1: Matrix<T>,
    /// Applied to the aggregated neighbor embeddings.
    pub w2: Matrix<T>,
}

impl<T: Scalar> LayerWeights<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            w1: Matrix::identity(d),
            w2: Matrix::identity(d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w1: Matrix::zeros(d, d),
            w2: Matrix::zeros(d, d),
        }
    }
}

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

/// Trainable parameters. Every mutable access renews an identity token,
/// which invalidates forward caches taken earlier.
#[derive(Clone, Debug)]
pub struct ModelParams<T = f32> {
    user_embed: EmbeddingMatrix<T>,
    item_embed: EmbeddingMatrix<T>,
    layers: Vec<LayerWeights<T>>,
    token: u64,
}

impl<T: Scalar> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.user_embed == other.user_embed && self.item_embed == other.item_embed && self.layers == other.layers
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded uniform initialization in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(config: &ModelConfig, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.random_range(-scale..=scale)))
        };
        let user_embed = EmbeddingMatrix::from(draw(num_users, d));
        let item_embed = EmbeddingMatrix::from(draw(num_items, d));
        let layers = if config.has_weights() {
            (0..config.num_layers)
                .map(|_| LayerWeights {
                    w1: draw(d, d),
                    w2: draw(d, d),
                })
                .collect()
        } else {
            Vec::new()
        };
        Self::from_parts(config, user_embed, item_embed, layers)
    }

    pub fn from_parts(
        config: &ModelConfig,
        user_embed: EmbeddingMatrix<T>,
        item_embed: EmbeddingMatrix<T>,
        layers: Vec<LayerWeights<T>>,
    ) -> Result<Self> {
        let p = Self {
            user_embed,
            item_embed,
            layers,
            token: fresh_token(),
        };
        p.check(config, p.user_embed.rows(), p.item_embed.rows())?;
        Ok(p)
    }

    pub fn user_embed(&self) -> &EmbeddingMatrix<T> {
        &self.user_embed
    }

    pub fn item_embed(&self) -> &EmbeddingMatrix<T> {
        &self.item_embed
    }

    pub fn layers(&self) -> &[LayerWeights<T>] {
        &self.layers
    }

    /// All tensors in a fixed order: user, item, then `w1`, `w2` per layer.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut v: Vec<&Matrix<T>> = vec![&self.user_embed, &self.item_embed];
        for l in &self.layers {
            v.push(&l.w1);
            v.push(&l.w2);
        }
        v
    }

    /// Mutable tensors in [`tensors`](Self::tensors) order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        self.token = fresh_token();
        let mut v: Vec<&mut Matrix<T>> = vec![&mut self.user_embed, &mut self.item_embed];
        for l in &mut self.layers {
            v.push(&mut l.w1);
            v.push(&mut l.w2);
        }
        v
    }

    pub fn num_elements(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|m| m.sum_squares()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            user_embed: self.user_embed.cast(),
            item_embed: self.item_embed.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    w1: l.w1.cast(),
                    w2: l.w2.cast(),
                })
                .collect(),
            token: fresh_token(),
        }
    }

    /// Shapes agree with `config` and the given vertex counts.
    pub fn check(&self, config: &ModelConfig, num_users: usize, num_items: usize) -> Result<()> {
        config.validate()?;
        let d = config.embed_dim;
        let bad = |what: String| Err(Error::Shape(what));
        if self.user_embed.rows() != num_users || self.user_embed.dim() != d {
            return bad(format!(
                "user embeddings {}x{}, expected {num_users}x{d}",
                self.user_embed.rows(),
                self.user_embed.dim()
            ));
        }
        if self.item_embed.rows() != num_items || self.item_embed.dim() != d {
            return bad(format!(
                "item embeddings {}x{}, expected {num_items}x{d}",
                self.item_embed.rows(),
                self.item_embed.dim()
            ));
        }
        let want = if config.has_weights() { config.num_layers } else { 0 };
        if self.layers.len() != want {
            return bad(format!("{} weight layers, expected {want}", self.layers.len()));
        }
        for l in &self.layers {
            for w in [&l.w1, &l.w2] {
                if w.rows() != d || w.cols() != d {
                    return bad(format!("weight {}x{}, expected {d}x{d}", w.rows(), w.cols()));
                }
            }
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T = f32> {
    pub user_embed: EmbeddingMatrix<T>,
    pub item_embed: EmbeddingMatrix<T>,
    pub layers: Vec<LayerWeights<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut v: Vec<&Matrix<T>> = vec![&self.user_embed, &self.item_embed];
        for l in &self.layers {
            v.push(&l.w1);
            v.push(&l.w2);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut v: Vec<&mut Matrix<T>> = vec![&mut self.user_embed, &mut self.item_embed];
        for l in &mut self.layers {
            v.push(&mut l.w1);
            v.push(&mut l.w2);
        }
        v
    }
}

enum AnyLayerCache<T> {
    Optimized(LayerCache<T>),
    Naive(NaiveLayerCache<T>),
}

/// Everything `model_backward` needs from a forward pass.
pub struct ForwardCache<T = f32> {
    token: u64,
    dataflow: Dataflow,
    num_users: usize,
    num_items: usize,
    /// Layer inputs and outputs: `xs_user[l]` feeds layer `l`.
    xs_user: Vec<EmbeddingMatrix<T>>,
    xs_item: Vec<EmbeddingMatrix<T>>,
    layers: Vec<AnyLayerCache<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn dataflow(&self) -> Dataflow {
        self.dataflow
    }

    /// Per-layer user embeddings, layer 0 being the input.
    pub fn user_layers(&self) -> &[EmbeddingMatrix<T>] {
        &self.xs_user
    }

    pub fn item_layers(&self) -> &[EmbeddingMatrix<T>] {
        &self.xs_item
    }
}

/// Final user and item embeddings.
pub struct FinalEmbeddings<T = f32> {
    pub users: EmbeddingMatrix<T>,
    pub items: EmbeddingMatrix<T>,
}

pub(crate) fn norm_weights<T: Scalar>(g: &BipartiteGraph, config: &ModelConfig) -> Option<Vec<T>> {
    config.normalize_by_degree.then(|| g.sym_norm_weights())
}

/// Full-graph forward pass through all layers with the optimized dataflow.
pub fn model_forward<T: Scalar>(
    g: &BipartiteGraph,
    params: &ModelParams<T>,
    config: &ModelConfig,
    kernels: &KernelConfig,
) -> Result<(FinalEmbeddings<T>, ForwardCache<T>)> {
    model_forward_with(g, params, config, kernels, Dataflow::Optimized)
}

pub fn model_forward_with<T: Scalar>(
    g: &BipartiteGraph,
    params: &ModelParams<T>,
    config: &ModelConfig,
    kernels: &KernelConfig,
    dataflow: Dataflow,
) -> Result<(FinalEmbeddings<T>, ForwardCache<T>)> {
    params.check(config, g.num_users(), g.num_items())?;
    let norm = norm_weights::<T>(g, config);
    let mut xs_user = vec![params.user_embed.clone()];
    let mut xs_item = vec![params.item_embed.clone()];
    let mut layers = Vec::with_capacity(config.num_layers);
    for l in 0..config.num_layers {
        let w = params.layers.get(l);
        let (xu, xi) = (&xs_user[l], &xs_item[l]);
        let (nu, ni, cache) = match dataflow {
            Dataflow::Optimized => {
                let (nu, ni, c) = layer::layer_forward(g, xu, xi, w, norm.as_deref(), kernels)?;
                (nu, ni, AnyLayerCache::Optimized(c))
            }
            Dataflow::Naive => {
                let (nu, ni, c) = naive::naive_layer_forward(g, xu, xi, w, norm.as_deref(), &kernels.dense)?;
                (nu, ni, AnyLayerCache::Naive(c))
            }
        };
        xs_user.push(nu);
        xs_item.push(ni);
        layers.push(cache);
    }
    let users = combine(&xs_user, config.combine);
    let items = combine(&xs_item, config.combine);
    let cache = ForwardCache {
        token: params.token,
        dataflow,
        num_users: g.num_users(),
        num_items: g.num_items(),
        xs_user,
        xs_item,
        layers,
    };
    Ok((FinalEmbeddings { users, items }, cache))
}

/// Combine per-layer embeddings into the final representation.
pub fn combine<T: Scalar>(xs: &[EmbeddingMatrix<T>], how: Combine) -> EmbeddingMatrix<T> {
    let rows = xs[0].rows();
    let d = xs[0].dim();
    match how {
        Combine::Concat => {
            let width = d * xs.len();
            let m = Matrix::from_fn(rows, width, |r, c| xs[c / d].get(r, c % d));
            EmbeddingMatrix::from(m)
        }
        Combine::Mean => {
            let inv = T::one() / T::from_usize(xs.len()).expect("layer count fits scalar");
            let m = Matrix::from_fn(rows, d, |r, c| xs.iter().fold(T::zero(), |s, x| s + x.get(r, c)) * inv);
            EmbeddingMatrix::from(m)
        }
    }
}

/// Gradient of [`combine`] for layer `l`.
fn combine_grad<T: Scalar>(grad: &EmbeddingMatrix<T>, l: usize, layers: usize, d: usize, how: Combine) -> EmbeddingMatrix<T> {
    match how {
        Combine::Concat => EmbeddingMatrix::from(Matrix::from_fn(grad.rows(), d, |r, c| grad.get(r, l * d + c))),
        Combine::Mean => {
            let inv = T::one() / T::from_usize(layers).expect("layer count fits scalar");
            EmbeddingMatrix::from(grad.map(|v| v * inv))
        }
    }
}

/// Gradients of all parameters given gradients of the final embeddings.
pub fn model_backward<T: Scalar>(
    g: &BipartiteGraph,
    params: &ModelParams<T>,
    config: &ModelConfig,
    cache: &ForwardCache<T>,
    grad_users: &EmbeddingMatrix<T>,
    grad_items: &EmbeddingMatrix<T>,
    kernels: &KernelConfig,
) -> Result<ModelGrads<T>> {
    if cache.token != params.token {
        return Err(Error::StaleCache("parameters changed since the forward pass".into()));
    }
    if cache.layers.len() != config.num_layers || cache.num_users != g.num_users() || cache.num_items != g.num_items() {
        return Err(Error::StaleCache("cache was built for a different model or graph".into()));
    }
    let od = config.output_dim();
    let d = config.embed_dim;
    if grad_users.rows() != g.num_users() || grad_users.dim() != od || grad_items.rows() != g.num_items() || grad_items.dim() != od {
        return Err(Error::Shape(format!(
            "final-embedding gradients {}x{} / {}x{}, expected width {od}",
            grad_users.rows(),
            grad_users.dim(),
            grad_items.rows(),
            grad_items.dim()
        )));
    }
    let norm = norm_weights::<T>(g, config);
    let n = config.num_layers + 1;
    let mut gu = combine_grad(grad_users, config.num_layers, n, d, config.combine);
    let mut gi = combine_grad(grad_items, config.num_layers, n, d, config.combine);
    let mut layer_grads: Vec<LayerWeights<T>> = Vec::new();
    for l in (0..config.num_layers).rev() {
        let xu = &cache.xs_user[l];
        let xi = &cache.xs_item[l];
        let w = params.layers.get(l);
        let out = match &cache.layers[l] {
            AnyLayerCache::Optimized(c) => layer_backward(g, xu, xi, w, norm.as_deref(), c, &gu, &gi, kernels)?,
            AnyLayerCache::Naive(c) => naive_layer_backward(g, xu, xi, w, norm.as_deref(), c, &gu, &gi, &kernels.dense)?,
        };
        gu = out.grad_users;
        gi = out.grad_items;
        crate::kernels::axpy(T::one(), &combine_grad(grad_users, l, n, d, config.combine), &mut gu)?;
        crate::kernels::axpy(T::one(), &combine_grad(grad_items, l, n, d, config.combine), &mut gi)?;
        if let Some(wg) = out.weights {
            layer_grads.push(wg);
        }
    }
    layer_grads.reverse();
    Ok(ModelGrads {
        user_embed: gu,
        item_embed: gi,
        layers: layer_grads,
    })
}
