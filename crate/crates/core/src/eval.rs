//! Top-k recall and neighbor-sampled inference.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Side};
use crate::kernels::{EmbeddingMatrix, KernelConfig};
use crate::models::{combine, layer_forward_views, FinalEmbeddings, LayerViews, ModelConfig, ModelParams};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub k: usize,
    /// Mean of per-user recall over users with test items.
    pub recall: f64,
    pub users_evaluated: usize,
}

impl EvalResult {
    pub fn to_csv(&self) -> String {
        format!(
            "# recall averaged per user\nk,recall,users_evaluated\n{},{:.6},{}\n",
            self.k, self.recall, self.users_evaluated
        )
    }
}

fn check_embeddings<T: Scalar>(
    users: &EmbeddingMatrix<T>,
    items: &EmbeddingMatrix<T>,
    train: &BipartiteGraph,
    test: &BipartiteGraph,
) -> Result<()> {
    if users.rows() != train.num_users()
        || items.rows() != train.num_items()
        || users.dim() != items.dim()
        || test.num_users() != train.num_users()
        || test.num_items() != train.num_items()
    {
        return Err(Error::Shape(format!(
            "embeddings {}x{} / {}x{} vs graphs with {} users and {} items",
            users.rows(),
            users.dim(),
            items.rows(),
            items.dim(),
            train.num_users(),
            train.num_items()
        )));
    }
    Ok(())
}

/// The `k` highest-scoring items for `user`, excluding its training items.
/// Ties go to the lower item id; NaN scores rank last.
pub fn top_k_items<T: Scalar>(
    users: &EmbeddingMatrix<T>,
    items: &EmbeddingMatrix<T>,
    train: &BipartiteGraph,
    user: usize,
    k: usize,
) -> Vec<u32> {
    let u = users.row(user);
    let seen = train.user_items(user);
    let mut scored: Vec<(f64, u32)> = (0..items.rows() as u32)
        .filter(|i| seen.binary_search(i).is_err())
        .map(|i| {
            let s = u
                .iter()
                .zip(items.row(i as usize))
                .fold(T::zero(), |a, (&x, &y)| a + x * y)
                .to_f64_lossy();
            (if s.is_nan() { f64::NEG_INFINITY } else { s }, i)
        })
        .collect();
    let order = |a: &(f64, u32), b: &(f64, u32)| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Recall@k averaged over users with at least one test item.
pub fn recall_at_k<T: Scalar>(
    users: &EmbeddingMatrix<T>,
    items: &EmbeddingMatrix<T>,
    train: &BipartiteGraph,
    test: &BipartiteGraph,
    k: usize,
) -> Result<EvalResult> {
    check_embeddings(users, items, train, test)?;
    let evaluated: Vec<usize> = (0..test.num_users()).filter(|&u| test.degree(Side::User, u) > 0).collect();
    if evaluated.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let total: f64 = evaluated
        .par_iter()
        .map(|&u| {
            let wanted = test.user_items(u);
            let hits = top_k_items(users, items, train, u, k)
                .iter()
                .filter(|i| wanted.binary_search(i).is_ok())
                .count();
            hits as f64 / wanted.len() as f64
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(EvalResult {
        k,
        recall: total / evaluated.len() as f64,
        users_evaluated: evaluated.len(),
    })
}

/// Expected recall@k of a uniformly random ranking of each user's
/// unmasked items.
pub fn random_baseline_recall(train: &BipartiteGraph, test: &BipartiteGraph, k: usize) -> Result<f64> {
    let ni = train.num_items();
    let vals: Vec<f64> = (0..test.num_users())
        .filter(|&u| test.degree(Side::User, u) > 0)
        .map(|u| {
            let candidates = ni - train.degree(Side::User, u);
            (k as f64 / candidates as f64).min(1.0)
        })
        .collect();
    if vals.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Keep at most `s` uniformly chosen incoming edges per vertex of `side`.
/// Returns the subgraph and symmetric weights computed from full-graph
/// degrees, in the subgraph's edge order.
fn sample_view<T: Scalar>(
    g: &BipartiteGraph,
    side: Side,
    s: usize,
    normalize: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(BipartiteGraph, Option<Vec<T>>)> {
    let adj = g.adjacency(side);
    let mut edges = Vec::new();
    for v in 0..adj.num_rows() {
        let nbrs = &adj.cols[adj.range(v)];
        let mut push = |n: u32| match side {
            Side::User => edges.push((v as u32, n)),
            Side::Item => edges.push((n, v as u32)),
        };
        if nbrs.len() <= s {
            nbrs.iter().for_each(|&n| push(n));
        } else {
            sample(rng, nbrs.len(), s).into_iter().for_each(|k| push(nbrs[k]));
        }
    }
    let view = g.with_edges(edges)?;
    let norm = normalize.then(|| {
        view.edges()
            .map(|(u, i)| {
                let d = g.degree(Side::User, u as usize) as f64 * g.degree(Side::Item, i as usize) as f64;
                T::from_f64_lossy(1.0 / d.sqrt())
            })
            .collect()
    });
    Ok((view, norm))
}

/// Forward pass in which every vertex aggregates over at most
/// `sampling_factor` uniformly sampled neighbors, drawn independently per
/// layer and direction. With a factor at or above the maximum degree the
/// result equals the full-graph forward.
pub fn sampled_forward<T: Scalar>(
    g: &BipartiteGraph,
    params: &ModelParams<T>,
    config: &ModelConfig,
    sampling_factor: usize,
    seed: u64,
    kernels: &KernelConfig,
) -> Result<FinalEmbeddings<T>> {
    if sampling_factor == 0 {
        return Err(Error::InvalidArgument("sampling factor must be at least 1".into()));
    }
    params.check(config, g.num_users(), g.num_items())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full_norm: Option<Vec<T>> = config.normalize_by_degree.then(|| g.sym_norm_weights());
    let no_op = sampling_factor >= g.max_degree(Side::User).max(g.max_degree(Side::Item));
    let mut xs_user = vec![params.user_embed().clone()];
    let mut xs_item = vec![params.item_embed().clone()];
    for l in 0..config.num_layers {
        let w = params.layers().get(l);
        let (nu, ni, _) = if no_op {
            let views = LayerViews {
                items: (g, full_norm.as_deref()),
                users: (g, full_norm.as_deref()),
            };
            layer_forward_views(views, &xs_user[l], &xs_item[l], w, kernels)?
        } else {
            let (gi, wi) = sample_view::<T>(g, Side::Item, sampling_factor, config.normalize_by_degree, &mut rng)?;
            let (gu, wu) = sample_view::<T>(g, Side::User, sampling_factor, config.normalize_by_degree, &mut rng)?;
            let views = LayerViews {
                items: (&gi, wi.as_deref()),
                users: (&gu, wu.as_deref()),
            };
            layer_forward_views(views, &xs_user[l], &xs_item[l], w, kernels)?
        };
        xs_user.push(nu);
        xs_item.push(ni);
    }
    Ok(FinalEmbeddings {
        users: combine(&xs_user, config.combine),
        items: combine(&xs_item, config.combine),
    })
}
