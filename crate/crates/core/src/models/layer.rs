use super::LayerWeights;
use crate::error::Result;
use crate::graph::{BipartiteGraph, Direction};
use crate::kernels::{
    add, axpy, dual_matmul, matmul_a_bt, matmul_at_b, sddmm, sddmm_backward, spmm, spmm_backward,
    spmm_backward_source, spmm_backward_source_weighted, spmm_backward_weighted, spmm_weighted, BinaryOp,
    EdgeMessageMatrix, EmbeddingMatrix, KernelConfig, KernelOptions, Reduce, SpmmInput,
};
use crate::scalar::Scalar;

const U2I: Direction = Direction::UserToItem;
const I2U: Direction = Direction::ItemToUser;

/// Aggregates kept from the forward pass for the weight gradients.
#[derive(Clone, Debug)]
struct Aggregates<T> {
    /// Summed edge products at users / items.
    prod_users: EmbeddingMatrix<T>,
    prod_items: EmbeddingMatrix<T>,
    /// Summed neighbor embeddings at users / items.
    nbr_users: EmbeddingMatrix<T>,
    nbr_items: EmbeddingMatrix<T>,
}

/// Forward state of one optimized layer.
#[derive(Clone, Debug)]
pub struct LayerCache<T = f32> {
    aggregates: Option<Aggregates<T>>,
}

/// Gradients produced by one layer's backward pass.
#[derive(Clone, Debug)]
pub struct LayerGrads<T = f32> {
    pub grad_users: EmbeddingMatrix<T>,
    pub grad_items: EmbeddingMatrix<T>,
    /// `None` for weightless layers.
    pub weights: Option<LayerWeights<T>>,
}

fn sum<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    input: SpmmInput<'_, T>,
    norm: Option<&[T]>,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    match norm {
        Some(w) => spmm_weighted(g, dir, input, w, Reduce::Sum, opts),
        None => spmm(g, dir, input, Reduce::Sum, opts),
    }
}

/// The graph (and matching edge weights) each side aggregates over.
/// Full-graph layers use the same graph for both sides; sampled layers
/// use a per-side subgraph.
#[derive(Clone, Copy)]
pub(crate) struct LayerViews<'a, T> {
    pub items: (&'a BipartiteGraph, Option<&'a [T]>),
    pub users: (&'a BipartiteGraph, Option<&'a [T]>),
}

pub(crate) fn layer_forward_views<T: Scalar>(
    views: LayerViews<'_, T>,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: Option<&LayerWeights<T>>,
    k: &KernelConfig,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, LayerCache<T>)> {
    let (gi, ni) = views.items;
    let (gu, nu) = views.users;
    let s_items = sddmm(gi, U2I, xu, xi, BinaryOp::Mul, &k.sddmm)?;
    let s_users: Option<EdgeMessageMatrix<T>> = if std::ptr::eq(gi, gu) {
        None
    } else {
        Some(sddmm(gu, U2I, xu, xi, BinaryOp::Mul, &k.sddmm)?)
    };
    let s_users = s_users.as_ref().unwrap_or(&s_items);

    let prod_items = sum(gi, U2I, SpmmInput::Edges(&s_items), ni, &k.spmm)?;
    let nbr_items = sum(gi, U2I, SpmmInput::Source(xu), ni, &k.spmm)?;
    let prod_users = sum(gu, I2U, SpmmInput::Edges(s_users), nu, &k.spmm)?;
    let nbr_users = sum(gu, I2U, SpmmInput::Source(xi), nu, &k.spmm)?;

    match weights {
        Some(w) => {
            let new_items = dual_matmul(&prod_items, &w.w1, &nbr_items, &w.w2, &k.dense)?;
            let new_users = dual_matmul(&prod_users, &w.w1, &nbr_users, &w.w2, &k.dense)?;
            let cache = LayerCache {
                aggregates: Some(Aggregates {
                    prod_users,
                    prod_items,
                    nbr_users,
                    nbr_items,
                }),
            };
            Ok((new_users.into(), new_items.into(), cache))
        }
        None => {
            let new_items = add(&prod_items, &nbr_items)?;
            let new_users = add(&prod_users, &nbr_users)?;
            Ok((new_users.into(), new_items.into(), LayerCache { aggregates: None }))
        }
    }
}

pub(crate) fn layer_forward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: Option<&LayerWeights<T>>,
    norm: Option<&[T]>,
    k: &KernelConfig,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, LayerCache<T>)> {
    let views = LayerViews {
        items: (g, norm),
        users: (g, norm),
    };
    layer_forward_views(views, xu, xi, weights, k)
}

/// One NGCF layer: the new item row is
/// `sum_u (x_u * x_i) W1 + sum_u x_u W2` over the item's users, and
/// symmetrically for users. The edge product is computed once and the
/// weights are applied to vertex-row aggregates.
///
/// Returns `(new_users, new_items, cache)`.
pub fn ngcf_layer_forward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: &LayerWeights<T>,
    norm: Option<&[T]>,
    kernels: &KernelConfig,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, LayerCache<T>)> {
    layer_forward(g, xu, xi, Some(weights), norm, kernels)
}

/// One LightGCN layer: NGCF without weight matrices, so each edge carries
/// `x_src * x_dst + x_src`.
pub fn lightgcn_layer_forward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    norm: Option<&[T]>,
    kernels: &KernelConfig,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, LayerCache<T>)> {
    layer_forward(g, xu, xi, None, norm, kernels)
}

/// Backward pass of an optimized layer.
#[allow(clippy::too_many_arguments)]
pub fn layer_backward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: Option<&LayerWeights<T>>,
    norm: Option<&[T]>,
    cache: &LayerCache<T>,
    grad_new_users: &EmbeddingMatrix<T>,
    grad_new_items: &EmbeddingMatrix<T>,
    k: &KernelConfig,
) -> Result<LayerGrads<T>> {
    let (g_prod_u, g_nbr_u, g_prod_i, g_nbr_i, weight_grads);
    match (weights, &cache.aggregates) {
        (Some(w), Some(a)) => {
            let mut gw1 = matmul_at_b(&a.prod_items, grad_new_items, &k.dense)?;
            axpy(T::one(), &matmul_at_b(&a.prod_users, grad_new_users, &k.dense)?, &mut gw1)?;
            let mut gw2 = matmul_at_b(&a.nbr_items, grad_new_items, &k.dense)?;
            axpy(T::one(), &matmul_at_b(&a.nbr_users, grad_new_users, &k.dense)?, &mut gw2)?;
            weight_grads = Some(LayerWeights { w1: gw1, w2: gw2 });
            g_prod_i = EmbeddingMatrix::from(matmul_a_bt(grad_new_items, &w.w1, &k.dense)?);
            g_nbr_i = EmbeddingMatrix::from(matmul_a_bt(grad_new_items, &w.w2, &k.dense)?);
            g_prod_u = EmbeddingMatrix::from(matmul_a_bt(grad_new_users, &w.w1, &k.dense)?);
            g_nbr_u = EmbeddingMatrix::from(matmul_a_bt(grad_new_users, &w.w2, &k.dense)?);
        }
        (None, None) => {
            weight_grads = None;
            g_prod_i = grad_new_items.clone();
            g_nbr_i = grad_new_items.clone();
            g_prod_u = grad_new_users.clone();
            g_nbr_u = grad_new_users.clone();
        }
        _ => {
            return Err(crate::error::Error::StaleCache(
                "layer cache does not match the layer's weights".into(),
            ))
        }
    }

    let edge_grad = |dir, grad: &EmbeddingMatrix<T>| match norm {
        Some(w) => spmm_backward_weighted(g, dir, Reduce::Sum, w, grad, &k.spmm),
        None => spmm_backward(g, dir, Reduce::Sum, grad, &k.spmm),
    };
    let source_grad = |dir, grad: &EmbeddingMatrix<T>| match norm {
        Some(w) => spmm_backward_source_weighted(g, dir, Reduce::Sum, w, grad, &k.spmm),
        None => spmm_backward_source(g, dir, Reduce::Sum, grad, &k.spmm),
    };

    let mut g_edges = edge_grad(U2I, &g_prod_i)?;
    let from_users = edge_grad(I2U, &g_prod_u)?;
    axpy(T::one(), &from_users, &mut g_edges)?;
    let (mut grad_users, mut grad_items) = sddmm_backward(g, U2I, xu, xi, BinaryOp::Mul, &g_edges, &k.sddmm)?;
    let copy_users = source_grad(U2I, &g_nbr_i)?;
    let copy_items = source_grad(I2U, &g_nbr_u)?;
    axpy(T::one(), &copy_users, &mut grad_users)?;
    axpy(T::one(), &copy_items, &mut grad_items)?;
    Ok(LayerGrads {
        grad_users,
        grad_items,
        weights: weight_grads,
    })
}
