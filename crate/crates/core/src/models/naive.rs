//! Reference dataflow: messages are built and weighted per edge, then
//! scattered into their destinations with plain loops.

use super::{LayerGrads, LayerWeights};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::kernels::{dual_matmul, matmul_a_bt, matmul_at_b, EmbeddingMatrix, KernelOptions, Matrix};
use crate::scalar::Scalar;

/// Per-edge tensors of a naive layer.
#[derive(Clone, Debug)]
pub struct NaiveLayerCache<T = f32> {
    /// Weighted edge products, `|E| x d`.
    products: Matrix<T>,
    /// Weighted user rows sent to items.
    to_items: Matrix<T>,
    /// Weighted item rows sent to users.
    to_users: Matrix<T>,
}

fn check<T: Scalar>(g: &BipartiteGraph, xu: &EmbeddingMatrix<T>, xi: &EmbeddingMatrix<T>) -> Result<()> {
    if xu.rows() != g.num_users() || xi.rows() != g.num_items() || xu.dim() != xi.dim() {
        return Err(Error::Shape(format!(
            "embeddings {}x{} / {}x{} for {} users and {} items",
            xu.rows(),
            xu.dim(),
            xi.rows(),
            xi.dim(),
            g.num_users(),
            g.num_items()
        )));
    }
    Ok(())
}

fn edge_weight<T: Scalar>(norm: Option<&[T]>, e: usize) -> T {
    norm.map_or(T::one(), |w| w[e])
}

/// Products and copied rows for one direction, each `|E| x d`.
fn edge_tensors<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    copy_users: bool,
    norm: Option<&[T]>,
) -> (Matrix<T>, Matrix<T>) {
    let d = xu.dim();
    let ne = g.num_edges();
    let mut prod = Matrix::zeros(ne, d);
    let mut copy = Matrix::zeros(ne, d);
    for (e, (u, i)) in g.edges().enumerate() {
        let w = edge_weight(norm, e);
        let (a, b) = (xu.row(u as usize), xi.row(i as usize));
        for c in 0..d {
            prod.row_mut(e)[c] = w * a[c] * b[c];
            copy.row_mut(e)[c] = w * if copy_users { a[c] } else { b[c] };
        }
    }
    (prod, copy)
}

fn messages<T: Scalar>(
    prod: &Matrix<T>,
    copy: &Matrix<T>,
    weights: Option<&LayerWeights<T>>,
    opts: &KernelOptions,
) -> Result<Matrix<T>> {
    match weights {
        Some(w) => dual_matmul(prod, &w.w1, copy, &w.w2, opts),
        None => {
            let mut m = prod.clone();
            for (o, &v) in m.as_mut_slice().iter_mut().zip(copy.as_slice()) {
                *o = *o + v;
            }
            Ok(m)
        }
    }
}

pub(crate) fn naive_layer_forward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: Option<&LayerWeights<T>>,
    norm: Option<&[T]>,
    opts: &KernelOptions,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, NaiveLayerCache<T>)> {
    check(g, xu, xi)?;
    let d = weights.map_or(xu.dim(), |w| w.w1.cols());
    let (products, to_items) = edge_tensors(g, xu, xi, true, norm);
    let msg_items = messages(&products, &to_items, weights, opts)?;
    let (products_again, to_users) = edge_tensors(g, xu, xi, false, norm);
    let msg_users = messages(&products_again, &to_users, weights, opts)?;

    let mut new_users = EmbeddingMatrix::zeros(g.num_users(), d);
    let mut new_items = EmbeddingMatrix::zeros(g.num_items(), d);
    for (e, (u, i)) in g.edges().enumerate() {
        for (o, &v) in new_items.row_mut(i as usize).iter_mut().zip(msg_items.row(e)) {
            *o = *o + v;
        }
        for (o, &v) in new_users.row_mut(u as usize).iter_mut().zip(msg_users.row(e)) {
            *o = *o + v;
        }
    }
    let cache = NaiveLayerCache {
        products,
        to_items,
        to_users,
    };
    Ok((new_users, new_items, cache))
}

/// NGCF layer with weights applied to every edge message (`2|E|` weight
/// rows), aggregated by scatter-add. Returns `(new_users, new_items, cache)`.
pub fn naive_ngcf_layer_forward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: &LayerWeights<T>,
    norm: Option<&[T]>,
    opts: &KernelOptions,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, NaiveLayerCache<T>)> {
    naive_layer_forward(g, xu, xi, Some(weights), norm, opts)
}

pub fn naive_lightgcn_layer_forward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    norm: Option<&[T]>,
    opts: &KernelOptions,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>, NaiveLayerCache<T>)> {
    naive_layer_forward(g, xu, xi, None, norm, opts)
}

/// Backward pass of the naive layer, by per-edge loops.
#[allow(clippy::too_many_arguments)]
pub fn naive_layer_backward<T: Scalar>(
    g: &BipartiteGraph,
    xu: &EmbeddingMatrix<T>,
    xi: &EmbeddingMatrix<T>,
    weights: Option<&LayerWeights<T>>,
    norm: Option<&[T]>,
    cache: &NaiveLayerCache<T>,
    grad_new_users: &EmbeddingMatrix<T>,
    grad_new_items: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<LayerGrads<T>> {
    check(g, xu, xi)?;
    let ne = g.num_edges();
    let od = grad_new_items.dim();
    let mut g_msg_items = Matrix::zeros(ne, od);
    let mut g_msg_users = Matrix::zeros(ne, od);
    for (e, (u, i)) in g.edges().enumerate() {
        g_msg_items.row_mut(e).copy_from_slice(grad_new_items.row(i as usize));
        g_msg_users.row_mut(e).copy_from_slice(grad_new_users.row(u as usize));
    }

    let (g_prod, g_to_items, g_to_users, weight_grads) = match weights {
        Some(w) => {
            let mut gw1 = matmul_at_b(&cache.products, &g_msg_items, opts)?;
            let gw1b = matmul_at_b(&cache.products, &g_msg_users, opts)?;
            let mut gw2 = matmul_at_b(&cache.to_items, &g_msg_items, opts)?;
            let gw2b = matmul_at_b(&cache.to_users, &g_msg_users, opts)?;
            for (a, &b) in gw1.as_mut_slice().iter_mut().zip(gw1b.as_slice()) {
                *a = *a + b;
            }
            for (a, &b) in gw2.as_mut_slice().iter_mut().zip(gw2b.as_slice()) {
                *a = *a + b;
            }
            let mut g_prod = matmul_a_bt(&g_msg_items, &w.w1, opts)?;
            let g_prod_b = matmul_a_bt(&g_msg_users, &w.w1, opts)?;
            for (a, &b) in g_prod.as_mut_slice().iter_mut().zip(g_prod_b.as_slice()) {
                *a = *a + b;
            }
            let g_to_items = matmul_a_bt(&g_msg_items, &w.w2, opts)?;
            let g_to_users = matmul_a_bt(&g_msg_users, &w.w2, opts)?;
            (g_prod, g_to_items, g_to_users, Some(LayerWeights { w1: gw1, w2: gw2 }))
        }
        None => {
            let mut g_prod = g_msg_items.clone();
            for (a, &b) in g_prod.as_mut_slice().iter_mut().zip(g_msg_users.as_slice()) {
                *a = *a + b;
            }
            (g_prod, g_msg_items, g_msg_users, None)
        }
    };

    let d = xu.dim();
    let mut grad_users = EmbeddingMatrix::zeros(g.num_users(), d);
    let mut grad_items = EmbeddingMatrix::zeros(g.num_items(), d);
    for (e, (u, i)) in g.edges().enumerate() {
        let (u, i) = (u as usize, i as usize);
        let w = edge_weight(norm, e);
        for c in 0..d {
            let gp = g_prod.get(e, c);
            let gu = w * (gp * xi.get(i, c) + g_to_items.get(e, c));
            let gi = w * (gp * xu.get(u, c) + g_to_users.get(e, c));
            grad_users.row_mut(u)[c] = grad_users.get(u, c) + gu;
            grad_items.row_mut(i)[c] = grad_items.get(i, c) + gi;
        }
    }
    Ok(LayerGrads {
        grad_users,
        grad_items,
        weights: weight_grads,
    })
}
