use super::counters::{timed, KernelKind};
use super::parallel::for_row_blocks;
use super::sddmm::gather_rows;
use super::{alloc_output, check_rows, store, EdgeMessageMatrix, EmbeddingMatrix, KernelOptions, Reduce};
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Direction};
use crate::scalar::Scalar;

/// What SpMM aggregates along each incoming edge.
#[derive(Clone, Copy, Debug)]
pub enum SpmmInput<'a, T> {
    /// Precomputed per-edge messages in canonical edge order.
    Edges(&'a EdgeMessageMatrix<T>),
    /// The source vertex's row, copied along the edge.
    Source(&'a EmbeddingMatrix<T>),
}

impl<T: Scalar> SpmmInput<'_, T> {
    fn dim(&self) -> usize {
        match self {
            SpmmInput::Edges(m) => m.dim(),
            SpmmInput::Source(x) => x.dim(),
        }
    }

    #[inline]
    fn row(&self, edge: usize, src: usize) -> &[T] {
        match self {
            SpmmInput::Edges(m) => m.row(edge),
            SpmmInput::Source(x) => x.row(src),
        }
    }
}

fn kind_of(reduce: Reduce) -> KernelKind {
    match reduce {
        Reduce::Sum => KernelKind::SpmmSum,
        Reduce::Max => KernelKind::SpmmMax,
        Reduce::Mean => KernelKind::SpmmMean,
    }
}

fn check_weights<T>(g: &BipartiteGraph, weights: Option<&[T]>) -> Result<()> {
    match weights {
        Some(w) if w.len() != g.num_edges() => Err(Error::Shape(format!(
            "{} edge weights for {} edges",
            w.len(),
            g.num_edges()
        ))),
        _ => Ok(()),
    }
}

/// Reduce incoming messages at every destination of `dir`.
///
/// Destinations without incoming edges get a zero row for every reduction.
pub fn spmm<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    input: SpmmInput<'_, T>,
    reduce: Reduce,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    aggregate(g, dir, input, None, reduce, opts)
}

/// [`spmm`] with each message scaled by a per-edge weight first.
pub fn spmm_weighted<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    input: SpmmInput<'_, T>,
    weights: &[T],
    reduce: Reduce,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    aggregate(g, dir, input, Some(weights), reduce, opts)
}

fn aggregate<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    input: SpmmInput<'_, T>,
    weights: Option<&[T]>,
    reduce: Reduce,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    match input {
        SpmmInput::Edges(m) => check_rows(m, g.num_edges(), "edge messages")?,
        SpmmInput::Source(x) => check_rows(x, g.num_on(dir.src_side()), "source embeddings")?,
    }
    check_weights(g, weights)?;
    let d = input.dim();
    let adj = g.in_adjacency(dir);
    let rows = adj.num_rows();
    timed(kind_of(reduce), rows, rows * d * T::BYTES, || {
        let mut out = alloc_output::<T>(rows, d, opts);
        let nt = opts.streaming();
        for_row_blocks(out.as_mut_slice(), d, opts.workers(), nt, |first, block| {
            let mut acc = vec![T::zero(); d];
            for (k, dst) in block.chunks_mut(d.max(1)).enumerate() {
                let range = adj.range(first + k);
                let deg = range.len();
                let init = if reduce == Reduce::Max && deg > 0 { T::neg_infinity() } else { T::zero() };
                acc.iter_mut().for_each(|a| *a = init);
                for p in range {
                    let e = adj.edge_id(p);
                    let msg = input.row(e, adj.cols[p] as usize);
                    let w = weights.map_or(T::one(), |w| w[e]);
                    if reduce == Reduce::Max {
                        for (a, &m) in acc.iter_mut().zip(msg) {
                            *a = a.max(w * m);
                        }
                    } else {
                        for (a, &m) in acc.iter_mut().zip(msg) {
                            *a = *a + w * m;
                        }
                    }
                }
                if reduce == Reduce::Mean && deg > 0 {
                    let inv = T::one() / T::from_usize(deg).expect("degree fits scalar");
                    acc.iter_mut().for_each(|a| *a = *a * inv);
                }
                for (o, &v) in dst.iter_mut().zip(&acc) {
                    store(o, v, nt);
                }
            }
        });
        Ok(EmbeddingMatrix::from(out))
    })
}

fn backward_scale<T: Scalar>(reduce: Reduce) -> Result<impl Fn(usize) -> T> {
    if reduce == Reduce::Max {
        return Err(Error::Unsupported("gradient of max reduction".into()));
    }
    Ok(move |deg: usize| {
        if reduce == Reduce::Mean && deg > 0 {
            T::one() / T::from_usize(deg).expect("degree fits scalar")
        } else {
            T::one()
        }
    })
}

fn check_grad<T: Scalar>(g: &BipartiteGraph, dir: Direction, grad_out: &EmbeddingMatrix<T>) -> Result<()> {
    check_rows(grad_out, g.num_on(dir.dst_side()), "aggregate gradient")
}

/// Gradient of [`spmm`] with respect to per-edge messages.
pub fn spmm_backward<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    reduce: Reduce,
    grad_out: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<EdgeMessageMatrix<T>> {
    edge_backward(g, dir, reduce, None, grad_out, opts)
}

/// Gradient of [`spmm_weighted`] with respect to per-edge messages.
pub fn spmm_backward_weighted<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    reduce: Reduce,
    weights: &[T],
    grad_out: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<EdgeMessageMatrix<T>> {
    edge_backward(g, dir, reduce, Some(weights), grad_out, opts)
}

fn edge_backward<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    reduce: Reduce,
    weights: Option<&[T]>,
    grad_out: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<EdgeMessageMatrix<T>> {
    let scale = backward_scale::<T>(reduce)?;
    check_grad(g, dir, grad_out)?;
    check_weights(g, weights)?;
    let d = grad_out.dim();
    let ne = g.num_edges();
    timed(KernelKind::SpmmBackward, ne, ne * d * T::BYTES, || {
        let mut out = alloc_output::<T>(ne, d, opts);
        let csr = g.user_csr();
        let nt = opts.streaming();
        for_row_blocks(out.as_mut_slice(), d, opts.workers(), nt, |first, block| {
            let mut u = csr.row_ptr.partition_point(|&p| p <= first).saturating_sub(1);
            for (k, row) in block.chunks_mut(d.max(1)).enumerate() {
                let e = first + k;
                while csr.row_ptr[u + 1] <= e {
                    u += 1;
                }
                let i = csr.cols[e] as usize;
                let t = match dir {
                    Direction::UserToItem => i,
                    Direction::ItemToUser => u,
                };
                let c = scale(g.degree(dir.dst_side(), t)) * weights.map_or(T::one(), |w| w[e]);
                for (o, &gv) in row.iter_mut().zip(grad_out.row(t)) {
                    store(o, c * gv, nt);
                }
            }
        });
        Ok(EdgeMessageMatrix::from(out))
    })
}

/// Gradient of `spmm(.., SpmmInput::Source(x), ..)` with respect to `x`.
pub fn spmm_backward_source<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    reduce: Reduce,
    grad_out: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    source_backward(g, dir, reduce, None, grad_out, opts)
}

/// Gradient of `spmm_weighted(.., SpmmInput::Source(x), ..)` with respect to `x`.
pub fn spmm_backward_source_weighted<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    reduce: Reduce,
    weights: &[T],
    grad_out: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    source_backward(g, dir, reduce, Some(weights), grad_out, opts)
}

fn source_backward<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    reduce: Reduce,
    weights: Option<&[T]>,
    grad_out: &EmbeddingMatrix<T>,
    opts: &KernelOptions,
) -> Result<EmbeddingMatrix<T>> {
    let scale = backward_scale::<T>(reduce)?;
    check_grad(g, dir, grad_out)?;
    check_weights(g, weights)?;
    let d = grad_out.dim();
    let adj = g.adjacency(dir.src_side());
    let rows = adj.num_rows();
    let dst_side = dir.dst_side();
    timed(KernelKind::SpmmBackward, rows, rows * d * T::BYTES, || {
        let m = gather_rows(adj, d, opts, |acc, e, t| {
            let c = scale(g.degree(dst_side, t)) * weights.map_or(T::one(), |w| w[e]);
            for (a, &gv) in acc.iter_mut().zip(grad_out.row(t)) {
                *a = *a + c * gv;
            }
        });
        Ok(EmbeddingMatrix::from(m))
    })
}
