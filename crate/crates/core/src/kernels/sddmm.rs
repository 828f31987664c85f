use super::counters::{timed, KernelKind};
use super::parallel::for_row_blocks;
use super::{alloc_output, check_rows, store, BinaryOp, EdgeMessageMatrix, EmbeddingMatrix, KernelOptions, Matrix};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, BipartiteGraph, Direction};
use crate::scalar::Scalar;

fn kind_of(op: BinaryOp) -> KernelKind {
    match op {
        BinaryOp::Mul => KernelKind::SddmmMul,
        BinaryOp::Add => KernelKind::SddmmAdd,
        BinaryOp::Dot => KernelKind::SddmmDot,
    }
}

fn check_inputs<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    x_src: &EmbeddingMatrix<T>,
    x_dst: &EmbeddingMatrix<T>,
) -> Result<()> {
    check_rows(x_src, g.num_on(dir.src_side()), "source embeddings")?;
    check_rows(x_dst, g.num_on(dir.dst_side()), "destination embeddings")?;
    if x_src.dim() != x_dst.dim() {
        return Err(Error::Shape(format!(
            "source dim {} != destination dim {}",
            x_src.dim(),
            x_dst.dim()
        )));
    }
    Ok(())
}

/// Per-edge binary operation between the source and destination rows.
///
/// Output row `e` belongs to canonical edge `e`. `Dot` yields one column.
/// Edges are split into contiguous per-worker ranges, so the result is
/// bitwise identical for any worker count.
pub fn sddmm<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    x_src: &EmbeddingMatrix<T>,
    x_dst: &EmbeddingMatrix<T>,
    op: BinaryOp,
    opts: &KernelOptions,
) -> Result<EdgeMessageMatrix<T>> {
    check_inputs(g, dir, x_src, x_dst)?;
    let d = x_src.dim();
    let out_dim = if op == BinaryOp::Dot { 1 } else { d };
    let ne = g.num_edges();
    let bytes = ne * out_dim * T::BYTES;
    timed(kind_of(op), ne, bytes, || {
        let mut out = alloc_output::<T>(ne, out_dim, opts);
        let csr = g.user_csr();
        let nt = opts.streaming();
        for_row_blocks(out.as_mut_slice(), out_dim, opts.workers(), nt, |first, block| {
            let n = block.len() / out_dim;
            let mut u = csr.row_ptr.partition_point(|&p| p <= first).saturating_sub(1);
            for k in 0..n {
                let e = first + k;
                while csr.row_ptr[u + 1] <= e {
                    u += 1;
                }
                let i = csr.cols[e] as usize;
                let (s, t) = match dir {
                    Direction::UserToItem => (u, i),
                    Direction::ItemToUser => (i, u),
                };
                let a = x_src.row(s);
                let b = x_dst.row(t);
                let dst = &mut block[k * out_dim..(k + 1) * out_dim];
                match op {
                    BinaryOp::Mul => {
                        for ((o, &x), &y) in dst.iter_mut().zip(a).zip(b) {
                            store(o, x * y, nt);
                        }
                    }
                    BinaryOp::Add => {
                        for ((o, &x), &y) in dst.iter_mut().zip(a).zip(b) {
                            store(o, x + y, nt);
                        }
                    }
                    BinaryOp::Dot => {
                        let v = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                        store(&mut dst[0], v, nt);
                    }
                }
            }
        });
        Ok(EdgeMessageMatrix::from(out))
    })
}

/// Sum over each row's adjacency of `term(edge_id, neighbor)`, written
/// into a fresh `rows x dim` matrix. Rows are partitioned across workers.
pub(super) fn gather_rows<T, F>(adj: Adjacency<'_>, dim: usize, opts: &KernelOptions, term: F) -> Matrix<T>
where
    T: Scalar,
    F: Fn(&mut [T], usize, usize) + Sync,
{
    let rows = adj.num_rows();
    let mut out = alloc_output::<T>(rows, dim, opts);
    let nt = opts.streaming();
    for_row_blocks(out.as_mut_slice(), dim, opts.workers(), nt, |first, block| {
        let mut acc = vec![T::zero(); dim];
        for (k, dst) in block.chunks_mut(dim.max(1)).enumerate() {
            let r = first + k;
            acc.iter_mut().for_each(|a| *a = T::zero());
            for p in adj.range(r) {
                term(&mut acc, adj.edge_id(p), adj.cols[p] as usize);
            }
            for (o, &v) in dst.iter_mut().zip(&acc) {
                store(o, v, nt);
            }
        }
    });
    out
}

/// Gradients of [`sddmm`] with respect to both inputs.
///
/// Each side is an SpMM over the edge gradient: for `Mul`,
/// `grad_src[s] = sum_e grad_out[e] * x_dst[d]`; for `Add` a plain edge
/// sum; for `Dot`, `grad_src[s] = sum_e grad_out[e] * x_dst[d]` with a
/// scalar edge gradient. Destinations are symmetric.
pub fn sddmm_backward<T: Scalar>(
    g: &BipartiteGraph,
    dir: Direction,
    x_src: &EmbeddingMatrix<T>,
    x_dst: &EmbeddingMatrix<T>,
    op: BinaryOp,
    grad_out: &EdgeMessageMatrix<T>,
    opts: &KernelOptions,
) -> Result<(EmbeddingMatrix<T>, EmbeddingMatrix<T>)> {
    check_inputs(g, dir, x_src, x_dst)?;
    let d = x_src.dim();
    let gdim = if op == BinaryOp::Dot { 1 } else { d };
    check_rows(grad_out, g.num_edges(), "edge gradient")?;
    if grad_out.dim() != gdim {
        return Err(Error::Shape(format!(
            "edge gradient dim {} for op {op}, expected {gdim}",
            grad_out.dim()
        )));
    }
    let rows = x_src.rows() + x_dst.rows();
    timed(KernelKind::SddmmBackward, rows, rows * d * T::BYTES, || {
        let side = |adj: Adjacency<'_>, other: &EmbeddingMatrix<T>| -> EmbeddingMatrix<T> {
            let m = match op {
                BinaryOp::Mul => gather_rows(adj, d, opts, |acc, e, nb| {
                    let ge = grad_out.row(e);
                    let y = other.row(nb);
                    for ((a, &gv), &yv) in acc.iter_mut().zip(ge).zip(y) {
                        *a = *a + gv * yv;
                    }
                }),
                BinaryOp::Add => gather_rows(adj, d, opts, |acc, e, _| {
                    for (a, &gv) in acc.iter_mut().zip(grad_out.row(e)) {
                        *a = *a + gv;
                    }
                }),
                BinaryOp::Dot => gather_rows(adj, d, opts, |acc, e, nb| {
                    let ge = grad_out.row(e)[0];
                    for (a, &yv) in acc.iter_mut().zip(other.row(nb)) {
                        *a = *a + ge * yv;
                    }
                }),
            };
            EmbeddingMatrix::from(m)
        };
        let grad_src = side(g.adjacency(dir.src_side()), x_dst);
        let grad_dst = side(g.adjacency(dir.dst_side()), x_src);
        Ok((grad_src, grad_dst))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::WriteMode;

    fn example() -> (BipartiteGraph, EmbeddingMatrix<f32>, EmbeddingMatrix<f32>) {
        let g = BipartiteGraph::from_edges(2, 2, [(0, 0), (0, 1), (1, 0)]).unwrap();
        let xu = EmbeddingMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let xi = EmbeddingMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        (g, xu, xi)
    }

    #[test]
    fn mul_and_dot_examples() {
        let (g, xu, xi) = example();
        let o = KernelOptions::default();
        let m = sddmm(&g, Direction::UserToItem, &xu, &xi, BinaryOp::Mul, &o).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0, 0.0, 2.0, 3.0, 0.0]);
        let d = sddmm(&g, Direction::UserToItem, &xu, &xi, BinaryOp::Dot, &o).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 2.0, 3.0]);
        let a = sddmm(&g, Direction::UserToItem, &xu, &xi, BinaryOp::Add, &o).unwrap();
        assert_eq!(a.as_slice(), &[2.0, 2.0, 1.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn mul_by_ones_copies_source() {
        let (g, xu, _) = example();
        let ones = EmbeddingMatrix::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let m = sddmm(&g, Direction::UserToItem, &xu, &ones, BinaryOp::Mul, &KernelOptions::default()).unwrap();
        for e in 0..g.num_edges() {
            let (u, _) = g.edge(e);
            assert_eq!(m.row(e), xu.row(u as usize));
        }
    }

    #[test]
    fn reversed_direction_swaps_operands() {
        let (g, xu, xi) = example();
        let o = KernelOptions::default();
        let a = sddmm(&g, Direction::UserToItem, &xu, &xi, BinaryOp::Mul, &o).unwrap();
        let b = sddmm(&g, Direction::ItemToUser, &xi, &xu, BinaryOp::Mul, &o).unwrap();
        assert_eq!(a, b);
        assert!(sddmm(&g, Direction::ItemToUser, &xu, &xi.cast(), BinaryOp::Mul, &o).is_ok());
    }

    #[test]
    fn shape_errors() {
        let (g, xu, _) = example();
        let bad = EmbeddingMatrix::<f32>::zeros(3, 2);
        assert!(matches!(
            sddmm(&g, Direction::UserToItem, &xu, &bad, BinaryOp::Mul, &KernelOptions::default()),
            Err(Error::Shape(_))
        ));
        let narrow = EmbeddingMatrix::<f32>::zeros(2, 1);
        assert!(sddmm(&g, Direction::UserToItem, &xu, &narrow, BinaryOp::Add, &KernelOptions::default()).is_err());
    }

    #[test]
    fn backward_examples() {
        let g = BipartiteGraph::from_edges(1, 1, [(0, 0)]).unwrap();
        let xu = EmbeddingMatrix::from_rows(&[&[1.0f32, 2.0]]).unwrap();
        let xi = EmbeddingMatrix::from_rows(&[&[3.0f32, 5.0]]).unwrap();
        let go = EdgeMessageMatrix::from_rows(&[&[1.0f32, 1.0]]).unwrap();
        let (gu, gi) = sddmm_backward(&g, Direction::UserToItem, &xu, &xi, BinaryOp::Mul, &go, &KernelOptions::default()).unwrap();
        assert_eq!(gu.row(0), xi.row(0));
        assert_eq!(gi.row(0), xu.row(0));

        let (g, xu, xi) = example();
        let ones = EdgeMessageMatrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let (gu, gi) = sddmm_backward(&g, Direction::UserToItem, &xu, &xi, BinaryOp::Mul, &ones, &KernelOptions::default()).unwrap();
        assert_eq!(gu.row(0), &[1.0, 1.0]);
        assert_eq!(gu.row(1), &[1.0, 0.0]);
        assert_eq!(gi.row(0), &[4.0, 6.0]);
        assert_eq!(gi.row(1), &[1.0, 2.0]);
    }

    #[test]
    fn streaming_stores_match_normal() {
        let (g, xu, xi) = example();
        let normal = KernelOptions::new(2);
        let nt = KernelOptions::new(2).with_write_mode(WriteMode::NonTemporal);
        for op in [BinaryOp::Mul, BinaryOp::Add, BinaryOp::Dot] {
            let a = sddmm(&g, Direction::UserToItem, &xu, &xi, op, &normal).unwrap();
            let b = sddmm(&g, Direction::UserToItem, &xu, &xi, op, &nt).unwrap();
            assert_eq!(a, b);
        }
    }
}
