//! SDDMM and SpMM on a three-edge graph, forward and backward.

use gnnrec::graph::{BipartiteGraph, Direction};
use gnnrec::kernels::{
    sddmm, sddmm_backward, spmm, spmm_backward_source, BinaryOp, EmbeddingMatrix, KernelOptions, Reduce, SpmmInput,
};

fn main() -> gnnrec::Result<()> {
    let g = BipartiteGraph::from_edges(2, 2, [(0, 0), (0, 1), (1, 0)])?;
    let xu = EmbeddingMatrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])?;
    let xi = EmbeddingMatrix::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]])?;
    let o = KernelOptions::new(2);
    let dir = Direction::UserToItem;

    for op in [BinaryOp::Mul, BinaryOp::Add, BinaryOp::Dot] {
        let m = sddmm(&g, dir, &xu, &xi, op, &o)?;
        println!("sddmm {op}: {:?}", m.as_slice());
        if op != BinaryOp::Dot {
            for reduce in [Reduce::Sum, Reduce::Max, Reduce::Mean] {
                let h = spmm(&g, dir, SpmmInput::Edges(&m), reduce, &o)?;
                println!("  spmm {reduce} -> items {:?}", h.as_slice());
            }
        }
    }

    let m = sddmm(&g, dir, &xu, &xi, BinaryOp::Mul, &o)?;
    let (gu, gi) = sddmm_backward(&g, dir, &xu, &xi, BinaryOp::Mul, &m, &o)?;
    println!("d/dx of sum(m^2)/2: users {:?} items {:?}", gu.as_slice(), gi.as_slice());
    let ones = EmbeddingMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]])?;
    let gs = spmm_backward_source(&g, dir, Reduce::Mean, &ones, &o)?;
    println!("mean-aggregation source gradient: {:?}", gs.as_slice());
    Ok(())
}
