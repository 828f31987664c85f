use super::counters::{timed, KernelKind};
use super::parallel::for_row_blocks;
use super::{alloc_output, store, KernelOptions, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn shape_err(what: &str, a: &Matrix<impl Scalar>, b: &Matrix<impl Scalar>) -> Error {
    Error::Shape(format!(
        "{what}: {}x{} and {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

#[inline]
fn row_times<T: Scalar>(acc: &mut [T], x: &[T], w: &Matrix<T>) {
    for (k, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (a, &wv) in acc.iter_mut().zip(w.row(k)) {
            *a = *a + xv * wv;
        }
    }
}

/// `a * w`.
pub fn dense_matmul<T: Scalar>(a: &Matrix<T>, w: &Matrix<T>, opts: &KernelOptions) -> Result<Matrix<T>> {
    if a.cols() != w.rows() {
        return Err(shape_err("matmul", a, w));
    }
    let (n, m) = (a.rows(), w.cols());
    timed(KernelKind::Matmul, n, n * m * T::BYTES, || {
        let mut out = alloc_output::<T>(n, m, opts);
        let nt = opts.streaming();
        for_row_blocks(out.as_mut_slice(), m, opts.workers(), nt, |first, block| {
            let mut acc = vec![T::zero(); m];
            for (k, dst) in block.chunks_mut(m.max(1)).enumerate() {
                acc.iter_mut().for_each(|v| *v = T::zero());
                row_times(&mut acc, a.row(first + k), w);
                for (o, &v) in dst.iter_mut().zip(&acc) {
                    store(o, v, nt);
                }
            }
        });
        Ok(out)
    })
}

/// `a * w1 + b * w2` as a single pass over the rows of `a` and `b`.
pub fn dual_matmul<T: Scalar>(
    a: &Matrix<T>,
    w1: &Matrix<T>,
    b: &Matrix<T>,
    w2: &Matrix<T>,
    opts: &KernelOptions,
) -> Result<Matrix<T>> {
    if a.cols() != w1.rows() {
        return Err(shape_err("matmul", a, w1));
    }
    if b.cols() != w2.rows() {
        return Err(shape_err("matmul", b, w2));
    }
    if a.rows() != b.rows() || w1.cols() != w2.cols() {
        return Err(shape_err("dual matmul operands", a, b));
    }
    let (n, m) = (a.rows(), w1.cols());
    timed(KernelKind::Matmul, n, n * m * T::BYTES, || {
        let mut out = alloc_output::<T>(n, m, opts);
        let nt = opts.streaming();
        for_row_blocks(out.as_mut_slice(), m, opts.workers(), nt, |first, block| {
            let mut acc = vec![T::zero(); m];
            for (k, dst) in block.chunks_mut(m.max(1)).enumerate() {
                acc.iter_mut().for_each(|v| *v = T::zero());
                row_times(&mut acc, a.row(first + k), w1);
                row_times(&mut acc, b.row(first + k), w2);
                for (o, &v) in dst.iter_mut().zip(&acc) {
                    store(o, v, nt);
                }
            }
        });
        Ok(out)
    })
}

/// `a * b^T`; the input gradient of a product with weight `b`.
pub fn matmul_a_bt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, opts: &KernelOptions) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(shape_err("matmul a*b^T", a, b));
    }
    let (n, m) = (a.rows(), b.rows());
    timed(KernelKind::MatmulGrad, n, n * m * T::BYTES, || {
        let mut out = alloc_output::<T>(n, m, opts);
        let nt = opts.streaming();
        for_row_blocks(out.as_mut_slice(), m, opts.workers(), nt, |first, block| {
            for (k, dst) in block.chunks_mut(m.max(1)).enumerate() {
                let x = a.row(first + k);
                for (j, o) in dst.iter_mut().enumerate() {
                    let v = x.iter().zip(b.row(j)).fold(T::zero(), |s, (&p, &q)| s + p * q);
                    store(o, v, nt);
                }
            }
        });
        Ok(out)
    })
}

/// `a^T * b`; the weight gradient of a product with input `a`.
///
/// Each output row accumulates over input rows in order, so the result
/// does not depend on the worker count.
pub fn matmul_at_b<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, opts: &KernelOptions) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(shape_err("matmul a^T*b", a, b));
    }
    let (n, m) = (a.cols(), b.cols());
    timed(KernelKind::MatmulGrad, n, n * m * T::BYTES, || {
        let mut out = Matrix::zeros(n, m);
        for_row_blocks(out.as_mut_slice(), m, opts.workers(), false, |first, block| {
            let rows = block.len() / m.max(1);
            for r in 0..a.rows() {
                let x = a.row(r);
                let y = b.row(r);
                for k in 0..rows {
                    let c = x[first + k];
                    if c == T::zero() {
                        continue;
                    }
                    for (o, &v) in block[k * m..(k + 1) * m].iter_mut().zip(y) {
                        *o = *o + c * v;
                    }
                }
            }
        });
        Ok(out)
    })
}

/// `y += alpha * x`.
pub fn axpy<T: Scalar>(alpha: T, x: &Matrix<T>, y: &mut Matrix<T>) -> Result<()> {
    if (x.rows(), x.cols()) != (y.rows(), y.cols()) {
        return Err(shape_err("axpy", x, y));
    }
    let rows = y.rows();
    let bytes = y.as_slice().len() * T::BYTES;
    timed(KernelKind::Add, rows, bytes, || {
        for (o, &v) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *o = *o + alpha * v;
        }
    });
    Ok(())
}

/// `a + b`.
pub fn add<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = a.clone();
    axpy(T::one(), b, &mut out)?;
    Ok(out)
}
