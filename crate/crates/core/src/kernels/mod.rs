//! Generalized SDDMM and SpMM kernels, their gradients, and the dense
//! helpers used for weight application.
//!
//! Every per-edge buffer is laid out in the graph's canonical edge order
//! (user-major). Kernels take a [`Direction`](crate::graph::Direction) that
//! says which side supplies sources and which side receives aggregates.

pub mod counters;
mod dense;
mod parallel;
mod sddmm;
mod spmm;

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::membench::Placement;
use crate::scalar::Scalar;

pub use dense::{add, axpy, dense_matmul, dual_matmul, matmul_a_bt, matmul_at_b};
pub use sddmm::{sddmm, sddmm_backward};
pub use spmm::{
    spmm, spmm_backward, spmm_backward_source, spmm_backward_source_weighted,
    spmm_backward_weighted, spmm_weighted, SpmmInput,
};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy().powi(2)).sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

macro_rules! matrix_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = f32>(Matrix<T>);

        impl<T: Scalar> $name<T> {
            pub fn zeros(rows: usize, dim: usize) -> Self {
                Self(Matrix::zeros(rows, dim))
            }

            pub fn from_vec(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
                Matrix::from_vec(rows, dim, data).map(Self)
            }

            pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
                Matrix::from_rows(rows).map(Self)
            }

            pub fn dim(&self) -> usize {
                self.0.cols()
            }

            pub fn into_matrix(self) -> Matrix<T> {
                self.0
            }

            pub fn cast<U: Scalar>(&self) -> $name<U> {
                $name(self.0.cast())
            }
        }

        impl<T> From<Matrix<T>> for $name<T> {
            fn from(m: Matrix<T>) -> Self {
                Self(m)
            }
        }

        impl<T> Deref for $name<T> {
            type Target = Matrix<T>;
            fn deref(&self) -> &Matrix<T> {
                &self.0
            }
        }

        impl<T> DerefMut for $name<T> {
            fn deref_mut(&mut self) -> &mut Matrix<T> {
                &mut self.0
            }
        }
    };
}

matrix_newtype!(
    /// One embedding row per vertex of a side.
    EmbeddingMatrix
);
matrix_newtype!(
    /// One message row per edge, in canonical edge order.
    EdgeMessageMatrix
);

impl<T: Scalar> EdgeMessageMatrix<T> {
    pub fn num_edges(&self) -> usize {
        self.0.rows()
    }
}

/// Binary operator applied by SDDMM to a source and destination row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    /// Elementwise product.
    Mul,
    /// Elementwise sum.
    Add,
    /// Inner product, one scalar per edge.
    Dot,
}

impl FromStr for BinaryOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mul" => Ok(BinaryOp::Mul),
            "add" => Ok(BinaryOp::Add),
            "dot" => Ok(BinaryOp::Dot),
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }
}

impl fmt::Display for BinaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinaryOp::Mul => "mul",
            BinaryOp::Add => "add",
            BinaryOp::Dot => "dot",
        })
    }
}

/// Reduction applied by SpMM over the incoming edges of a destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reduce {
    Sum,
    Max,
    Mean,
}

impl FromStr for Reduce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduce::Sum),
            "max" => Ok(Reduce::Max),
            "mean" => Ok(Reduce::Mean),
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }
}

impl fmt::Display for Reduce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduce::Sum => "sum",
            Reduce::Max => "max",
            Reduce::Mean => "mean",
        })
    }
}

/// Store flavour for kernel outputs. Numerically transparent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum WriteMode {
    #[default]
    Normal,
    /// Streaming stores that bypass the caches; plain stores where the
    /// target has none.
    NonTemporal,
}

impl FromStr for WriteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(WriteMode::Normal),
            "non_temporal" | "nt" => Ok(WriteMode::NonTemporal),
            other => Err(Error::InvalidArgument(format!("unknown write mode `{other}`"))),
        }
    }
}

impl fmt::Display for WriteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WriteMode::Normal => "normal",
            WriteMode::NonTemporal => "non_temporal",
        })
    }
}

/// Per-kernel execution settings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelOptions {
    workers: usize,
    pub write_mode: WriteMode,
    /// Page placement for freshly allocated outputs.
    pub placement: Option<Placement>,
}

impl KernelOptions {
    pub fn new(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
            write_mode: WriteMode::Normal,
            placement: None,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_write_mode(mut self, mode: WriteMode) -> Self {
        self.write_mode = mode;
        self
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = Some(placement);
        self
    }

    pub(crate) fn streaming(&self) -> bool {
        self.write_mode == WriteMode::NonTemporal
    }
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self::new(1)
    }
}

/// Options for each kernel family used by a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelConfig {
    pub sddmm: KernelOptions,
    pub spmm: KernelOptions,
    pub dense: KernelOptions,
}

impl KernelConfig {
    /// Streaming stores for SDDMM and normal stores for SpMM, all kernels
    /// on `workers` threads.
    pub fn with_workers(workers: usize) -> Self {
        Self {
            sddmm: KernelOptions::new(workers).with_write_mode(WriteMode::NonTemporal),
            spmm: KernelOptions::new(workers),
            dense: KernelOptions::new(workers),
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::with_workers(1)
    }
}

#[inline]
pub(crate) fn store<T: Scalar>(dst: &mut T, v: T, streaming: bool) {
    if streaming {
        T::store_streaming(dst, v);
    } else {
        *dst = v;
    }
}

pub(crate) fn check_rows<T: Scalar>(m: &Matrix<T>, rows: usize, what: &str) -> Result<()> {
    if m.rows() != rows {
        return Err(Error::Shape(format!(
            "{what} has {} rows, expected {rows}",
            m.rows()
        )));
    }
    Ok(())
}

/// Allocate a zeroed output matrix, binding its pages when a placement is
/// configured.
pub(crate) fn alloc_output<T: Scalar>(rows: usize, cols: usize, opts: &KernelOptions) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, cols);
    if let Some(p) = &opts.placement {
        // Binding is a performance hint; a failure leaves default placement.
        let _ = crate::membench::bind_slice(m.as_mut_slice(), p);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_ops() {
        assert_eq!("mul".parse::<BinaryOp>().unwrap(), BinaryOp::Mul);
        assert!(matches!("sub".parse::<BinaryOp>(), Err(Error::UnknownOp(_))));
        assert_eq!("mean".parse::<Reduce>().unwrap(), Reduce::Mean);
        assert!(matches!("min".parse::<Reduce>(), Err(Error::UnknownOp(_))));
        assert_eq!("nt".parse::<WriteMode>().unwrap(), WriteMode::NonTemporal);
    }

    #[test]
    fn matrix_shape_checks() {
        assert!(Matrix::<f32>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f32>::from_rows(&[&[1.0], &[1.0, 2.0]]).is_err());
        let m = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.max_abs(), 4.0);
    }
}
