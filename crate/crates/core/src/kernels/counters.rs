//! Per-thread kernel instrumentation.
//!
//! Each kernel invocation records one call, the output rows it produced,
//! the bytes it wrote and its wall time against the calling thread's
//! counters. Worker threads spawned inside a kernel do not record.

use std::cell::RefCell;
use std::fmt;
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    SddmmMul,
    SddmmAdd,
    SddmmDot,
    SpmmSum,
    SpmmMax,
    SpmmMean,
    SddmmBackward,
    SpmmBackward,
    /// Forward weight application.
    Matmul,
    /// Weight and input gradients of dense products.
    MatmulGrad,
    /// Elementwise add / axpy, including optimizer updates.
    Add,
}

impl KernelKind {
    pub const ALL: [KernelKind; 11] = [
        KernelKind::SddmmMul,
        KernelKind::SddmmAdd,
        KernelKind::SddmmDot,
        KernelKind::SpmmSum,
        KernelKind::SpmmMax,
        KernelKind::SpmmMean,
        KernelKind::SddmmBackward,
        KernelKind::SpmmBackward,
        KernelKind::Matmul,
        KernelKind::MatmulGrad,
        KernelKind::Add,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::SddmmMul => "sddmm_mul",
            KernelKind::SddmmAdd => "sddmm_add",
            KernelKind::SddmmDot => "sddmm_dot",
            KernelKind::SpmmSum => "spmm_sum",
            KernelKind::SpmmMax => "spmm_max",
            KernelKind::SpmmMean => "spmm_mean",
            KernelKind::SddmmBackward => "sddmm_backward",
            KernelKind::SpmmBackward => "spmm_backward",
            KernelKind::Matmul => "matmul",
            KernelKind::MatmulGrad => "matmul_grad",
            KernelKind::Add => "add",
        }
    }

    /// Whether the kernel belongs to the SDDMM/SpMM families.
    pub fn is_sparse(self) -> bool {
        !matches!(self, KernelKind::Matmul | KernelKind::MatmulGrad | KernelKind::Add)
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KernelCounter {
    pub calls: u64,
    pub rows: u64,
    pub bytes_written: u64,
    pub elapsed: Duration,
}

/// Snapshot of all counters of the current thread.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KernelStats {
    counters: [KernelCounter; 11],
}

impl KernelStats {
    pub fn get(&self, kind: KernelKind) -> KernelCounter {
        self.counters[kind.index()]
    }

    pub fn total_elapsed(&self) -> Duration {
        self.counters.iter().map(|c| c.elapsed).sum()
    }

    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &KernelStats) -> KernelStats {
        let mut out = self.clone();
        for (o, e) in out.counters.iter_mut().zip(&earlier.counters) {
            o.calls -= e.calls;
            o.rows -= e.rows;
            o.bytes_written -= e.bytes_written;
            o.elapsed = o.elapsed.saturating_sub(e.elapsed);
        }
        out
    }

    /// Time breakdown as CSV: `kernel,calls,rows,bytes_written,seconds,fraction`.
    pub fn to_csv(&self) -> String {
        let total = self.total_elapsed().as_secs_f64();
        let mut out = String::from("kernel,calls,rows,bytes_written,seconds,fraction\n");
        for kind in KernelKind::ALL {
            let c = self.get(kind);
            let secs = c.elapsed.as_secs_f64();
            let frac = if total > 0.0 { secs / total } else { 0.0 };
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.4}\n",
                kind, c.calls, c.rows, c.bytes_written, secs, frac
            ));
        }
        out
    }
}

thread_local! {
    static STATS: RefCell<KernelStats> = RefCell::new(KernelStats::default());
}

pub fn snapshot() -> KernelStats {
    STATS.with(|s| s.borrow().clone())
}

pub fn reset() {
    STATS.with(|s| *s.borrow_mut() = KernelStats::default());
}

pub(crate) fn record(kind: KernelKind, rows: usize, bytes: usize, elapsed: Duration) {
    STATS.with(|s| {
        let c = &mut s.borrow_mut().counters[kind.index()];
        c.calls += 1;
        c.rows += rows as u64;
        c.bytes_written += bytes as u64;
        c.elapsed += elapsed;
    });
}

/// Run `f`, attributing its wall time and output size to `kind`.
pub(crate) fn timed<R>(kind: KernelKind, rows: usize, bytes: usize, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    record(kind, rows, bytes, start.elapsed());
    r
}
