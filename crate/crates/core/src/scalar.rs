//! Floating-point element types usable by the kernels.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of embedding and message matrices.
///
/// `f32` is the working type; `f64` exists for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    /// Size of one element in bytes.
    const BYTES: usize;

    /// Store `value` into `dst` bypassing the cache hierarchy where the
    /// target supports streaming stores. Falls back to a plain store.
    fn store_streaming(dst: &mut Self, value: Self);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn store_streaming(dst: &mut f32, value: f32) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: `dst` is a valid, aligned, exclusive reference; movnti has no
        // alignment requirement beyond natural alignment of the integer.
        unsafe {
            std::arch::x86_64::_mm_stream_si32(
                dst as *mut f32 as *mut i32,
                value.to_bits() as i32,
            );
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            *dst = value;
        }
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn store_streaming(dst: &mut f64, value: f64) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: as for f32.
        unsafe {
            std::arch::x86_64::_mm_stream_si64(
                dst as *mut f64 as *mut i64,
                value.to_bits() as i64,
            );
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            *dst = value;
        }
    }
}

/// Whether this build emits real streaming (non-temporal) stores.
pub const fn streaming_stores_available() -> bool {
    cfg!(target_arch = "x86_64")
}

/// Orders previously issued streaming stores before subsequent stores.
#[inline]
pub fn streaming_fence() {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: sfence has no preconditions.
    unsafe {
        std::arch::x86_64::_mm_sfence();
    }
}
