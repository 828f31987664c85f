//! Arithmetic memory-footprint estimate for full-graph message passing.

use crate::error::{Error, Result};

/// Vertex and edge counts of a (sub)graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphStats {
    pub vertices: u64,
    pub edges: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FootprintOptions {
    /// Backward pass doubles the forward buffers.
    pub training: bool,
    pub bytes_per_element: u64,
    /// One edge-message buffer serves both aggregation directions. When
    /// false the per-edge product is materialized once per direction.
    pub reuse_sddmm: bool,
}

impl Default for FootprintOptions {
    fn default() -> Self {
        Self {
            training: true,
            bytes_per_element: 4,
            reuse_sddmm: true,
        }
    }
}

/// Bytes needed by `layers` message-passing layers of width `dim`:
/// per layer one `|E| x d` message buffer plus `|V| x d` aggregation and
/// updated-embedding buffers.
pub fn memory_footprint_estimate(
    stats: GraphStats,
    layers: u64,
    dim: u64,
    opts: FootprintOptions,
) -> Result<u64> {
    let overflow = || Error::Overflow("memory footprint exceeds u64".into());
    let message_copies = if opts.reuse_sddmm { 1 } else { 2 };
    let messages = dim
        .checked_mul(stats.edges)
        .and_then(|v| v.checked_mul(message_copies))
        .ok_or_else(overflow)?;
    let vertex_bufs = dim
        .checked_mul(stats.vertices)
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(overflow)?;
    let per_layer = messages.checked_add(vertex_bufs).ok_or_else(overflow)?;
    let passes = if opts.training { 2 } else { 1 };
    per_layer
        .checked_mul(layers)
        .and_then(|v| v.checked_mul(opts.bytes_per_element))
        .and_then(|v| v.checked_mul(passes))
        .ok_or_else(overflow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medium_graph_three_layers() {
        let stats = GraphStats {
            vertices: 1_000_000,
            edges: 300_000_000,
        };
        let bytes = memory_footprint_estimate(stats, 3, 128, FootprintOptions::default()).unwrap();
        // 4 * 3 * (128 * 3e8 + 2 * 128 * 1e6) * 2
        assert_eq!(bytes, 927_744_000_000);
    }

    #[test]
    fn zero_layers_and_training_ratio() {
        let stats = GraphStats {
            vertices: 10,
            edges: 30,
        };
        assert_eq!(
            memory_footprint_estimate(stats, 0, 64, FootprintOptions::default()).unwrap(),
            0
        );
        let train = memory_footprint_estimate(stats, 2, 8, FootprintOptions::default()).unwrap();
        let infer = memory_footprint_estimate(
            stats,
            2,
            8,
            FootprintOptions {
                training: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(train, 2 * infer);
    }

    #[test]
    fn no_reuse_counts_messages_twice() {
        let stats = GraphStats {
            vertices: 0,
            edges: 5,
        };
        let opts = FootprintOptions {
            training: false,
            bytes_per_element: 1,
            reuse_sddmm: false,
        };
        assert_eq!(memory_footprint_estimate(stats, 1, 1, opts).unwrap(), 10);
    }

    #[test]
    fn overflow_is_an_error() {
        let stats = GraphStats {
            vertices: u64::MAX / 2,
            edges: 1,
        };
        assert!(matches!(
            memory_footprint_estimate(stats, 3, 128, FootprintOptions::default()),
            Err(Error::Overflow(_))
        ));
    }
}
